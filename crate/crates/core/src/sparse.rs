//! Compressed sparse row matrices for bag-of-words inputs.

use ndarray::{Array2, ArrayView2};

/// Inputs with at most this fraction of non-zeros take the sparse path.
pub const SPARSE_DENSITY_THRESHOLD: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_dense(x: ArrayView2<'_, f64>) -> Self {
        let (nrows, ncols) = x.dim();
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in x.rows() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    indices.push(j);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    /// Fraction of non-zero entries of a dense matrix.
    pub fn density(x: ArrayView2<'_, f64>) -> f64 {
        if x.is_empty() {
            return 0.0;
        }
        x.iter().filter(|&&v| v != 0.0).count() as f64 / x.len() as f64
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn dim(&self) -> (usize, usize) {
        (self.nrows, self.ncols)
    }

    /// `self * rhs`, accumulating non-zeros of each row in column order.
    pub fn dot(&self, rhs: &Array2<f64>) -> Array2<f64> {
        assert_eq!(self.ncols, rhs.nrows(), "inner dimensions differ");
        let rhs = rhs.as_standard_layout();
        let width = rhs.ncols();
        let src = rhs.as_slice().expect("standard layout");
        let mut out = Array2::zeros((self.nrows, width));
        let dst = out.as_slice_mut().expect("fresh array");
        for i in 0..self.nrows {
            let out_row = &mut dst[i * width..(i + 1) * width];
            for k in self.indptr[i]..self.indptr[i + 1] {
                let (v, j) = (self.values[k], self.indices[k]);
                for (o, &r) in out_row.iter_mut().zip(&src[j * width..(j + 1) * width]) {
                    *o += v * r;
                }
            }
        }
        out
    }

    /// `self^T * rhs`, accumulating rows in order.
    pub fn transpose_dot(&self, rhs: &Array2<f64>) -> Array2<f64> {
        assert_eq!(self.nrows, rhs.nrows(), "row counts differ");
        let rhs = rhs.as_standard_layout();
        let width = rhs.ncols();
        let src = rhs.as_slice().expect("standard layout");
        let mut out = Array2::zeros((self.ncols, width));
        let dst = out.as_slice_mut().expect("fresh array");
        for i in 0..self.nrows {
            let src_row = &src[i * width..(i + 1) * width];
            for k in self.indptr[i]..self.indptr[i + 1] {
                let (v, j) = (self.values[k], self.indices[k]);
                for (o, &r) in dst[j * width..(j + 1) * width].iter_mut().zip(src_row) {
                    *o += v * r;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn products_match_dense() {
        let x = array![
            [0.0, 1.5, 0.0],
            [2.0, 0.0, 0.0],
            [0.0, 0.0, 0.0],
            [1.0, -1.0, 3.0]
        ];
        let w = array![[1.0, 2.0], [0.5, -1.0], [3.0, 0.25]];
        let g = array![[1.0, 0.0], [0.5, 2.0], [7.0, 7.0], [-1.0, 1.0]];
        let csr = CsrMatrix::from_dense(x.view());
        assert_eq!(csr.nnz(), 5);
        assert_eq!(csr.dot(&w), x.dot(&w));
        assert_eq!(csr.transpose_dot(&g), x.t().dot(&g));
        assert_eq!(CsrMatrix::density(x.view()), 5.0 / 12.0);
    }
}
