//! Modified TF-IDF features for binary bag-of-words documents.
//!
//! Word counts are not available for binary datasets, so a document's
//! weight for a present term is its smooth IDF divided by the number of
//! terms the document contains:
//!
//! ```text
//! idf[j]       = log(N / (1 + df[j])) + 1
//! mtfidf[i][j] = idf[j] / n_i      if x[i][j] present, else 0
//! ```

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::citegraph::CitationGraph;
use crate::error::{NodeNetError, Result};

/// Logarithm used by the IDF weight.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogBase {
    #[default]
    Natural,
    Ten,
}

impl LogBase {
    fn apply(self, x: f64) -> f64 {
        match self {
            LogBase::Natural => x.ln(),
            LogBase::Ten => x.log10(),
        }
    }
}

/// Feature transform applied before training.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// Features used as loaded (datasets that already ship TF-IDF).
    #[default]
    Identity,
    /// Modified TF-IDF over binary features.
    Mtfidf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdfModel {
    pub idf: Vec<f64>,
    pub num_documents: usize,
    pub doc_frequency: Vec<usize>,
    pub log_base: LogBase,
}

impl IdfModel {
    pub fn num_terms(&self) -> usize {
        self.idf.len()
    }
}

/// Fits smooth IDF weights. Any entry `> 0` counts as presence.
pub fn fit_idf(binary_features: ArrayView2<'_, f64>, log_base: LogBase) -> Result<IdfModel> {
    let (n, f) = binary_features.dim();
    if n == 0 || f == 0 {
        return Err(NodeNetError::InvalidInput(format!(
            "cannot fit IDF on an empty {n}x{f} matrix"
        )));
    }
    let doc_frequency: Vec<usize> = binary_features
        .columns()
        .into_iter()
        .map(|col| col.iter().filter(|&&x| x > 0.0).count())
        .collect();
    let idf = doc_frequency
        .iter()
        .map(|&df| log_base.apply(n as f64 / (1.0 + df as f64)) + 1.0)
        .collect();
    Ok(IdfModel {
        idf,
        num_documents: n,
        doc_frequency,
        log_base,
    })
}

/// Applies the modified TF-IDF weighting. Empty documents stay all-zero.
pub fn transform_mtfidf(
    binary_features: ArrayView2<'_, f64>,
    model: &IdfModel,
) -> Result<Array2<f64>> {
    if binary_features.ncols() != model.num_terms() {
        return Err(NodeNetError::Shape(format!(
            "features have {} columns, IDF model has {} terms",
            binary_features.ncols(),
            model.num_terms()
        )));
    }
    let mut out = Array2::zeros(binary_features.raw_dim());
    Zip::from(out.rows_mut())
        .and(binary_features.rows())
        .for_each(|mut out_row, in_row| {
            let n_terms = in_row.iter().filter(|&&x| x > 0.0).count();
            if n_terms == 0 {
                return;
            }
            let scale = 1.0 / n_terms as f64;
            for ((o, &x), &w) in out_row.iter_mut().zip(in_row).zip(&model.idf) {
                if x > 0.0 {
                    *o = w * scale;
                }
            }
        });
    Ok(out)
}

fn is_binary(features: &Array2<f64>) -> bool {
    features.iter().all(|&x| x == 0.0 || x == 1.0)
}

/// Featurizes a whole graph. IDF is fit on every node (transductive).
pub fn featurize_dataset(
    graph: &CitationGraph,
    mode: FeatureMode,
    log_base: LogBase,
) -> Result<CitationGraph> {
    match mode {
        FeatureMode::Identity => Ok(graph.clone()),
        FeatureMode::Mtfidf => {
            if !is_binary(graph.features()) {
                return Err(NodeNetError::InvalidInput(
                    "modified TF-IDF requires binary features; use identity for real-valued inputs"
                        .into(),
                ));
            }
            let model = fit_idf(graph.features().view(), log_base)?;
            let features = transform_mtfidf(graph.features().view(), &model)?;
            graph.with_features(features)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn idf_values_for_three_documents() {
        // term 0 in all 3, term 1 in 2, term 2 in none
        let x = array![[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [1.0, 0.0, 0.0]];
        let m = fit_idf(x.view(), LogBase::Natural).unwrap();
        assert_eq!(m.doc_frequency, vec![3, 2, 0]);
        assert_abs_diff_eq!(m.idf[0], 0.712_317_927_548_219_5, epsilon = 1e-12);
        assert_abs_diff_eq!(m.idf[1], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.idf[2], 2.098_612_288_668_11, epsilon = 1e-12);
    }

    #[test]
    fn toy_corpus_first_row() {
        // term 0 in 2 docs, term 1 in 1 doc
        let x = array![
            [1.0, 1.0, 0.0, 0.0],
            [1.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0, 1.0]
        ];
        let m = fit_idf(x.view(), LogBase::Natural).unwrap();
        let out = transform_mtfidf(x.view(), &m).unwrap();
        assert_abs_diff_eq!(out[[0, 0]], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(out[[0, 1]], 0.702_732_554_054_082_2, epsilon = 1e-12);
        assert_eq!(out[[0, 2]], 0.0);
        assert_eq!(out[[0, 3]], 0.0);
    }

    #[test]
    fn empty_document_maps_to_zero_row() {
        let x = array![[0.0, 0.0], [1.0, 0.0]];
        let m = fit_idf(x.view(), LogBase::Natural).unwrap();
        let out = transform_mtfidf(x.view(), &m).unwrap();
        assert!(out.row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_term_document_gets_its_idf() {
        let x = array![[0.0, 1.0, 0.0], [1.0, 1.0, 1.0]];
        let m = fit_idf(x.view(), LogBase::Natural).unwrap();
        let out = transform_mtfidf(x.view(), &m).unwrap();
        assert_eq!(out.row(0).to_vec(), vec![0.0, m.idf[1], 0.0]);
    }

    #[test]
    fn empty_matrix_is_rejected() {
        assert!(fit_idf(Array2::<f64>::zeros((0, 3)).view(), LogBase::Natural).is_err());
        assert!(fit_idf(Array2::<f64>::zeros((3, 0)).view(), LogBase::Natural).is_err());
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let x = array![[1.0, 0.0]];
        let m = fit_idf(x.view(), LogBase::Natural).unwrap();
        let wide = array![[1.0, 0.0, 1.0]];
        assert!(matches!(
            transform_mtfidf(wide.view(), &m),
            Err(NodeNetError::Shape(_))
        ));
    }

    #[test]
    fn base_ten_ablation() {
        let mut x = Array2::zeros((20, 1));
        x[[0, 0]] = 1.0;
        let m = fit_idf(x.view(), LogBase::Ten).unwrap();
        // 20 / (1 + 1) = 10
        assert_abs_diff_eq!(m.idf[0], 2.0, epsilon = 1e-15);
    }
}
