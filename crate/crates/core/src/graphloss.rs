//! Graph regularization over latent representations.
//!
//! The full objective is the supervised loss plus, for each edge bucket
//! (LL, LU, UU), `alpha_bucket * sum_edges w_uv * d(h_u, h_v)`. With the
//! default [`Reduction::Mean`] each bucket sum is divided by the number
//! of edges in it before the alpha scaling.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::citegraph::{EdgeBucket, EdgePartition};
use crate::error::{NodeNetError, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// `sum |a_i - b_i|`
    L1,
    /// `|a - b|`
    L2,
    /// `1 - cos(a, b)`: zero for aligned vectors, at most 2.
    #[default]
    CosinePenalty,
    /// Raw `cos(a, b)` added to the cost as written, which rewards
    /// dissimilar neighbours. Kept for ablation only.
    CosineSimilarity,
}

impl Metric {
    /// Metrics exercised by the gradient suite.
    pub const CHECKED: [Metric; 3] = [Metric::L1, Metric::L2, Metric::CosinePenalty];

    pub fn name(self) -> &'static str {
        match self {
            Metric::L1 => "l1",
            Metric::L2 => "l2",
            Metric::CosinePenalty => "cosine_penalty",
            Metric::CosineSimilarity => "cosine_similarity",
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Metric {
    type Err = NodeNetError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(Metric::L1),
            "l2" => Ok(Metric::L2),
            "cosine_penalty" | "cosine" => Ok(Metric::CosinePenalty),
            "cosine_similarity" => Ok(Metric::CosineSimilarity),
            other => Err(NodeNetError::Config(format!("unknown metric {other:?}"))),
        }
    }
}

/// How edge terms within a bucket are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Average over the bucket's edges.
    #[default]
    Mean,
    /// Plain sum over edges.
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphLossConfig {
    pub alpha_ll: f64,
    pub alpha_lu: f64,
    pub alpha_uu: f64,
    pub metric: Metric,
    pub cosine_epsilon: f64,
    pub reduction: Reduction,
}

impl Default for GraphLossConfig {
    fn default() -> Self {
        Self {
            alpha_ll: 0.1,
            alpha_lu: 0.1,
            alpha_uu: 0.1,
            metric: Metric::CosinePenalty,
            cosine_epsilon: 1e-12,
            reduction: Reduction::Mean,
        }
    }
}

impl GraphLossConfig {
    /// All alphas zero: a plain classifier.
    pub fn disabled() -> Self {
        Self {
            alpha_ll: 0.0,
            alpha_lu: 0.0,
            alpha_uu: 0.0,
            ..Self::default()
        }
    }

    pub fn with_alphas(mut self, ll: f64, lu: f64, uu: f64) -> Self {
        self.alpha_ll = ll;
        self.alpha_lu = lu;
        self.alpha_uu = uu;
        self
    }

    pub fn alpha(&self, bucket: EdgeBucket) -> f64 {
        match bucket {
            EdgeBucket::LabeledLabeled => self.alpha_ll,
            EdgeBucket::LabeledUnlabeled => self.alpha_lu,
            EdgeBucket::UnlabeledUnlabeled => self.alpha_uu,
        }
    }

    pub fn is_disabled(&self) -> bool {
        self.alpha_ll == 0.0 && self.alpha_lu == 0.0 && self.alpha_uu == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        for (name, a) in [
            ("alpha_ll", self.alpha_ll),
            ("alpha_lu", self.alpha_lu),
            ("alpha_uu", self.alpha_uu),
        ] {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(NodeNetError::Config(format!(
                    "{name} = {a} must be a non-negative number"
                )));
            }
        }
        if self.cosine_epsilon.is_nan() || self.cosine_epsilon <= 0.0 {
            return Err(NodeNetError::Config(
                "cosine_epsilon must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(NodeNetError::Shape(format!(
            "vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(NodeNetError::Shape("empty vectors".into()));
    }
    Ok(())
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity with both norms clamped below at `eps`.
pub fn cosine_similarity(a: &[f64], b: &[f64], eps: f64) -> f64 {
    dot(a, b) / (norm(a).max(eps) * norm(b).max(eps))
}

pub fn metric_value(metric: Metric, a: &[f64], b: &[f64], eps: f64) -> Result<f64> {
    check_lengths(a, b)?;
    Ok(match metric {
        Metric::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        Metric::L2 => a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt(),
        Metric::CosinePenalty => 1.0 - cosine_similarity(a, b, eps),
        Metric::CosineSimilarity => cosine_similarity(a, b, eps),
    })
}

/// Gradient of the cosine similarity with respect to `a`.
fn cosine_grad_first(a: &[f64], b: &[f64], eps: f64) -> Vec<f64> {
    let (na, nb) = (norm(a), norm(b));
    let (ca, cb) = (na.max(eps), nb.max(eps));
    let ab = dot(a, b);
    // a clamped norm is constant in a
    let radial = if na > eps {
        ab / (ca * ca * ca * cb)
    } else {
        0.0
    };
    a.iter()
        .zip(b)
        .map(|(&x, &y)| y / (ca * cb) - radial * x)
        .collect()
}

/// Gradients of [`metric_value`] with respect to `a` and `b`. At kinks
/// (L1 with `a_i == b_i`, L2 with `a == b`) the zero subgradient is used.
pub fn metric_gradient(
    metric: Metric,
    a: &[f64],
    b: &[f64],
    eps: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_lengths(a, b)?;
    Ok(match metric {
        Metric::L1 => {
            let ga: Vec<f64> = a
                .iter()
                .zip(b)
                .map(|(x, y)| {
                    if x > y {
                        1.0
                    } else if x < y {
                        -1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            let gb = ga.iter().map(|g| -g).collect();
            (ga, gb)
        }
        Metric::L2 => {
            let dist = a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            if dist == 0.0 {
                (vec![0.0; a.len()], vec![0.0; a.len()])
            } else {
                let ga: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y) / dist).collect();
                let gb = ga.iter().map(|g| -g).collect();
                (ga, gb)
            }
        }
        Metric::CosineSimilarity => (cosine_grad_first(a, b, eps), cosine_grad_first(b, a, eps)),
        Metric::CosinePenalty => {
            let neg = |v: Vec<f64>| v.into_iter().map(|g| -g).collect::<Vec<_>>();
            (
                neg(cosine_grad_first(a, b, eps)),
                neg(cosine_grad_first(b, a, eps)),
            )
        }
    })
}

/// Per-bucket contributions of one regularizer evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RegularizerBreakdown {
    pub ll: f64,
    pub lu: f64,
    pub uu: f64,
}

impl RegularizerBreakdown {
    pub fn total(&self) -> f64 {
        self.ll + self.lu + self.uu
    }
}

/// Graph regularizer and its gradient when every graph node has a latent
/// row at its own index.
pub fn graph_regularizer(
    latents: ArrayView2<'_, f64>,
    partition: &EdgePartition,
    config: &GraphLossConfig,
) -> Result<(f64, Array2<f64>)> {
    let rows: Vec<Option<usize>> = (0..latents.nrows()).map(Some).collect();
    let (breakdown, grad) = graph_regularizer_rows(latents, &rows, partition, config)?;
    Ok((breakdown.total(), grad))
}

/// Mini-batch form: `row_of[node]` gives the latent row of a graph node,
/// or `None` when the node is not in the batch. Edges with an absent
/// endpoint contribute nothing and are not counted by the mean.
pub fn graph_regularizer_rows(
    latents: ArrayView2<'_, f64>,
    row_of: &[Option<usize>],
    partition: &EdgePartition,
    config: &GraphLossConfig,
) -> Result<(RegularizerBreakdown, Array2<f64>)> {
    let mut grad = Array2::zeros(latents.raw_dim());
    let mut breakdown = RegularizerBreakdown::default();
    if config.is_disabled() {
        return Ok((breakdown, grad));
    }
    let lookup = |node: usize| -> Result<Option<usize>> {
        match row_of.get(node) {
            Some(r) => Ok(*r),
            None => Err(NodeNetError::Shape(format!(
                "edge endpoint {node} has no row mapping"
            ))),
        }
    };
    for (bucket, edges) in partition.buckets() {
        let alpha = config.alpha(bucket);
        if alpha == 0.0 {
            continue;
        }
        let mut active = Vec::with_capacity(edges.len());
        for e in edges {
            if let (Some(ru), Some(rv)) = (lookup(e.u)?, lookup(e.v)?) {
                active.push((ru, rv, e.weight));
            }
        }
        if active.is_empty() {
            continue;
        }
        let scale = match config.reduction {
            Reduction::Mean => alpha / active.len() as f64,
            Reduction::Sum => alpha,
        };
        let mut sum = 0.0;
        for (ru, rv, w) in active {
            let a = latents.row(ru);
            let b = latents.row(rv);
            let (a, b) = (
                a.as_slice().expect("row-major latents"),
                b.as_slice().expect("row-major latents"),
            );
            sum += w * metric_value(config.metric, a, b, config.cosine_epsilon)?;
            let (ga, gb) = metric_gradient(config.metric, a, b, config.cosine_epsilon)?;
            let coef = scale * w;
            for (g, d) in grad.row_mut(ru).iter_mut().zip(&ga) {
                *g += coef * d;
            }
            for (g, d) in grad.row_mut(rv).iter_mut().zip(&gb) {
                *g += coef * d;
            }
        }
        let value = scale * sum;
        match bucket {
            EdgeBucket::LabeledLabeled => breakdown.ll = value,
            EdgeBucket::LabeledUnlabeled => breakdown.lu = value,
            EdgeBucket::UnlabeledUnlabeled => breakdown.uu = value,
        }
    }
    Ok((breakdown, grad))
}

/// Supervised loss plus graph regularizer. Non-finite inputs signal
/// divergence.
pub fn total_cost(supervised_loss: f64, regularizer_value: f64) -> Result<f64> {
    if !supervised_loss.is_finite() || !regularizer_value.is_finite() {
        return Err(NodeNetError::InvalidInput(format!(
            "non-finite cost terms: supervised {supervised_loss}, graph {regularizer_value}"
        )));
    }
    Ok(supervised_loss + regularizer_value)
}
