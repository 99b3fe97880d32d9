//! Planted-partition citation graphs with binary bag-of-words features.
//!
//! Used by tests, benchmarks and demos where the real datasets are not at
//! hand. Each class owns a block of "topic" words; documents mix topic
//! words with background vocabulary, and citations prefer same-class
//! endpoints with probability `homophily`.

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::citegraph::CitationGraph;
use crate::error::{NodeNetError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_nodes: usize,
    pub num_classes: usize,
    pub vocabulary: usize,
    pub words_per_doc: usize,
    /// Probability a word is drawn from the document's class topic.
    pub topic_strength: f64,
    /// Probability a citation joins two nodes of the same class.
    pub homophily: f64,
    pub mean_degree: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_nodes: 600,
            num_classes: 4,
            vocabulary: 400,
            words_per_doc: 16,
            topic_strength: 0.3,
            homophily: 0.85,
            mean_degree: 4.0,
            seed: 0,
        }
    }
}

pub fn generate(spec: &SyntheticSpec) -> Result<CitationGraph> {
    if spec.num_classes < 2 || spec.num_nodes < spec.num_classes {
        return Err(NodeNetError::InvalidInput(
            "need at least 2 classes and one node per class".into(),
        ));
    }
    if spec.vocabulary < spec.num_classes
        || spec.words_per_doc == 0
        || spec.words_per_doc > spec.vocabulary
    {
        return Err(NodeNetError::InvalidInput(
            "vocabulary too small for the requested documents".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.num_nodes;
    let labels: Vec<usize> = (0..n).map(|i| i % spec.num_classes).collect();
    let block = spec.vocabulary / spec.num_classes;

    let mut features = Array2::zeros((n, spec.vocabulary));
    for (i, &y) in labels.iter().enumerate() {
        let mut words = BTreeSet::new();
        while words.len() < spec.words_per_doc {
            let w = if rng.random::<f64>() < spec.topic_strength {
                y * block + rng.random_range(0..block)
            } else {
                rng.random_range(0..spec.vocabulary)
            };
            words.insert(w);
        }
        for w in words {
            features[[i, w]] = 1.0;
        }
    }

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); spec.num_classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let num_edges = (spec.mean_degree * n as f64 / 2.0).round() as usize;
    let mut edges = BTreeSet::new();
    let mut attempts = 0;
    while edges.len() < num_edges && attempts < num_edges * 20 {
        attempts += 1;
        let u = rng.random_range(0..n);
        let v = if rng.random::<f64>() < spec.homophily {
            *by_class[labels[u]]
                .choose(&mut rng)
                .expect("non-empty class")
        } else {
            rng.random_range(0..n)
        };
        if u != v {
            edges.insert((u.min(v), u.max(v)));
        }
    }

    CitationGraph::new(
        (0..n).map(|i| format!("doc{i}")).collect(),
        features,
        labels,
        (0..spec.num_classes)
            .map(|c| format!("topic_{c}"))
            .collect(),
        edges,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_binary() {
        let spec = SyntheticSpec {
            num_nodes: 60,
            ..SyntheticSpec::default()
        };
        let a = generate(&spec).unwrap();
        assert_eq!(a, generate(&spec).unwrap());
        assert!(a.features().iter().all(|&x| x == 0.0 || x == 1.0));
        assert_eq!(a.num_classes(), 4);
        for row in a.features().rows() {
            assert_eq!(row.sum(), spec.words_per_doc as f64);
        }
    }
}
