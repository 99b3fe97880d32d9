//! Implementations checked against independent brute-force oracles.

use std::collections::HashSet;

use ndarray::Array2;
use nodenet_core::citegraph::{
    partition_edges, CitationGraph, EdgeBucket, EdgePartition, SplitMasks, WeightedEdge,
};
use nodenet_core::featurize::{fit_idf, transform_mtfidf, LogBase};
use nodenet_core::graphloss::{graph_regularizer, GraphLossConfig, Metric, Reduction};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Modified TF-IDF straight from the definition, one cell at a time.
#[allow(clippy::needless_range_loop)]
fn mtfidf_oracle(docs: &[Vec<u8>]) -> Vec<Vec<f64>> {
    let n_docs = docs.len();
    let n_terms = docs[0].len();
    let mut out = vec![vec![0.0; n_terms]; n_docs];
    for i in 0..n_docs {
        let mut n_i = 0usize;
        for j in 0..n_terms {
            if docs[i][j] == 1 {
                n_i += 1;
            }
        }
        for j in 0..n_terms {
            if docs[i][j] == 0 {
                continue;
            }
            let mut containing = 0usize;
            for doc in docs {
                if doc[j] == 1 {
                    containing += 1;
                }
            }
            let idf = (n_docs as f64 / (1.0 + containing as f64)).ln() + 1.0;
            out[i][j] = idf / n_i as f64;
        }
    }
    out
}

#[test]
fn mtfidf_matches_oracle_on_random_corpus() {
    let mut rng = ChaCha8Rng::seed_from_u64(2020);
    for density in [0.05, 0.2, 0.5] {
        let docs: Vec<Vec<u8>> = (0..50)
            .map(|_| {
                (0..80)
                    .map(|_| u8::from(rng.random::<f64>() < density))
                    .collect()
            })
            .collect();
        let x = Array2::from_shape_fn((50, 80), |(i, j)| f64::from(docs[i][j]));
        let model = fit_idf(x.view(), LogBase::Natural).unwrap();
        let got = transform_mtfidf(x.view(), &model).unwrap();
        let want = mtfidf_oracle(&docs);
        for i in 0..50 {
            for j in 0..80 {
                assert!((got[[i, j]] - want[i][j]).abs() <= 1e-12, "cell ({i},{j})");
            }
        }
    }
}

#[test]
fn toy_corpus_matches_hand_oracle() {
    let docs = vec![vec![1, 1, 0, 0], vec![1, 0, 1, 0], vec![0, 0, 1, 1]];
    let x = Array2::from_shape_fn((3, 4), |(i, j)| f64::from(docs[i][j]));
    let model = fit_idf(x.view(), LogBase::Natural).unwrap();
    let got = transform_mtfidf(x.view(), &model).unwrap();
    let want = mtfidf_oracle(&docs);
    for i in 0..3 {
        for j in 0..4 {
            assert!((got[[i, j]] - want[i][j]).abs() <= 1e-12);
        }
    }
}

fn random_graph(n: usize, k: usize, edge_prob: f64, rng: &mut ChaCha8Rng) -> CitationGraph {
    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < edge_prob {
                edges.push((u, v));
            }
        }
    }
    CitationGraph::new(
        (0..n).map(|i| format!("n{i}")).collect(),
        Array2::zeros((n, 1)),
        labels,
        (0..k).map(|c| format!("c{c}")).collect(),
        edges,
    )
    .unwrap()
}

fn random_masks(n: usize, k: usize, rng: &mut ChaCha8Rng) -> SplitMasks {
    let mut train: Vec<usize> = (0..k).collect();
    let (mut val, mut test) = (Vec::new(), Vec::new());
    for i in k..n {
        match rng.random_range(0..4) {
            0 => train.push(i),
            1 => val.push(i),
            2 => test.push(i),
            _ => {}
        }
    }
    SplitMasks {
        train_idx: train,
        val_idx: val,
        test_idx: test,
    }
}

#[test]
fn partition_matches_per_edge_recheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for trial in 0..100 {
        let n = rng.random_range(6..40);
        let g = random_graph(n, 3, 0.15, &mut rng);
        let masks = random_masks(n, 3, &mut rng);
        let part = partition_edges(&g, &masks, 1.0);
        assert_eq!(part.len(), g.edges().len(), "trial {trial}");
        let train: HashSet<usize> = masks.train_idx.iter().copied().collect();
        let as_set =
            |edges: &[WeightedEdge]| edges.iter().map(|e| (e.u, e.v)).collect::<HashSet<_>>();
        let (ll, lu, uu) = (as_set(&part.ll), as_set(&part.lu), as_set(&part.uu));
        for &(u, v) in g.edges() {
            let labeled = usize::from(train.contains(&u)) + usize::from(train.contains(&v));
            let expected = match labeled {
                2 => &ll,
                1 => &lu,
                _ => &uu,
            };
            assert!(expected.contains(&(u, v)), "trial {trial}: edge ({u},{v})");
        }
        assert!(part
            .ll
            .iter()
            .chain(&part.lu)
            .chain(&part.uu)
            .all(|e| e.weight == 1.0));
    }
}

/// Regularizer summed edge by edge from the metric definitions.
fn regularizer_oracle(latents: &Array2<f64>, part: &EdgePartition, cfg: &GraphLossConfig) -> f64 {
    let mut total = 0.0;
    for (bucket, alpha) in [
        (EdgeBucket::LabeledLabeled, cfg.alpha_ll),
        (EdgeBucket::LabeledUnlabeled, cfg.alpha_lu),
        (EdgeBucket::UnlabeledUnlabeled, cfg.alpha_uu),
    ] {
        let edges = part.bucket(bucket);
        let mut sum = 0.0;
        for e in edges {
            let a = latents.row(e.u);
            let b = latents.row(e.v);
            let d = match cfg.metric {
                Metric::L1 => a
                    .iter()
                    .zip(b.iter())
                    .map(|(x, y)| (x - y).abs())
                    .sum::<f64>(),
                Metric::L2 => a
                    .iter()
                    .zip(b.iter())
                    .map(|(x, y)| (x - y).powi(2))
                    .sum::<f64>()
                    .sqrt(),
                Metric::CosinePenalty | Metric::CosineSimilarity => {
                    let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
                    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let cos = dot / (na * nb);
                    if cfg.metric == Metric::CosinePenalty {
                        1.0 - cos
                    } else {
                        cos
                    }
                }
            };
            sum += e.weight * d;
        }
        let reduced = match cfg.reduction {
            Reduction::Sum => sum,
            Reduction::Mean if edges.is_empty() => 0.0,
            Reduction::Mean => sum / edges.len() as f64,
        };
        total += alpha * reduced;
    }
    total
}

#[test]
fn regularizer_matches_edge_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let e = |u, v| WeightedEdge { u, v, weight: 1.0 };
    let part = EdgePartition {
        ll: vec![e(0, 1)],
        lu: vec![e(1, 2), e(0, 4)],
        uu: vec![e(2, 3), e(3, 4)],
    };
    for metric in [
        Metric::L1,
        Metric::L2,
        Metric::CosinePenalty,
        Metric::CosineSimilarity,
    ] {
        for reduction in [Reduction::Mean, Reduction::Sum] {
            for _ in 0..20 {
                let latents = Array2::from_shape_simple_fn((5, 6), || rng.random_range(-1.0..1.0));
                let cfg = GraphLossConfig {
                    alpha_ll: rng.random_range(0.0..2.0),
                    alpha_lu: rng.random_range(0.0..2.0),
                    alpha_uu: rng.random_range(0.0..2.0),
                    metric,
                    reduction,
                    ..GraphLossConfig::default()
                };
                let (got, _) = graph_regularizer(latents.view(), &part, &cfg).unwrap();
                let want = regularizer_oracle(&latents, &part, &cfg);
                assert!(
                    (got - want).abs() <= 1e-12,
                    "{metric} {reduction:?}: {got} vs {want}"
                );
            }
        }
    }
}

#[test]
fn regularizer_is_additive_over_buckets() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let g = random_graph(30, 3, 0.2, &mut rng);
    let masks = random_masks(30, 3, &mut rng);
    let part = partition_edges(&g, &masks, 1.0);
    let latents = Array2::from_shape_simple_fn((30, 4), || rng.random_range(-1.0..1.0));
    let cfg = GraphLossConfig::default().with_alphas(0.3, 0.6, 0.9);
    let (whole, _) = graph_regularizer(latents.view(), &part, &cfg).unwrap();
    let pieces: f64 = [
        EdgeBucket::LabeledLabeled,
        EdgeBucket::LabeledUnlabeled,
        EdgeBucket::UnlabeledUnlabeled,
    ]
    .iter()
    .map(|&b| {
        graph_regularizer(latents.view(), &part.only(b), &cfg)
            .unwrap()
            .0
    })
    .sum();
    assert!((whole - pieces).abs() <= 1e-12);
}
