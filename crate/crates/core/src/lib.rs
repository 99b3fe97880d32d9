//! Node classification on citation graphs with a graph-regularized
//! feedforward network.
//!
//! The pipeline: load a `.content`/`.cites` dataset ([`citegraph`]),
//! optionally reweight binary features with modified TF-IDF
//! ([`featurize`]), then train a dense network ([`neuralnet`]) on
//! cross-entropy plus a penalty pulling together the latent
//! representations of cited/citing nodes ([`graphloss`], [`trainer`]).
//! Inference needs node features only.

pub mod checkpoint;
pub mod citegraph;
pub mod error;
pub mod featurize;
pub mod graphloss;
pub mod neuralnet;
pub mod sparse;
pub mod synthetic;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use citegraph::{
    load_dataset, make_split, partition_edges, CitationGraph, DatasetStats, EdgePartition,
    LoadedDataset, SplitMasks, SplitStrategy,
};
pub use error::{NodeNetError, Result};
pub use featurize::{featurize_dataset, FeatureMode, LogBase};
pub use graphloss::{GraphLossConfig, Metric, Reduction};
pub use neuralnet::{NetworkConfig, NetworkParameters};
pub use trainer::{train, BatchMode, MetricsLog, TrainConfig, TrainOutcome};
