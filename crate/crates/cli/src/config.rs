//! Run configuration: a flat TOML document with dotted keys.
//!
//! ```text
//! dataset.name = "cora"
//! loss.alpha_ll = 0.5
//! run.seeds = [0, 1, 2, 3, 4]
//! ```
//!
//! Section tables (`[loss]`) are accepted too. `--set key=value` overrides
//! are merged on top, and `NODENET_OUTPUT_DIR` replaces `run.output_dir`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use nodenet_core::citegraph::SplitStrategy;
use nodenet_core::neuralnet::Activation;
use nodenet_core::{
    BatchMode, FeatureMode, GraphLossConfig, LogBase, Metric, NetworkConfig, Reduction, TrainConfig,
};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

pub const OUTPUT_DIR_ENV: &str = "NODENET_OUTPUT_DIR";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    pub features: FeaturesSection,
    pub split: SplitSection,
    pub network: NetworkSection,
    pub loss: LossSection,
    pub train: TrainSection,
    pub run: RunSection,
    pub gradcheck: GradcheckSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub name: String,
    pub content: PathBuf,
    pub cites: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesSection {
    pub mode: FeatureMode,
    pub log_base: LogBase,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    #[default]
    Planetoid,
    Stratified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub kind: SplitKind,
    pub train_per_class: usize,
    pub val_count: usize,
    pub test_count: usize,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    /// Fixed split seed; when absent each run seed draws its own split.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub batchnorm: bool,
    pub activation: Activation,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
    /// Hidden layer feeding the graph loss; defaults to the last one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latent_layer: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub alpha_ll: f64,
    pub alpha_lu: f64,
    pub alpha_uu: f64,
    pub metric: Metric,
    pub reduction: Reduction,
    pub cosine_epsilon: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchKind {
    #[default]
    Full,
    EdgeSampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub epochs: usize,
    pub patience: usize,
    pub weight_decay: f64,
    pub batch_mode: BatchKind,
    pub batch_edges: usize,
    pub record_wall_clock: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Published test accuracy for this setting; the aggregate reports the gap.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSection {
    pub nodes: usize,
    pub features: usize,
    pub classes: usize,
    pub seed: u64,
    /// Added to one analytic gradient entry to exercise the failure path.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inject_fault: Option<f64>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            name: "dataset".into(),
            content: PathBuf::new(),
            cites: PathBuf::new(),
        }
    }
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            kind: SplitKind::Planetoid,
            train_per_class: 20,
            val_count: 500,
            test_count: 1000,
            train_fraction: 0.6,
            val_fraction: 0.2,
            test_fraction: 0.2,
            seed: None,
        }
    }
}

impl Default for NetworkSection {
    fn default() -> Self {
        let net = NetworkConfig::new(1, 2);
        Self {
            hidden: net.layer_widths[1..net.layer_widths.len() - 1].to_vec(),
            dropout: net.dropout_rate,
            batchnorm: true,
            activation: net.activation,
            bn_epsilon: net.bn_epsilon,
            bn_momentum: net.bn_momentum,
            latent_layer: None,
        }
    }
}

impl Default for LossSection {
    fn default() -> Self {
        let loss = GraphLossConfig::default();
        Self {
            alpha_ll: loss.alpha_ll,
            alpha_lu: loss.alpha_lu,
            alpha_uu: loss.alpha_uu,
            metric: loss.metric,
            reduction: loss.reduction,
            cosine_epsilon: loss.cosine_epsilon,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            adam_epsilon: t.adam_epsilon,
            epochs: t.epochs,
            patience: t.patience,
            weight_decay: t.weight_decay,
            batch_mode: BatchKind::Full,
            batch_edges: 512,
            record_wall_clock: t.record_wall_clock,
        }
    }
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seeds: vec![0],
            output_dir: PathBuf::from("runs"),
            reference_accuracy: None,
        }
    }
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self {
            nodes: 12,
            features: 5,
            classes: 3,
            seed: 0,
            inject_fault: None,
        }
    }
}

/// Parses a `key=value` override. Values that are not valid TOML are
/// taken as bare strings, so `--set dataset.name=cora` works unquoted.
pub fn parse_override(item: &str) -> Result<(String, Value)> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| anyhow!("override {item:?} is not of the form key=value"))?;
    let key = key.trim();
    if key.is_empty() {
        bail!("override {item:?} has an empty key");
    }
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_string()),
    };
    Ok((key.to_string(), value))
}

fn set_dotted(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let leaf = parts.pop().expect("split yields one part");
    let mut cur = table;
    for part in parts {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("cannot set {key}: {part} is not a section"))?;
    }
    cur.insert(leaf.to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_table(text.parse::<Table>().context("config is not valid TOML")?)
    }

    fn from_table(table: Table) -> Result<Self> {
        let config: RunConfig = Value::Table(table).try_into().context("invalid config")?;
        Ok(config)
    }

    /// Loads a config file (or defaults), then applies overrides and the
    /// output-directory environment variable.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?
                .parse::<Table>()
                .with_context(|| format!("parsing config {}", p.display()))?,
            None => Table::new(),
        };
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
            let dir = dir
                .into_string()
                .map_err(|_| anyhow!("{OUTPUT_DIR_ENV} is not valid UTF-8"))?;
            set_dotted(&mut table, "run.output_dir", Value::String(dir))?;
        }
        for item in overrides {
            let (key, value) = parse_override(item)?;
            set_dotted(&mut table, &key, value)?;
        }
        Self::from_table(table)
    }

    /// Flat `key = value` lines in section order.
    pub fn to_flat_toml(&self) -> Result<String> {
        let value = Value::try_from(self).context("serializing config")?;
        let mut out = String::new();
        flatten(&value, "", &mut out);
        Ok(out)
    }

    pub fn network_config(&self, num_features: usize, num_classes: usize) -> NetworkConfig {
        let mut net = NetworkConfig::with_hidden(num_features, &self.network.hidden, num_classes);
        net.dropout_rate = self.network.dropout;
        net.batchnorm = vec![self.network.batchnorm; self.network.hidden.len()];
        net.activation = self.network.activation;
        net.bn_epsilon = self.network.bn_epsilon;
        net.bn_momentum = self.network.bn_momentum;
        if let Some(l) = self.network.latent_layer {
            net.latent_layer = l;
        }
        net
    }

    pub fn loss_config(&self) -> GraphLossConfig {
        GraphLossConfig {
            alpha_ll: self.loss.alpha_ll,
            alpha_lu: self.loss.alpha_lu,
            alpha_uu: self.loss.alpha_uu,
            metric: self.loss.metric,
            cosine_epsilon: self.loss.cosine_epsilon,
            reduction: self.loss.reduction,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            adam_epsilon: t.adam_epsilon,
            epochs: t.epochs,
            patience: t.patience,
            seed,
            batch_mode: match t.batch_mode {
                BatchKind::Full => BatchMode::Full,
                BatchKind::EdgeSampled => BatchMode::EdgeSampled {
                    batch_edges: t.batch_edges,
                },
            },
            weight_decay: t.weight_decay,
            record_wall_clock: t.record_wall_clock,
        }
    }

    pub fn split_strategy(&self) -> SplitStrategy {
        let s = &self.split;
        match s.kind {
            SplitKind::Planetoid => SplitStrategy::Planetoid {
                train_per_class: s.train_per_class,
                val: s.val_count,
                test: s.test_count,
            },
            SplitKind::Stratified => SplitStrategy::Stratified {
                train: s.train_fraction,
                val: s.val_fraction,
                test: s.test_fraction,
            },
        }
    }

    pub fn split_seed(&self, run_seed: u64) -> u64 {
        self.split.seed.unwrap_or(run_seed)
    }

    /// Checks the dataset files exist and the seed list is usable.
    pub fn validate_for_dataset(&self) -> Result<()> {
        for (key, path) in [
            ("dataset.content", &self.dataset.content),
            ("dataset.cites", &self.dataset.cites),
        ] {
            if path.as_os_str().is_empty() {
                bail!("{key} is not set");
            }
            if !path.is_file() {
                bail!("{key} = {} does not exist", path.display());
            }
        }
        if self.run.seeds.is_empty() {
            bail!("run.seeds must list at least one seed");
        }
        Ok(())
    }

    /// `baseline` when every alpha is zero, otherwise the metric name.
    pub fn run_label(&self) -> &'static str {
        if self.loss_config().is_disabled() {
            "baseline"
        } else {
            self.loss.metric.name()
        }
    }
}

fn flatten(value: &Value, prefix: &str, out: &mut String) {
    match value {
        Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                if let Value::Table(_) = v {
                    flatten(v, &key, out);
                    if prefix.is_empty() {
                        out.push('\n');
                    }
                } else {
                    writeln!(out, "{key} = {v}").expect("writing to a string");
                }
            }
        }
        other => {
            writeln!(out, "{prefix} = {other}").expect("writing to a string");
        }
    }
}
