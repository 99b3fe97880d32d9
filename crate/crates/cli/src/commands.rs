use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nodenet_core::checkpoint::write_atomic;
use nodenet_core::citegraph::format_stats_table;
use nodenet_core::graphloss::Metric;
use nodenet_core::neuralnet::predict;
use nodenet_core::synthetic::{generate, SyntheticSpec};
use nodenet_core::trainer::{
    evaluate, gradient_check_with, GradCheckOptions, GradCheckReport, ToyInstance,
};
use nodenet_core::{
    featurize_dataset, load_dataset, make_split, train, Checkpoint, CitationGraph, DatasetStats,
    NodeNetError,
};

use crate::config::RunConfig;
use crate::pubmed::{self, ConvertSummary};

pub const SUMMARY_HEADER: &str =
    "dataset,metric,alpha_ll,alpha_lu,alpha_uu,seed,best_val_acc,test_acc";
pub const AGGREGATE_HEADER: &str =
    "dataset,metric,alpha_ll,alpha_lu,alpha_uu,seeds,completed,mean_test_acc,std_test_acc,reference_acc,gap";

/// Relative-error bounds for the gradient check.
pub const GRADCHECK_TOL_PLAIN: f64 = 1e-5;
pub const GRADCHECK_TOL_BATCHNORM: f64 = 1e-4;

fn load_graph(config: &RunConfig) -> Result<(CitationGraph, DatasetStats)> {
    config.validate_for_dataset()?;
    let loaded = load_dataset(&config.dataset.content, &config.dataset.cites)?;
    let stats = loaded.stats(&config.dataset.name);
    Ok((loaded.graph, stats))
}

fn featurized(config: &RunConfig) -> Result<CitationGraph> {
    let (graph, _) = load_graph(config)?;
    Ok(featurize_dataset(
        &graph,
        config.features.mode,
        config.features.log_base,
    )?)
}

pub fn cmd_stats(config: &RunConfig) -> Result<DatasetStats> {
    let (_, stats) = load_graph(config)?;
    print!("{}", format_stats_table(std::slice::from_ref(&stats)));
    Ok(stats)
}

/// Outcome of one seed of a `train` run.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    /// `None` when training diverged.
    pub accuracies: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub label: &'static str,
    pub seeds: Vec<SeedResult>,
    pub mean_test_acc: f64,
    pub std_test_acc: f64,
}

impl TrainReport {
    pub fn diverged(&self) -> usize {
        self.seeds.iter().filter(|s| s.accuracies.is_none()).count()
    }
}

pub fn seed_dir(output_dir: &Path, seed: u64) -> PathBuf {
    output_dir.join(format!("seed-{seed}"))
}

/// Mean and sample standard deviation; the deviation is NaN below two values.
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn cmd_train(config: &RunConfig) -> Result<TrainReport> {
    let graph = featurized(config)?;
    let out = &config.run.output_dir;
    let net = config.network_config(graph.num_features(), graph.num_classes());
    let loss = config.loss_config();
    let label = config.run_label();
    let l = &config.loss;
    let prefix = format!(
        "{},{},{},{},{}",
        config.dataset.name, label, l.alpha_ll, l.alpha_lu, l.alpha_uu
    );
    write_atomic(&out.join("config.toml"), config.to_flat_toml()?.as_bytes())?;

    let mut summary = format!("{SUMMARY_HEADER}\n");
    let mut seeds = Vec::new();
    for &seed in &config.run.seeds {
        let masks = make_split(&graph, config.split_strategy(), config.split_seed(seed))?;
        let dir = seed_dir(out, seed);
        let result = match train(&graph, &masks, &net, &loss, &config.train_config(seed)) {
            Ok(outcome) => {
                write_atomic(
                    &dir.join("metrics.csv"),
                    outcome.log.to_csv_string().as_bytes(),
                )?;
                let mut ckpt = Checkpoint::new(net.clone(), seed, outcome.params);
                ckpt.optimizer = Some(outcome.optimizer);
                ckpt.epoch = outcome.log.best_epoch;
                ckpt.save(&dir.join("checkpoint.json"))?;
                let best = outcome.log.best().expect("a finished run has a best epoch");
                SeedResult {
                    seed,
                    accuracies: Some((best.val_acc, best.test_acc)),
                }
            }
            Err(NodeNetError::Diverged { epoch, what }) => {
                eprintln!("seed {seed}: {what} diverged at epoch {epoch}");
                SeedResult {
                    seed,
                    accuracies: None,
                }
            }
            Err(e) => return Err(e).with_context(|| format!("training seed {seed}")),
        };
        let line = match result.accuracies {
            Some((val, test)) => format!("{prefix},{seed},{val},{test}"),
            None => format!("{prefix},{seed},diverged,diverged"),
        };
        println!("{line}");
        summary.push_str(&line);
        summary.push('\n');
        seeds.push(result);
    }
    write_atomic(&out.join("summary.csv"), summary.as_bytes())?;

    let tests: Vec<f64> = seeds
        .iter()
        .filter_map(|s| s.accuracies.map(|a| a.1))
        .collect();
    let (mean, std) = mean_and_std(&tests);
    let (reference, gap) = match config.run.reference_accuracy {
        Some(r) => (r.to_string(), (r - mean).to_string()),
        None => (String::new(), String::new()),
    };
    let aggregate = format!(
        "{AGGREGATE_HEADER}\n{prefix},{},{},{mean},{std},{reference},{gap}\n",
        seeds.len(),
        tests.len()
    );
    write_atomic(&out.join("aggregate.csv"), aggregate.as_bytes())?;
    let mut line = format!(
        "{} {label}: test accuracy {mean:.4} ± {std:.4} over {} of {} seeds",
        config.dataset.name,
        tests.len(),
        seeds.len()
    );
    if let Some(r) = config.run.reference_accuracy {
        write!(line, " (reference {r:.4}, gap {:.4})", r - mean).expect("writing to a string");
    }
    println!("{line}");
    Ok(TrainReport {
        label,
        seeds,
        mean_test_acc: mean,
        std_test_acc: std,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub predictions_path: PathBuf,
    pub test_acc: f64,
}

/// Predicts every node from its features alone and writes
/// `node_id,label` rows in dataset order.
pub fn cmd_eval(config: &RunConfig, checkpoint: &Path) -> Result<EvalReport> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let graph = featurized(config)?;
    let net = &ckpt.network;
    if net.input_width() != graph.num_features() || net.num_classes() != graph.num_classes() {
        bail!(
            "checkpoint maps {} features to {} classes; dataset has {} and {}",
            net.input_width(),
            net.num_classes(),
            graph.num_features(),
            graph.num_classes()
        );
    }
    let x = graph.features().view();
    let preds = predict(&ckpt.params, net, x)?;
    let mut text = String::from("node_id,label\n");
    for (id, &p) in graph.node_ids().iter().zip(&preds) {
        writeln!(text, "{id},{}", graph.label_names()[p]).expect("writing to a string");
    }
    let path = config.run.output_dir.join("predictions.csv");
    write_atomic(&path, text.as_bytes())?;

    let masks = make_split(
        &graph,
        config.split_strategy(),
        config.split_seed(ckpt.seed),
    )?;
    let test_acc = evaluate(&ckpt.params, net, x, graph.labels(), &masks.test_idx)?;
    println!(
        "test accuracy {test_acc:.4} ({} nodes)",
        masks.test_idx.len()
    );
    println!("wrote {}", path.display());
    Ok(EvalReport {
        predictions_path: path,
        test_acc,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckLine {
    pub metric: Metric,
    pub batchnorm: bool,
    pub tolerance: f64,
    pub report: GradCheckReport,
}

impl GradcheckLine {
    pub fn passed(&self) -> bool {
        self.report.max_relative_error < self.tolerance
    }
}

impl std::fmt::Display for GradcheckLine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "metric={} batchnorm={} max_rel_error={:.3e} tolerance={:e} worst={} checked={} {}",
            self.metric,
            if self.batchnorm { "on" } else { "off" },
            self.report.max_relative_error,
            self.tolerance,
            self.report.worst,
            self.report.num_checked,
            if self.passed() { "ok" } else { "FAILED" }
        )
    }
}

/// Gradient check over every checked metric with batch norm off and on.
pub fn cmd_gradcheck(config: &RunConfig) -> Result<Vec<GradcheckLine>> {
    let g = &config.gradcheck;
    let toy = ToyInstance::random(g.nodes, g.features, g.classes, g.seed)?;
    let options = GradCheckOptions {
        inject_fault: g.inject_fault,
        seed: g.seed,
        ..GradCheckOptions::default()
    };
    let mut lines = Vec::new();
    for metric in Metric::CHECKED {
        for batchnorm in [false, true] {
            let mut cfg = config.clone();
            cfg.network.hidden = vec![6, 5];
            cfg.network.dropout = 0.0;
            cfg.network.batchnorm = batchnorm;
            cfg.loss.metric = metric;
            let net = cfg.network_config(g.features, g.classes);
            let report = gradient_check_with(&net, &cfg.loss_config(), &toy, &options)?;
            let line = GradcheckLine {
                metric,
                batchnorm,
                tolerance: if batchnorm {
                    GRADCHECK_TOL_BATCHNORM
                } else {
                    GRADCHECK_TOL_PLAIN
                },
                report,
            };
            println!("{line}");
            lines.push(line);
        }
    }
    Ok(lines)
}

/// Writes `<name>.content` and `<name>.cites` into `out_dir`.
pub fn cmd_convert_pubmed(
    nodes: &Path,
    cites: &Path,
    out_dir: &Path,
    name: &str,
) -> Result<ConvertSummary> {
    let open = |p: &Path| -> Result<BufReader<File>> {
        Ok(BufReader::new(
            File::open(p).with_context(|| format!("opening {}", p.display()))?,
        ))
    };
    let mut content = Vec::new();
    let (n, f) = pubmed::convert_nodes(open(nodes)?, &mut content)
        .with_context(|| format!("converting {}", nodes.display()))?;
    let mut edges = Vec::new();
    let c = pubmed::convert_cites(open(cites)?, &mut edges)
        .with_context(|| format!("converting {}", cites.display()))?;
    write_atomic(&out_dir.join(format!("{name}.content")), &content)?;
    write_atomic(&out_dir.join(format!("{name}.cites")), &edges)?;
    println!("{n} nodes, {f} features, {c} citation lines");
    Ok(ConvertSummary {
        nodes: n,
        features: f,
        cites: c,
    })
}

pub fn cmd_synthesize(spec: &SyntheticSpec, out_dir: &Path, name: &str) -> Result<()> {
    let graph = generate(spec)?;
    let mut content = Vec::new();
    graph.write_content(&mut content)?;
    let mut cites = Vec::new();
    graph.write_cites(&mut cites)?;
    write_atomic(&out_dir.join(format!("{name}.content")), &content)?;
    write_atomic(&out_dir.join(format!("{name}.cites")), &cites)?;
    println!("{} nodes, {} edges", graph.num_nodes(), graph.edges().len());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_standard_deviation() {
        let (mean, std) = mean_and_std(&[0.8, 0.82, 0.84]);
        assert!((mean - 0.82).abs() < 1e-12);
        assert!((std - 0.02).abs() < 1e-12);
        assert!(mean_and_std(&[0.5]).1.is_nan());
    }
}
