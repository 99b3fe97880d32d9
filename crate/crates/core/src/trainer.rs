//! Training loop for the graph-regularized objective, Adam updates,
//! evaluation and an end-to-end finite-difference gradient check.

use std::io::Write;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::citegraph::{
    partition_edges, CitationGraph, EdgeBucket, EdgePartition, SplitMasks, WeightedEdge,
};
use crate::error::{NodeNetError, Result};
use crate::graphloss::{graph_regularizer_rows, total_cost, GraphLossConfig, Reduction};
use crate::neuralnet::{
    backward, forward_input, gather_rows, init_params, predict, predict_input,
    softmax_cross_entropy, Dropout, ForwardTrace, Mode, NetInput, NetworkConfig, NetworkGradients,
    NetworkParameters, ParamKind,
};
use crate::sparse::{CsrMatrix, SPARSE_DENSITY_THRESHOLD};

/// Weight given to every citation edge.
pub const DEFAULT_EDGE_WEIGHT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BatchMode {
    /// One step per epoch over every node and edge.
    Full,
    /// Steps over `batch_edges` sampled edges plus as many sampled labeled
    /// nodes; an epoch covers roughly every edge once.
    EdgeSampled { batch_edges: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    pub seed: u64,
    pub batch_mode: BatchMode,
    /// Decoupled weight decay, applied to dense weights only.
    pub weight_decay: f64,
    /// Fill the `seconds` column with wall-clock time. Off by default so
    /// that metrics files are reproducible byte for byte.
    pub record_wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            epochs: 2000,
            patience: 50,
            seed: 0,
            batch_mode: BatchMode::Full,
            weight_decay: 5e-4,
            record_wall_clock: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(NodeNetError::Config(msg));
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return bad(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!(
                "betas ({}, {}) must lie in [0, 1)",
                self.beta1, self.beta2
            ));
        }
        if self.adam_epsilon.is_nan() || self.adam_epsilon <= 0.0 {
            return bad("adam_epsilon must be positive".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad("weight_decay must be non-negative".into());
        }
        if let BatchMode::EdgeSampled { batch_edges: 0 } = self.batch_mode {
            return bad("batch_edges must be positive".into());
        }
        Ok(())
    }
}

/// First and second moment estimates, one buffer per trainable tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &mut NetworkParameters) -> Self {
        let sizes: Vec<usize> = params
            .trainable_mut()
            .iter()
            .map(|t| t.data.len())
            .collect();
        Self {
            step: 0,
            first_moment: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One bias-corrected Adam update with decoupled weight decay on weights.
pub fn adam_step(
    params: &mut NetworkParameters,
    grads: &NetworkGradients,
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    let grad_slices = grads.slices();
    let mut tensors = params.trainable_mut();
    if tensors.len() != grad_slices.len() || tensors.len() != state.first_moment.len() {
        return Err(NodeNetError::Shape(format!(
            "{} parameter tensors, {} gradients, {} optimizer buffers",
            tensors.len(),
            grad_slices.len(),
            state.first_moment.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - config.beta1.powi(t);
    let bias2 = 1.0 - config.beta2.powi(t);
    let lr = config.learning_rate;
    for (((tensor, g), m), v) in tensors
        .iter_mut()
        .zip(&grad_slices)
        .zip(&mut state.first_moment)
        .zip(&mut state.second_moment)
    {
        if tensor.data.len() != g.len() || m.len() != g.len() {
            return Err(NodeNetError::Shape(format!(
                "gradient shape mismatch for {}",
                tensor.name
            )));
        }
        let decay = if tensor.kind == ParamKind::Weight {
            config.weight_decay
        } else {
            0.0
        };
        for i in 0..g.len() {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            let theta = &mut tensor.data[i];
            *theta -= lr * (m_hat / (v_hat.sqrt() + config.adam_epsilon) + decay * *theta);
        }
    }
    Ok(())
}

/// Loss values of one objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    pub supervised: f64,
    pub graph: f64,
    pub total: f64,
}

/// Rows of a forward batch and the edges active in it.
struct BatchView<'a> {
    x: NetInput<'a>,
    /// `(row, label)` for labeled nodes in the batch.
    labeled: Vec<(usize, usize)>,
    /// Graph node -> batch row.
    row_of: Vec<Option<usize>>,
    partition: &'a EdgePartition,
}

/// Forward pass, supervised and graph losses, and parameter gradients.
fn objective_and_gradients<'x>(
    params: &NetworkParameters,
    net: &NetworkConfig,
    loss: &GraphLossConfig,
    batch: &BatchView<'x>,
    dropout: Dropout<'_>,
) -> Result<(ObjectiveValue, ForwardTrace<'x>, NetworkGradients)> {
    let trace = forward_input(params, net, batch.x.clone(), Mode::Train, dropout)?;

    let rows: Vec<usize> = batch.labeled.iter().map(|&(r, _)| r).collect();
    let targets: Vec<usize> = batch.labeled.iter().map(|&(_, y)| y).collect();
    let labeled_logits = gather_rows(trace.logits.view(), &rows);
    let (mut supervised, mut grad_sub) = softmax_cross_entropy(labeled_logits.view(), &targets)?;
    if loss.reduction == Reduction::Sum {
        let count = rows.len() as f64;
        supervised *= count;
        grad_sub *= count;
    }
    let mut grad_logits = Array2::zeros(trace.logits.raw_dim());
    for (i, &r) in rows.iter().enumerate() {
        let mut dst = grad_logits.row_mut(r);
        dst += &grad_sub.row(i);
    }

    let (graph, grad_latent) = if loss.is_disabled() {
        (0.0, None)
    } else {
        let (breakdown, g) =
            graph_regularizer_rows(trace.latent().view(), &batch.row_of, batch.partition, loss)?;
        (breakdown.total(), Some(g))
    };
    let total = total_cost(supervised, graph)?;
    let grads = backward(
        &trace,
        params,
        net,
        grad_logits.view(),
        grad_latent.as_ref().map(|g| g.view()),
    )?;
    Ok((
        ObjectiveValue {
            supervised,
            graph,
            total,
        },
        trace,
        grads,
    ))
}

/// One row of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total_loss: f64,
    pub supervised_loss: f64,
    pub graph_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
}

impl MetricsLog {
    pub const CSV_HEADER: &'static str =
        "epoch,total_loss,supervised_loss,graph_loss,train_acc,val_acc,test_acc,seconds";

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{:.6}",
                r.epoch,
                r.total_loss,
                r.supervised_loss,
                r.graph_loss,
                r.train_acc,
                r.val_acc,
                r.test_acc,
                r.seconds
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii csv")
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.best_epoch
            .and_then(|e| self.records.iter().find(|r| r.epoch == e))
    }
}

/// Output of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation accuracy.
    pub params: NetworkParameters,
    pub log: MetricsLog,
    /// Optimizer state after the last epoch run.
    pub optimizer: AdamState,
    pub epochs_run: usize,
}

/// Fraction of `index_set` whose prediction matches its label. Uses only
/// node features.
pub fn evaluate(
    params: &NetworkParameters,
    net: &NetworkConfig,
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    index_set: &[usize],
) -> Result<f64> {
    if index_set.is_empty() {
        return Err(NodeNetError::InvalidInput(
            "cannot evaluate on an empty index set".into(),
        ));
    }
    let rows = gather_rows(x, index_set);
    let preds = predict(params, net, rows.view())?;
    let correct = preds
        .iter()
        .zip(index_set)
        .filter(|(&p, &i)| p == labels[i])
        .count();
    Ok(correct as f64 / index_set.len() as f64)
}

fn accuracy_on(preds: &[usize], labels: &[usize], index_set: &[usize]) -> f64 {
    if index_set.is_empty() {
        return f64::NAN;
    }
    let correct = index_set.iter().filter(|&&i| preds[i] == labels[i]).count();
    correct as f64 / index_set.len() as f64
}

fn check_shapes(graph: &CitationGraph, net: &NetworkConfig) -> Result<()> {
    if net.input_width() != graph.num_features() || net.num_classes() != graph.num_classes() {
        return Err(NodeNetError::Config(format!(
            "network maps {} -> {} but graph has {} features and {} classes",
            net.input_width(),
            net.num_classes(),
            graph.num_features(),
            graph.num_classes()
        )));
    }
    Ok(())
}

/// Trains the network on the graph-regularized objective.
pub fn train(
    graph: &CitationGraph,
    masks: &SplitMasks,
    net: &NetworkConfig,
    loss: &GraphLossConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    net.validate()?;
    loss.validate()?;
    config.validate()?;
    masks.validate(graph)?;
    check_shapes(graph, net)?;

    let n = graph.num_nodes();
    let x = graph.features().view();
    let labels = graph.labels();
    let partition = partition_edges(graph, masks, DEFAULT_EDGE_WEIGHT);

    let mut params = init_params(net, config.seed)?;
    let mut optimizer = AdamState::new(&mut params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let csr = (CsrMatrix::density(x) <= SPARSE_DENSITY_THRESHOLD).then(|| CsrMatrix::from_dense(x));
    let full_input = match &csr {
        Some(c) => NetInput::with_csr(x, c),
        None => NetInput::dense(x),
    };
    let full_batch = BatchView {
        x: full_input.clone(),
        labeled: masks.train_idx.iter().map(|&i| (i, labels[i])).collect(),
        row_of: (0..n).map(Some).collect(),
        partition: &partition,
    };
    let all_edges: Vec<(EdgeBucket, WeightedEdge)> = partition
        .buckets()
        .into_iter()
        .flat_map(|(b, edges)| edges.iter().map(move |&e| (b, e)))
        .collect();

    let mut log = MetricsLog::default();
    let mut best: Option<(f64, usize, NetworkParameters)> = None;
    let mut since_best = 0usize;
    let started = Instant::now();

    for epoch in 0..config.epochs {
        let value = match config.batch_mode {
            BatchMode::Full => {
                let (value, trace, grads) = objective_and_gradients(
                    &params,
                    net,
                    loss,
                    &full_batch,
                    Dropout::Sample(&mut rng),
                )
                .map_err(|e| divergence(e, epoch))?;
                params.update_running_stats(&trace, net.bn_momentum);
                drop(trace);
                adam_step(&mut params, &grads, &mut optimizer, config)?;
                value
            }
            BatchMode::EdgeSampled { batch_edges } => {
                let steps = all_edges.len().div_ceil(batch_edges).max(1);
                let (mut sup, mut reg) = (0.0, 0.0);
                for _ in 0..steps {
                    let sample = sample_batch(
                        &all_edges,
                        &masks.train_idx,
                        labels,
                        n,
                        batch_edges,
                        &mut rng,
                    );
                    let xb = gather_rows(x, &sample.nodes);
                    let batch = BatchView {
                        x: NetInput::auto(xb.view()),
                        labeled: sample.labeled,
                        row_of: sample.row_of,
                        partition: &sample.partition,
                    };
                    let (value, trace, grads) = objective_and_gradients(
                        &params,
                        net,
                        loss,
                        &batch,
                        Dropout::Sample(&mut rng),
                    )
                    .map_err(|e| divergence(e, epoch))?;
                    params.update_running_stats(&trace, net.bn_momentum);
                    drop(trace);
                    adam_step(&mut params, &grads, &mut optimizer, config)?;
                    sup += value.supervised;
                    reg += value.graph;
                }
                let (supervised, graph) = (sup / steps as f64, reg / steps as f64);
                ObjectiveValue {
                    supervised,
                    graph,
                    total: supervised + graph,
                }
            }
        };

        let preds = predict_input(&params, net, full_input.clone())?;
        let record = EpochRecord {
            epoch,
            total_loss: value.total,
            supervised_loss: value.supervised,
            graph_loss: value.graph,
            train_acc: accuracy_on(&preds, labels, &masks.train_idx),
            val_acc: accuracy_on(&preds, labels, &masks.val_idx),
            test_acc: accuracy_on(&preds, labels, &masks.test_idx),
            seconds: if config.record_wall_clock {
                started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        log.records.push(record);

        // Without a validation set, track training accuracy instead.
        let score = if masks.val_idx.is_empty() {
            record.train_acc
        } else {
            record.val_acc
        };
        match &best {
            Some((best_score, _, _)) if score <= *best_score => since_best += 1,
            _ => {
                best = Some((score, epoch, params.clone()));
                since_best = 0;
            }
        }
        if config.patience > 0 && since_best >= config.patience {
            break;
        }
    }

    let epochs_run = log.records.len();
    let (_, best_epoch, best_params) = best.expect("at least one epoch");
    log.best_epoch = Some(best_epoch);
    Ok(TrainOutcome {
        params: best_params,
        log,
        optimizer,
        epochs_run,
    })
}

fn divergence(err: NodeNetError, epoch: usize) -> NodeNetError {
    match err {
        NodeNetError::InvalidInput(msg) if msg.starts_with("non-finite") => {
            NodeNetError::Diverged {
                epoch,
                what: "loss",
            }
        }
        other => other,
    }
}

struct SampledBatch {
    nodes: Vec<usize>,
    row_of: Vec<Option<usize>>,
    labeled: Vec<(usize, usize)>,
    partition: EdgePartition,
}

fn sample_batch(
    edges: &[(EdgeBucket, WeightedEdge)],
    train_idx: &[usize],
    labels: &[usize],
    n: usize,
    batch_edges: usize,
    rng: &mut ChaCha8Rng,
) -> SampledBatch {
    let mut partition = EdgePartition::default();
    let mut in_batch = vec![false; n];
    for i in index::sample(rng, edges.len(), batch_edges.min(edges.len())).into_iter() {
        let (bucket, e) = edges[i];
        in_batch[e.u] = true;
        in_batch[e.v] = true;
        match bucket {
            EdgeBucket::LabeledLabeled => partition.ll.push(e),
            EdgeBucket::LabeledUnlabeled => partition.lu.push(e),
            EdgeBucket::UnlabeledUnlabeled => partition.uu.push(e),
        }
    }
    for &i in train_idx.choose_multiple(rng, batch_edges.min(train_idx.len())) {
        in_batch[i] = true;
    }
    // batch norm needs two rows
    while in_batch.iter().filter(|&&b| b).count() < 2.min(n) {
        in_batch[rng.random_range(0..n)] = true;
    }
    let nodes: Vec<usize> = (0..n).filter(|&i| in_batch[i]).collect();
    let mut row_of = vec![None; n];
    for (r, &i) in nodes.iter().enumerate() {
        row_of[i] = Some(r);
    }
    let mut is_train = vec![false; n];
    for &i in train_idx {
        is_train[i] = true;
    }
    let labeled = nodes
        .iter()
        .enumerate()
        .filter(|&(_, &i)| is_train[i])
        .map(|(r, &i)| (r, labels[i]))
        .collect();
    SampledBatch {
        nodes,
        row_of,
        labeled,
        partition,
    }
}

/// A small labeled graph for gradient checking.
#[derive(Debug, Clone)]
pub struct ToyInstance {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub train_idx: Vec<usize>,
    pub partition: EdgePartition,
}

impl ToyInstance {
    /// Random features in `[-1, 1)`, random labels, roughly half the nodes
    /// labeled (every class at least once), and a ring plus random chords
    /// so every edge bucket is populated.
    pub fn random(
        num_nodes: usize,
        num_features: usize,
        num_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        if num_nodes < 2 * num_classes || num_nodes > 20 {
            return Err(NodeNetError::InvalidInput(format!(
                "toy instance needs between {} and 20 nodes",
                2 * num_classes
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features =
            Array2::from_shape_simple_fn((num_nodes, num_features), || rng.random_range(-1.0..1.0));
        let mut labels: Vec<usize> = (0..num_nodes).map(|i| i % num_classes).collect();
        labels.shuffle(&mut rng);
        let mut train_idx: Vec<usize> = (0..num_classes)
            .map(|c| {
                labels
                    .iter()
                    .position(|&y| y == c)
                    .expect("every class present")
            })
            .collect();
        for i in 0..num_nodes {
            if !train_idx.contains(&i) && train_idx.len() < num_nodes / 2 && rng.random::<bool>() {
                train_idx.push(i);
            }
        }
        train_idx.sort_unstable();
        let mut edges: Vec<(usize, usize)> =
            (0..num_nodes).map(|i| (i, (i + 1) % num_nodes)).collect();
        for _ in 0..num_nodes {
            let u = rng.random_range(0..num_nodes);
            let v = rng.random_range(0..num_nodes);
            if u != v {
                edges.push((u, v));
            }
        }
        let names: Vec<String> = (0..num_classes).map(|c| c.to_string()).collect();
        let graph = CitationGraph::new(
            (0..num_nodes).map(|i| i.to_string()).collect(),
            features.clone(),
            labels.clone(),
            names,
            edges,
        )?;
        let masks = SplitMasks {
            train_idx: train_idx.clone(),
            val_idx: vec![],
            test_idx: vec![],
        };
        let partition = partition_edges(&graph, &masks, DEFAULT_EDGE_WEIGHT);
        Ok(Self {
            features,
            labels,
            train_idx,
            partition,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.features.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Base finite-difference step, scaled by `max(1, |theta|)`.
    pub step: f64,
    /// Denominator floor of the relative error, so gradients near zero
    /// are compared on an absolute scale.
    pub floor: f64,
    /// Added to the first analytic gradient entry; exercises the failure path.
    pub inject_fault: Option<f64>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-4,
            inject_fault: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Tensor name and flat index of the worst entry.
    pub worst: String,
    pub num_checked: usize,
}

fn toy_batch(toy: &ToyInstance) -> BatchView<'_> {
    BatchView {
        x: NetInput::auto(toy.features.view()),
        labeled: toy.train_idx.iter().map(|&i| (i, toy.labels[i])).collect(),
        row_of: (0..toy.num_nodes()).map(Some).collect(),
        partition: &toy.partition,
    }
}

/// Worst relative error between analytic and central-difference
/// gradients of the total cost, over every trainable parameter.
pub fn gradient_check(
    net: &NetworkConfig,
    loss: &GraphLossConfig,
    toy: &ToyInstance,
) -> Result<GradCheckReport> {
    gradient_check_with(net, loss, toy, &GradCheckOptions::default())
}

pub fn gradient_check_with(
    net: &NetworkConfig,
    loss: &GraphLossConfig,
    toy: &ToyInstance,
    options: &GradCheckOptions,
) -> Result<GradCheckReport> {
    net.validate()?;
    loss.validate()?;
    if net.dropout_rate != 0.0 {
        return Err(NodeNetError::Config(
            "gradient check requires dropout_rate = 0".into(),
        ));
    }
    if toy.num_nodes() > 20 {
        return Err(NodeNetError::InvalidInput(
            "gradient check toy graphs have at most 20 nodes".into(),
        ));
    }
    let batch = toy_batch(toy);
    let mut params = init_params(net, options.seed)?;
    // move batch-norm scale and shift off their identity values
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed ^ 0x9e37_79b9);
    for bn in params.norms.iter_mut().flatten() {
        bn.gamma.mapv_inplace(|_| rng.random_range(0.5..1.5));
        bn.beta.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    for d in &mut params.dense {
        d.bias.mapv_inplace(|_| rng.random_range(-0.1..0.1));
    }

    let (_, _, grads) = objective_and_gradients(&params, net, loss, &batch, Dropout::Off)?;
    let mut analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
    if let Some(fault) = options.inject_fault {
        analytic[0][0] += fault;
    }

    let names: Vec<String> = params
        .trainable_mut()
        .iter()
        .map(|t| t.name.clone())
        .collect();
    let cost = |p: &NetworkParameters| -> Result<f64> {
        Ok(objective_and_gradients(p, net, loss, &batch, Dropout::Off)?
            .0
            .total)
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: String::new(),
        num_checked: 0,
    };
    for (t, tensor_grad) in analytic.iter().enumerate() {
        for (i, &a) in tensor_grad.iter().enumerate() {
            let original = params.trainable_mut()[t].data[i];
            let h = options.step * original.abs().max(1.0);
            params.trainable_mut()[t].data[i] = original + h;
            let plus = cost(&params)?;
            params.trainable_mut()[t].data[i] = original - h;
            let minus = cost(&params)?;
            params.trainable_mut()[t].data[i] = original;
            let numeric = (plus - minus) / (2.0 * h);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(options.floor);
            report.num_checked += 1;
            if err > report.max_relative_error || report.worst.is_empty() {
                report.max_relative_error = err;
                report.worst = format!("{}[{}]", names[t], i);
            }
        }
    }
    Ok(report)
}
