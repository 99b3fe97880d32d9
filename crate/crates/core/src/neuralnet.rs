//! Dense feedforward classifier with batch normalization and dropout.
//!
//! Each hidden layer computes `affine -> batch norm -> activation ->
//! dropout`; the output layer is `affine -> softmax`. The forward pass
//! exposes both the class probabilities and the post-activation output
//! of one hidden layer (the latent representation used by the graph
//! loss). Gradients are computed analytically in [`backward`].

use std::borrow::Cow;

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NodeNetError, Result};
use crate::sparse::{CsrMatrix, SPARSE_DENSITY_THRESHOLD};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Architecture and layer hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// `[input, hidden..., classes]`.
    pub layer_widths: Vec<usize>,
    pub dropout_rate: f64,
    /// One flag per hidden layer.
    pub batchnorm: Vec<bool>,
    pub bn_epsilon: f64,
    /// Weight on the old running statistic when updating it.
    pub bn_momentum: f64,
    pub activation: Activation,
    /// Hidden layer whose post-activation output is the latent representation.
    pub latent_layer: usize,
}

impl NetworkConfig {
    /// Default architecture: two hidden layers of 64 units, batch norm and
    /// dropout 0.5 on both, latent taken from the last hidden layer.
    pub fn new(num_features: usize, num_classes: usize) -> Self {
        Self::with_hidden(num_features, &[64, 64], num_classes)
    }

    pub fn with_hidden(num_features: usize, hidden: &[usize], num_classes: usize) -> Self {
        let mut layer_widths = vec![num_features];
        layer_widths.extend_from_slice(hidden);
        layer_widths.push(num_classes);
        Self {
            layer_widths,
            dropout_rate: 0.5,
            batchnorm: vec![true; hidden.len()],
            bn_epsilon: 1e-5,
            bn_momentum: 0.9,
            activation: Activation::Relu,
            latent_layer: hidden.len().saturating_sub(1),
        }
    }

    pub fn num_hidden(&self) -> usize {
        self.layer_widths.len().saturating_sub(2)
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    pub fn latent_width(&self) -> usize {
        self.layer_widths[self.latent_layer + 1]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(NodeNetError::Config(msg));
        if self.layer_widths.len() < 3 {
            return bad(format!(
                "layer_widths needs input, at least one hidden layer and output, got {:?}",
                self.layer_widths
            ));
        }
        if self.layer_widths.contains(&0) {
            return bad(format!("zero-width layer in {:?}", self.layer_widths));
        }
        if self.num_classes() < 2 {
            return bad("need at least 2 output classes".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if self.batchnorm.len() != self.num_hidden() {
            return bad(format!(
                "{} batchnorm flags for {} hidden layers",
                self.batchnorm.len(),
                self.num_hidden()
            ));
        }
        if self.bn_epsilon <= 0.0 {
            return bad("bn_epsilon must be positive".into());
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) {
            return bad(format!("bn_momentum {} outside (0, 1)", self.bn_momentum));
        }
        if self.latent_layer >= self.num_hidden() {
            return bad(format!(
                "latent_layer {} but only {} hidden layers",
                self.latent_layer,
                self.num_hidden()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `fan_in x fan_out`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

/// Kinds of trainable tensors. Weight decay applies to `Weight` only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Scale,
    Shift,
}

/// Named view of one trainable tensor.
#[derive(Debug)]
pub struct TensorMut<'a> {
    pub name: String,
    pub kind: ParamKind,
    pub data: &'a mut [f64],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParameters {
    /// Hidden layers followed by the output layer.
    pub dense: Vec<Dense>,
    /// One slot per hidden layer.
    pub norms: Vec<Option<BatchNorm>>,
}

impl NetworkParameters {
    /// Trainable tensors in a fixed order: per layer weight, bias, then
    /// batch-norm scale and shift where present.
    pub fn trainable_mut(&mut self) -> Vec<TensorMut<'_>> {
        let mut out = Vec::new();
        let mut norms = self.norms.iter_mut();
        for (l, dense) in self.dense.iter_mut().enumerate() {
            out.push(TensorMut {
                name: format!("dense{l}.weight"),
                kind: ParamKind::Weight,
                data: dense.weight.as_slice_mut().expect("standard layout"),
            });
            out.push(TensorMut {
                name: format!("dense{l}.bias"),
                kind: ParamKind::Bias,
                data: dense.bias.as_slice_mut().expect("standard layout"),
            });
            if let Some(Some(bn)) = norms.next() {
                out.push(TensorMut {
                    name: format!("norm{l}.gamma"),
                    kind: ParamKind::Scale,
                    data: bn.gamma.as_slice_mut().expect("standard layout"),
                });
                out.push(TensorMut {
                    name: format!("norm{l}.beta"),
                    kind: ParamKind::Shift,
                    data: bn.beta.as_slice_mut().expect("standard layout"),
                });
            }
        }
        out
    }

    pub fn num_trainable(&self) -> usize {
        self.dense
            .iter()
            .map(|d| d.weight.len() + d.bias.len())
            .sum::<usize>()
            + self
                .norms
                .iter()
                .flatten()
                .map(|bn| bn.gamma.len() + bn.beta.len())
                .sum::<usize>()
    }

    /// Folds this batch's statistics into the running estimates.
    pub fn update_running_stats(&mut self, trace: &ForwardTrace<'_>, momentum: f64) {
        if trace.mode != Mode::Train {
            return;
        }
        for (bn, layer) in self.norms.iter_mut().zip(&trace.hidden) {
            if let (Some(bn), Some(cache)) = (bn.as_mut(), layer.norm.as_ref()) {
                let n = layer.pre.nrows() as f64;
                let unbiased = &cache.var * (n / (n - 1.0));
                bn.running_mean = &bn.running_mean * momentum + &cache.mean * (1.0 - momentum);
                bn.running_var = &bn.running_var * momentum + unbiased * (1.0 - momentum);
            }
        }
    }
}

/// Gradients with the same layout as [`NetworkParameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGradients {
    pub dense: Vec<Dense>,
    /// Scale and shift gradients, stored in `gamma` / `beta`; running
    /// statistics fields stay empty.
    pub norms: Vec<Option<BatchNorm>>,
}

impl NetworkGradients {
    pub fn zeros_like(params: &NetworkParameters) -> Self {
        Self {
            dense: params
                .dense
                .iter()
                .map(|d| Dense {
                    weight: Array2::zeros(d.weight.raw_dim()),
                    bias: Array1::zeros(d.bias.raw_dim()),
                })
                .collect(),
            norms: params
                .norms
                .iter()
                .map(|bn| {
                    bn.as_ref().map(|bn| BatchNorm {
                        gamma: Array1::zeros(bn.gamma.raw_dim()),
                        beta: Array1::zeros(bn.beta.raw_dim()),
                        running_mean: Array1::zeros(0),
                        running_var: Array1::zeros(0),
                    })
                })
                .collect(),
        }
    }

    /// Flattened gradients in [`NetworkParameters::trainable_mut`] order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut norms = self.norms.iter();
        for dense in &self.dense {
            out.extend(dense.weight.iter());
            out.extend(dense.bias.iter());
            if let Some(Some(bn)) = norms.next() {
                out.extend(bn.gamma.iter());
                out.extend(bn.beta.iter());
            }
        }
        out
    }

    /// Per-tensor slices in [`NetworkParameters::trainable_mut`] order.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        let mut norms = self.norms.iter();
        for dense in &self.dense {
            out.push(dense.weight.as_slice().expect("standard layout"));
            out.push(dense.bias.as_slice().expect("standard layout"));
            if let Some(Some(bn)) = norms.next() {
                out.push(bn.gamma.as_slice().expect("standard layout"));
                out.push(bn.beta.as_slice().expect("standard layout"));
            }
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        let mut norms = self.norms.iter_mut();
        for dense in &mut self.dense {
            out.push(dense.weight.as_slice_mut().expect("standard layout"));
            out.push(dense.bias.as_slice_mut().expect("standard layout"));
            if let Some(Some(bn)) = norms.next() {
                out.push(bn.gamma.as_slice_mut().expect("standard layout"));
                out.push(bn.beta.as_slice_mut().expect("standard layout"));
            }
        }
        out
    }
}

/// Parameters initialized with `U(-r, r)`, `r = sqrt(6 / (fan_in + fan_out))`.
/// Biases and shifts start at 0, scales at 1, running variance at 1.
pub fn init_params(config: &NetworkConfig, seed: u64) -> Result<NetworkParameters> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dense = config
        .layer_widths
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weight =
                Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-limit..limit));
            Dense {
                weight,
                bias: Array1::zeros(fan_out),
            }
        })
        .collect();
    let norms = config
        .batchnorm
        .iter()
        .enumerate()
        .map(|(l, &on)| {
            on.then(|| {
                let width = config.layer_widths[l + 1];
                BatchNorm {
                    gamma: Array1::ones(width),
                    beta: Array1::zeros(width),
                    running_mean: Array1::zeros(width),
                    running_var: Array1::ones(width),
                }
            })
        })
        .collect();
    Ok(NetworkParameters { dense, norms })
}

/// Where dropout masks come from in train mode.
pub enum Dropout<'a> {
    /// No dropout. Rejected in train mode when `dropout_rate > 0`.
    Off,
    /// Draw keep-masks from this generator.
    Sample(&'a mut dyn RngCore),
    /// Caller-provided keep-masks (entries 0 or 1), one per hidden layer.
    Fixed(&'a [Array2<f64>]),
}

#[derive(Debug, Clone)]
pub struct NormCache {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
    pub inv_std: Array1<f64>,
    pub normalized: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct HiddenCache {
    /// Affine output.
    pub pre: Array2<f64>,
    pub norm: Option<NormCache>,
    /// Activation input (after batch norm, if any).
    pub act_in: Array2<f64>,
    /// Activation output, before dropout.
    pub activated: Array2<f64>,
    /// Scaled keep-mask (`0` or `1 / (1 - rate)`) when dropout ran.
    pub dropout_scale: Option<Array2<f64>>,
    /// Input to the next layer.
    pub output: Array2<f64>,
}

/// Network input, optionally with a sparse copy used by the first layer.
#[derive(Debug, Clone)]
pub struct NetInput<'x> {
    pub dense: ArrayView2<'x, f64>,
    pub csr: Option<Cow<'x, CsrMatrix>>,
}

impl<'x> NetInput<'x> {
    pub fn dense(x: ArrayView2<'x, f64>) -> Self {
        Self {
            dense: x,
            csr: None,
        }
    }

    /// Builds a sparse copy when the input is sparse enough to benefit.
    pub fn auto(x: ArrayView2<'x, f64>) -> Self {
        let csr = (CsrMatrix::density(x) <= SPARSE_DENSITY_THRESHOLD)
            .then(|| Cow::Owned(CsrMatrix::from_dense(x)));
        Self { dense: x, csr }
    }

    pub fn with_csr(x: ArrayView2<'x, f64>, csr: &'x CsrMatrix) -> Self {
        Self {
            dense: x,
            csr: Some(Cow::Borrowed(csr)),
        }
    }

    pub fn nrows(&self) -> usize {
        self.dense.nrows()
    }

    fn dot(&self, w: &Array2<f64>) -> Array2<f64> {
        match &self.csr {
            Some(csr) => csr.dot(w),
            None => self.dense.dot(w),
        }
    }

    fn transpose_dot(&self, g: &Array2<f64>) -> Array2<f64> {
        match &self.csr {
            Some(csr) => csr.transpose_dot(g),
            None => self.dense.t().dot(g),
        }
    }
}

fn slice<D: ndarray::Dimension>(a: &ndarray::ArrayRef<f64, D>) -> &[f64] {
    a.as_slice().expect("contiguous array")
}

fn slice_mut<D: ndarray::Dimension>(a: &mut ndarray::ArrayRef<f64, D>) -> &mut [f64] {
    a.as_slice_mut().expect("contiguous array")
}

/// Everything a forward pass produced, sufficient for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace<'x> {
    pub mode: Mode,
    pub input: NetInput<'x>,
    pub hidden: Vec<HiddenCache>,
    pub logits: Array2<f64>,
    pub probabilities: Array2<f64>,
    latent_layer: usize,
}

impl ForwardTrace<'_> {
    /// Latent representation: post-activation, pre-dropout output of the
    /// configured hidden layer.
    pub fn latent(&self) -> &Array2<f64> {
        &self.hidden[self.latent_layer].activated
    }

    pub fn batch_size(&self) -> usize {
        self.logits.nrows()
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Forward pass over a dense input; sparse inputs are detected and
/// multiplied in CSR form.
pub fn forward<'x>(
    params: &NetworkParameters,
    config: &NetworkConfig,
    x: ArrayView2<'x, f64>,
    mode: Mode,
    dropout: Dropout<'_>,
) -> Result<ForwardTrace<'x>> {
    forward_input(params, config, NetInput::auto(x), mode, dropout)
}

pub fn forward_input<'x>(
    params: &NetworkParameters,
    config: &NetworkConfig,
    input: NetInput<'x>,
    mode: Mode,
    mut dropout: Dropout<'_>,
) -> Result<ForwardTrace<'x>> {
    let x = input.dense;
    if x.ncols() != config.input_width() {
        return Err(NodeNetError::Shape(format!(
            "input has {} columns, network expects {}",
            x.ncols(),
            config.input_width()
        )));
    }
    let batch = x.nrows();
    let train = mode == Mode::Train;
    if train && batch < 2 && config.batchnorm.iter().any(|&b| b) {
        return Err(NodeNetError::InvalidInput(
            "train-mode batch norm needs a batch of at least 2 rows".into(),
        ));
    }
    if train && config.dropout_rate > 0.0 && matches!(dropout, Dropout::Off) {
        return Err(NodeNetError::InvalidInput(
            "train mode with dropout needs a random source or fixed masks".into(),
        ));
    }
    if let Dropout::Fixed(masks) = &dropout {
        if masks.len() != config.num_hidden() {
            return Err(NodeNetError::Shape(format!(
                "{} dropout masks for {} hidden layers",
                masks.len(),
                config.num_hidden()
            )));
        }
    }

    let keep = 1.0 - config.dropout_rate;
    let mut hidden: Vec<HiddenCache> = Vec::with_capacity(config.num_hidden());
    for l in 0..config.num_hidden() {
        let dense = &params.dense[l];
        let mut pre = match hidden.last() {
            Some(prev) => prev.output.dot(&dense.weight),
            None => input.dot(&dense.weight),
        };
        let bias = slice(&dense.bias);
        for mut row in pre.rows_mut() {
            for (p, &b) in slice_mut(&mut row).iter_mut().zip(bias) {
                *p += b;
            }
        }

        let (act_in, norm) = match &params.norms[l] {
            None => (pre.clone(), None),
            Some(bn) => {
                let (mean, var) = if train {
                    let mean = pre.mean_axis(Axis(0)).expect("non-empty batch");
                    let mut var = Array1::zeros(mean.len());
                    {
                        let (v, m) = (slice_mut(&mut var), slice(&mean));
                        for row in pre.rows() {
                            for ((v, &x), &m) in v.iter_mut().zip(slice(&row)).zip(m) {
                                *v += (x - m) * (x - m);
                            }
                        }
                    }
                    var /= batch as f64;
                    (mean, var)
                } else {
                    (bn.running_mean.clone(), bn.running_var.clone())
                };
                let inv_std = var.mapv(|v| 1.0 / (v + config.bn_epsilon).sqrt());
                let mut normalized = pre.clone();
                let mut out = pre.clone();
                let (m, is, g, b) = (
                    slice(&mean),
                    slice(&inv_std),
                    slice(&bn.gamma),
                    slice(&bn.beta),
                );
                for (mut n_row, mut o_row) in normalized.rows_mut().into_iter().zip(out.rows_mut())
                {
                    let (n_row, o_row) = (slice_mut(&mut n_row), slice_mut(&mut o_row));
                    for j in 0..n_row.len() {
                        n_row[j] = (n_row[j] - m[j]) * is[j];
                        o_row[j] = n_row[j] * g[j] + b[j];
                    }
                }
                (
                    out,
                    Some(NormCache {
                        mean,
                        var,
                        inv_std,
                        normalized,
                    }),
                )
            }
        };

        let act = config.activation;
        let activated = act_in.mapv(|v| act.apply(v));

        let dropout_scale = if train && config.dropout_rate > 0.0 {
            let scale = 1.0 / keep;
            match &mut dropout {
                Dropout::Sample(rng) => {
                    Some(Array2::from_shape_simple_fn(activated.raw_dim(), || {
                        if rng.random::<f64>() < keep {
                            scale
                        } else {
                            0.0
                        }
                    }))
                }
                Dropout::Fixed(masks) => {
                    let mask = &masks[l];
                    if mask.dim() != activated.dim() {
                        return Err(NodeNetError::Shape(format!(
                            "dropout mask {:?} for activations {:?}",
                            mask.dim(),
                            activated.dim()
                        )));
                    }
                    Some(mask.mapv(|m| if m != 0.0 { scale } else { 0.0 }))
                }
                Dropout::Off => unreachable!("checked above"),
            }
        } else {
            None
        };
        let output = match &dropout_scale {
            Some(scale) => &activated * scale,
            None => activated.clone(),
        };
        hidden.push(HiddenCache {
            pre,
            norm,
            act_in,
            activated,
            dropout_scale,
            output,
        });
    }

    let last = params.dense.last().expect("output layer");
    let logits = hidden
        .last()
        .expect("hidden layer")
        .output
        .dot(&last.weight)
        + &last.bias;
    let probabilities = softmax(&logits);
    Ok(ForwardTrace {
        mode,
        input,
        hidden,
        logits,
        probabilities,
        latent_layer: config.latent_layer,
    })
}

/// Gradients of `<grad_logits, logits> + <grad_latent, latent>` with
/// respect to every trainable parameter. `None` for the latent gradient
/// means the latent output is not used downstream.
pub fn backward(
    trace: &ForwardTrace<'_>,
    params: &NetworkParameters,
    config: &NetworkConfig,
    grad_logits: ArrayView2<'_, f64>,
    grad_latent: Option<ArrayView2<'_, f64>>,
) -> Result<NetworkGradients> {
    if trace.mode != Mode::Train {
        return Err(NodeNetError::InvalidInput(
            "backward needs a train-mode trace".into(),
        ));
    }
    if grad_logits.dim() != trace.logits.dim() {
        return Err(NodeNetError::Shape(format!(
            "logit gradient {:?} vs logits {:?}",
            grad_logits.dim(),
            trace.logits.dim()
        )));
    }
    if let Some(g) = &grad_latent {
        if g.dim() != trace.latent().dim() {
            return Err(NodeNetError::Shape(format!(
                "latent gradient {:?} vs latent {:?}",
                g.dim(),
                trace.latent().dim()
            )));
        }
    }

    let mut grads = NetworkGradients::zeros_like(params);
    let n_hidden = config.num_hidden();
    let batch = trace.batch_size() as f64;

    let out_grad = &mut grads.dense[n_hidden];
    let last_hidden = &trace.hidden[n_hidden - 1].output;
    out_grad.weight = last_hidden.t().dot(&grad_logits);
    out_grad.bias = grad_logits.sum_axis(Axis(0));
    let mut upstream = grad_logits.dot(&params.dense[n_hidden].weight.t());

    for l in (0..n_hidden).rev() {
        let cache = &trace.hidden[l];
        // through dropout
        let mut d_act = match &cache.dropout_scale {
            Some(scale) => upstream * scale,
            None => upstream,
        };
        if let (true, Some(g)) = (l == config.latent_layer, &grad_latent) {
            d_act += g;
        }
        // through activation
        let act = config.activation;
        let mut d_in = d_act;
        Zip::from(&mut d_in)
            .and(&cache.act_in)
            .and(&cache.activated)
            .for_each(|g, &x, &y| *g *= act.derivative(x, y));
        // through batch norm
        let d_pre = match (&params.norms[l], &cache.norm) {
            (Some(bn), Some(nc)) => {
                let g = grads.norms[l].as_mut().expect("norm gradient slot");
                {
                    let (gg, gb) = (slice_mut(&mut g.gamma), slice_mut(&mut g.beta));
                    for (row, n_row) in d_in.rows().into_iter().zip(nc.normalized.rows()) {
                        for ((j, &d), &xn) in slice(&row).iter().enumerate().zip(slice(&n_row)) {
                            gg[j] += d * xn;
                            gb[j] += d;
                        }
                    }
                }
                // d_norm = d_in * gamma, so its column sums follow from the ones above
                let sum_d = &g.beta * &bn.gamma;
                let sum_dx = &g.gamma * &bn.gamma;
                let scale = &nc.inv_std / batch;
                let mut d_pre = d_in;
                let (gm, sd, sdx, sc) = (
                    slice(&bn.gamma),
                    slice(&sum_d),
                    slice(&sum_dx),
                    slice(&scale),
                );
                for (mut row, n_row) in d_pre.rows_mut().into_iter().zip(nc.normalized.rows()) {
                    let (row, xn) = (slice_mut(&mut row), slice(&n_row));
                    for j in 0..row.len() {
                        row[j] = (row[j] * gm[j] * batch - sd[j] - xn[j] * sdx[j]) * sc[j];
                    }
                }
                d_pre
            }
            _ => d_in,
        };
        grads.dense[l].weight = if l == 0 {
            trace.input.transpose_dot(&d_pre)
        } else {
            trace.hidden[l - 1].output.t().dot(&d_pre)
        };
        grads.dense[l].bias = d_pre.sum_axis(Axis(0));
        if l > 0 {
            upstream = d_pre.dot(&params.dense[l].weight.t());
        } else {
            break;
        }
    }
    Ok(grads)
}

/// Mean cross-entropy of softmax(logits) against integer labels, with its
/// gradient `(softmax - onehot) / batch`.
pub fn softmax_cross_entropy(
    logits: ArrayView2<'_, f64>,
    labels: &[usize],
) -> Result<(f64, Array2<f64>)> {
    let (batch, k) = logits.dim();
    if labels.len() != batch {
        return Err(NodeNetError::Shape(format!(
            "{} labels for {batch} rows",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(NodeNetError::InvalidInput(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    if batch == 0 {
        return Ok((0.0, Array2::zeros((0, k))));
    }
    let mut loss = 0.0;
    let mut grad = Array2::zeros((batch, k));
    for (i, (row, &y)) in logits.rows().into_iter().zip(labels).enumerate() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let sum: f64 = row.iter().map(|&x| (x - max).exp()).sum();
        let log_sum = sum.ln() + max;
        loss += log_sum - row[y];
        for (j, &x) in row.iter().enumerate() {
            grad[[i, j]] = (x - log_sum).exp();
        }
        grad[[i, y]] -= 1.0;
    }
    let inv = 1.0 / batch as f64;
    grad *= inv;
    Ok((loss * inv, grad))
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &p) in row.iter().enumerate().skip(1) {
        if p > row[best] {
            best = j;
        }
    }
    best
}

/// Class predictions from node features alone (infer mode).
pub fn predict(
    params: &NetworkParameters,
    config: &NetworkConfig,
    x: ArrayView2<'_, f64>,
) -> Result<Vec<usize>> {
    predict_input(params, config, NetInput::auto(x))
}

pub fn predict_input(
    params: &NetworkParameters,
    config: &NetworkConfig,
    input: NetInput<'_>,
) -> Result<Vec<usize>> {
    let trace = forward_input(params, config, input, Mode::Infer, Dropout::Off)?;
    Ok(trace
        .probabilities
        .rows()
        .into_iter()
        .map(|r| argmax(r.as_slice().expect("standard layout")))
        .collect())
}

/// Selects rows of `x` into a new owned matrix.
pub fn gather_rows(x: ArrayView2<'_, f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), x.ncols()));
    for (dst, &src) in rows.iter().enumerate() {
        out.slice_mut(s![dst, ..]).assign(&x.row(src));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn small_config(bn: bool, dropout: f64) -> NetworkConfig {
        let mut c = NetworkConfig::with_hidden(3, &[4], 2);
        c.batchnorm = vec![bn];
        c.dropout_rate = dropout;
        c
    }

    #[test]
    fn init_shapes_and_identity_norm() {
        let c = NetworkConfig::with_hidden(4, &[3], 2);
        let p = init_params(&c, 9).unwrap();
        assert_eq!(p.dense[0].weight.dim(), (4, 3));
        assert_eq!(p.dense[1].weight.dim(), (3, 2));
        assert_eq!(p.dense[0].bias.len(), 3);
        assert_eq!(p.dense[1].bias.len(), 2);
        let bn = p.norms[0].as_ref().unwrap();
        assert!(bn.gamma.iter().all(|&g| g == 1.0));
        assert!(bn.beta.iter().all(|&b| b == 0.0));
        assert_eq!(p, init_params(&c, 9).unwrap());
        assert_ne!(p, init_params(&c, 10).unwrap());
    }

    #[test]
    fn init_respects_fan_limit() {
        let c = NetworkConfig::with_hidden(10, &[6], 2);
        let p = init_params(&c, 1).unwrap();
        let limit = (6.0f64 / 16.0).sqrt();
        assert!(p.dense[0].weight.iter().all(|w| w.abs() <= limit));
    }

    #[test]
    fn config_validation() {
        let mut c = NetworkConfig::new(5, 3);
        assert!(c.validate().is_ok());
        c.latent_layer = 2;
        assert!(c.validate().is_err());
        let mut c = NetworkConfig::new(5, 3);
        c.dropout_rate = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn rate_zero_dropout_is_identity() {
        let c = small_config(false, 0.0);
        let p = init_params(&c, 3).unwrap();
        let x = array![[1.0, -2.0, 0.5], [0.3, 0.1, -0.7]];
        let train = forward(&p, &c, x.view(), Mode::Train, Dropout::Off).unwrap();
        let infer = forward(&p, &c, x.view(), Mode::Infer, Dropout::Off).unwrap();
        assert_eq!(train.logits, infer.logits);
        assert!(train.hidden[0].dropout_scale.is_none());
    }

    #[test]
    fn constant_column_normalizes_to_zero() {
        let c = small_config(true, 0.0);
        let mut p = init_params(&c, 3).unwrap();
        p.dense[0].weight.fill(0.0);
        p.dense[0].weight[[0, 0]] = 1.0;
        let x = array![[2.0, 1.0, 0.0], [2.0, 5.0, 1.0], [2.0, -1.0, 3.0]];
        let t = forward(&p, &c, x.view(), Mode::Train, Dropout::Off).unwrap();
        assert!(t.hidden[0].act_in.column(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn equal_logits_give_uniform_probabilities() {
        let logits = array![[0.3, 0.3, 0.3, 0.3]];
        let p = softmax(&logits);
        for &v in &p {
            assert_abs_diff_eq!(v, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn singleton_batch_with_batchnorm_rejected() {
        let c = small_config(true, 0.0);
        let p = init_params(&c, 3).unwrap();
        let x = array![[1.0, 2.0, 3.0]];
        assert!(forward(&p, &c, x.view(), Mode::Train, Dropout::Off).is_err());
        assert!(forward(&p, &c, x.view(), Mode::Infer, Dropout::Off).is_ok());
    }

    #[test]
    fn width_mismatch_rejected() {
        let c = small_config(false, 0.0);
        let p = init_params(&c, 3).unwrap();
        let x = array![[1.0, 2.0]];
        assert!(matches!(
            forward(&p, &c, x.view(), Mode::Infer, Dropout::Off),
            Err(NodeNetError::Shape(_))
        ));
    }

    #[test]
    fn dropout_requires_a_source_in_train_mode() {
        let c = small_config(false, 0.5);
        let p = init_params(&c, 3).unwrap();
        let x = array![[1.0, 2.0, 3.0], [0.0, 1.0, 0.0]];
        assert!(forward(&p, &c, x.view(), Mode::Train, Dropout::Off).is_err());
    }

    #[test]
    fn backward_rejects_infer_trace() {
        let c = small_config(false, 0.0);
        let p = init_params(&c, 3).unwrap();
        let x = array![[1.0, 2.0, 3.0], [0.0, 1.0, 0.0]];
        let t = forward(&p, &c, x.view(), Mode::Infer, Dropout::Off).unwrap();
        let gl = Array2::zeros((2, 2));
        let gh = Array2::zeros((2, 4));
        assert!(backward(&t, &p, &c, gl.view(), Some(gh.view())).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let c = small_config(true, 0.0);
        let p = init_params(&c, 5).unwrap();
        let x = array![[1.0, 2.0, 3.0], [0.0, 1.0, 0.0], [0.5, -1.0, 2.0]];
        let t = forward(&p, &c, x.view(), Mode::Train, Dropout::Off).unwrap();
        let g = backward(
            &t,
            &p,
            &c,
            Array2::zeros((3, 2)).view(),
            Some(Array2::zeros((3, 4)).view()),
        )
        .unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fully_dropped_unit_has_zero_outgoing_gradient() {
        let mut c = NetworkConfig::with_hidden(3, &[4, 3], 2);
        c.batchnorm = vec![false, false];
        c.dropout_rate = 0.5;
        c.latent_layer = 1;
        let p = init_params(&c, 5).unwrap();
        let x = array![[1.0, 2.0, 3.0], [0.0, 1.0, 0.0], [0.5, -1.0, 2.0]];
        let mut m0 = Array2::ones((3, 4));
        m0.column_mut(2).fill(0.0);
        let masks = vec![m0, Array2::ones((3, 3))];
        let t = forward(&p, &c, x.view(), Mode::Train, Dropout::Fixed(&masks)).unwrap();
        let gl = array![[0.3, -0.3], [-0.2, 0.2], [0.1, -0.1]];
        let g = backward(&t, &p, &c, gl.view(), None).unwrap();
        // weights leaving unit 2 of the first hidden layer
        assert!(g.dense[1].weight.row(2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cross_entropy_uniform_seven_classes() {
        let logits = Array2::zeros((1, 7));
        let (loss, _) = softmax_cross_entropy(logits.view(), &[3]).unwrap();
        assert_abs_diff_eq!(loss, 7f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(loss, 1.945_91, epsilon = 1e-5);
    }

    #[test]
    fn cross_entropy_vanishes_with_margin() {
        let mut prev = f64::INFINITY;
        for margin in [1.0, 5.0, 20.0, 50.0] {
            let logits = array![[margin, 0.0, 0.0]];
            let (loss, _) = softmax_cross_entropy(logits.view(), &[0]).unwrap();
            assert!(loss < prev);
            prev = loss;
        }
        assert!(prev < 1e-20);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let logits = Array2::zeros((1, 3));
        assert!(softmax_cross_entropy(logits.view(), &[3]).is_err());
    }

    #[test]
    fn argmax_ties_pick_lowest() {
        assert_eq!(argmax(&[0.2, 0.5, 0.3]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn running_stats_move_toward_batch() {
        let c = small_config(true, 0.0);
        let mut p = init_params(&c, 5).unwrap();
        let x = array![[1.0, 2.0, 3.0], [0.0, 1.0, 0.0], [0.5, -1.0, 2.0]];
        let t = forward(&p, &c, x.view(), Mode::Train, Dropout::Off).unwrap();
        let batch_mean = t.hidden[0].norm.as_ref().unwrap().mean.clone();
        p.update_running_stats(&t, 0.9);
        let bn = p.norms[0].as_ref().unwrap();
        for (r, b) in bn.running_mean.iter().zip(&batch_mean) {
            assert_abs_diff_eq!(*r, 0.1 * b, epsilon = 1e-15);
        }
        assert!(bn.running_var.iter().all(|&v| v >= 0.0));
    }
}
