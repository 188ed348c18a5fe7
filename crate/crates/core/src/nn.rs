//! Dense feed-forward network `h^l = φ(W^l h^{l-1} + b^l)` with a softmax
//! cross-entropy head, hand-written backpropagation and momentum SGD.
//!
//! Regularizers hook into the backward pass at each hidden layer: the
//! gradient flowing into the layer output `h^l` is modified before it passes
//! through `φ'` (or, with [`RegTarget::PreActivation`], right after).

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::baselines::{
    bn_apply, bn_backward, bn_update_running, lp_activation_penalty, BnCache, BnState,
    PenaltyOrder,
};
use crate::error::{Error, Result};
use crate::per::{
    apply_per_backward, apply_per_backward_with_slices, per_loss, RegConfig, RegMethod, RegTarget,
};
use crate::sliced::{ActivationBatch, SliceSet};
use crate::special_fns::RngStream;

pub const LEAKY_RELU_SLOPE: f64 = 0.01;
pub const ELU_ALPHA: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    LeakyRelu,
    Elu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Relu => a.max(0.0),
            Activation::LeakyRelu => {
                if a > 0.0 {
                    a
                } else {
                    LEAKY_RELU_SLOPE * a
                }
            }
            Activation::Elu => {
                if a > 0.0 {
                    a
                } else {
                    ELU_ALPHA * a.exp_m1()
                }
            }
            Activation::Identity => a,
        }
    }

    /// `φ'(a)`, given the input `a` and output `h = φ(a)`.
    #[inline]
    pub fn derivative(self, a: f64, h: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if a > 0.0 {
                    1.0
                } else {
                    LEAKY_RELU_SLOPE
                }
            }
            Activation::Elu => {
                if a > 0.0 {
                    1.0
                } else {
                    h + ELU_ALPHA
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::LeakyRelu => "leaky_relu",
            Activation::Elu => "elu",
            Activation::Identity => "identity",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "relu" => Ok(Activation::Relu),
            "leaky_relu" | "leakyrelu" => Ok(Activation::LeakyRelu),
            "elu" => Ok(Activation::Elu),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::config(format!("unknown activation '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Init {
    #[default]
    He,
    Glorot,
}

impl FromStr for Init {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "he" => Ok(Init::He),
            "glorot" | "xavier" => Ok(Init::Glorot),
            other => Err(Error::config(format!("unknown init '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    /// `d_out × d_in`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
    /// Batch normalization between the affine map and `φ`.
    pub bn: Option<BnState>,
}

impl DenseLayer {
    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub hidden: Vec<DenseLayer>,
    /// Logit layer (identity activation, never batch-normalized).
    pub output: DenseLayer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub classes: usize,
    pub activation: Activation,
    pub batch_norm: bool,
}

impl Network {
    pub fn input_dim(&self) -> usize {
        self.hidden[0].input_dim()
    }

    pub fn classes(&self) -> usize {
        self.output.output_dim()
    }

    pub fn num_hidden(&self) -> usize {
        self.hidden.len()
    }

    fn layers(&self) -> impl Iterator<Item = &DenseLayer> {
        self.hidden.iter().chain(std::iter::once(&self.output))
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut DenseLayer> {
        self.hidden.iter_mut().chain(std::iter::once(&mut self.output))
    }

    /// Folds the batch statistics of a training-mode forward pass into the
    /// running averages of every batch-norm layer.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        for (layer, bn_cache) in self.hidden.iter_mut().zip(&cache.bn_caches) {
            if let (Some(state), Some(c)) = (layer.bn.as_mut(), bn_cache) {
                bn_update_running(state, c);
            }
        }
    }
}

/// He-uniform or Glorot-uniform weights, zero biases.
pub fn init_network(spec: &NetworkSpec, init: Init, rng: &mut RngStream) -> Result<Network> {
    if spec.hidden_widths.is_empty() {
        return Err(Error::domain("network needs at least one hidden layer"));
    }
    if spec.input_dim == 0 || spec.classes == 0 || spec.hidden_widths.contains(&0) {
        return Err(Error::domain(format!(
            "network widths must be positive: input {}, hidden {:?}, classes {}",
            spec.input_dim, spec.hidden_widths, spec.classes
        )));
    }
    let mut make = |d_in: usize, d_out: usize, activation: Activation, bn: bool| {
        let limit = match init {
            Init::He => (6.0 / d_in as f64).sqrt(),
            Init::Glorot => (6.0 / (d_in + d_out) as f64).sqrt(),
        };
        let weights = Array2::from_shape_simple_fn((d_out, d_in), || rng.random_range(-limit..limit));
        DenseLayer {
            weights,
            bias: Array1::zeros(d_out),
            activation,
            bn: bn.then(|| BnState::new(d_out)),
        }
    };
    let mut hidden = Vec::with_capacity(spec.hidden_widths.len());
    let mut d_in = spec.input_dim;
    for &w in &spec.hidden_widths {
        hidden.push(make(d_in, w, spec.activation, spec.batch_norm));
        d_in = w;
    }
    let output = make(d_in, spec.classes, Activation::Identity, false);
    Ok(Network { hidden, output })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm.
    Train,
    /// Running statistics in batch norm.
    Eval,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub inputs: Array2<f64>,
    /// Input of `φ` per hidden layer (after batch norm when present).
    pub act_inputs: Vec<ActivationBatch>,
    /// Post-activation `h^l` per hidden layer, `l = 1..L`.
    pub activations: Vec<ActivationBatch>,
    pub bn_caches: Vec<Option<BnCache>>,
    pub logits: Array2<f64>,
}

fn affine(x: ArrayView2<'_, f64>, layer: &DenseLayer) -> Array2<f64> {
    x.dot(&layer.weights.t()) + &layer.bias
}

/// Runs the network on a batch. Running batch-norm statistics are not
/// updated here; see [`Network::update_running_stats`].
pub fn forward(net: &Network, inputs: ArrayView2<'_, f64>, mode: Mode) -> Result<ForwardCache> {
    if inputs.ncols() != net.input_dim() {
        return Err(Error::domain(format!(
            "input width {} does not match network input {}",
            inputs.ncols(),
            net.input_dim()
        )));
    }
    if inputs.nrows() == 0 {
        return Err(Error::domain("forward needs a non-empty batch"));
    }
    let mut act_inputs = Vec::with_capacity(net.hidden.len());
    let mut activations: Vec<ActivationBatch> = Vec::with_capacity(net.hidden.len());
    let mut bn_caches = Vec::with_capacity(net.hidden.len());
    for (l, layer) in net.hidden.iter().enumerate() {
        let prev = activations.last().map_or(inputs, |h| h.values());
        let mut a = affine(prev, layer);
        let bn_cache = match &layer.bn {
            Some(state) => {
                let (out, c) = bn_apply(a.view(), state, mode == Mode::Train)?;
                a = out;
                Some(c)
            }
            None => None,
        };
        let h = a.mapv(|v| layer.activation.apply(v));
        act_inputs.push(ActivationBatch::from_array_unchecked(a, l + 1));
        activations.push(ActivationBatch::from_array_unchecked(h, l + 1));
        bn_caches.push(bn_cache);
    }
    let last = activations.last().map_or(inputs, |h| h.values());
    let logits = affine(last, &net.output);
    Ok(ForwardCache {
        inputs: inputs.to_owned(),
        act_inputs,
        activations,
        bn_caches,
        logits,
    })
}

fn check_labels(logits: &Array2<f64>, labels: &[usize]) -> Result<()> {
    if labels.len() != logits.nrows() {
        return Err(Error::domain(format!(
            "{} labels for a batch of {}",
            labels.len(),
            logits.nrows()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= logits.ncols()) {
        return Err(Error::domain(format!("label {bad} out of range for {} classes", logits.ncols())));
    }
    Ok(())
}

/// Mean softmax cross-entropy of `logits` against integer labels.
pub fn mean_cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    check_labels(logits, labels)?;
    let total: f64 = logits
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &y)| {
            let m = row.fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - row[y]
        })
        .sum();
    Ok(total / labels.len() as f64)
}

/// Gradient of [`mean_cross_entropy`] with respect to the logits.
fn cross_entropy_grad(logits: &Array2<f64>, labels: &[usize]) -> Array2<f64> {
    let b = labels.len() as f64;
    let mut g = logits.clone();
    for (mut row, &y) in g.rows_mut().into_iter().zip(labels) {
        let m = row.fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z / b);
        row[y] -= 1.0 / b;
    }
    g
}

/// Fraction of rows whose arg-max logit equals the label.
pub fn accuracy(logits: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    check_labels(logits, labels)?;
    let correct = logits
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &y)| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best == y
        })
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub gamma: Option<Array1<f64>>,
    pub beta: Option<Array1<f64>>,
}

/// One [`LayerGrads`] per layer, hidden layers first then the output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        let layers = net
            .layers()
            .map(|l| LayerGrads {
                weights: Array2::zeros(l.weights.raw_dim()),
                bias: Array1::zeros(l.bias.len()),
                gamma: l.bn.as_ref().map(|s| Array1::zeros(s.dim())),
                beta: l.bn.as_ref().map(|s| Array1::zeros(s.dim())),
            })
            .collect();
        Self { layers }
    }

    fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|l| {
            [
                Some(l.weights.as_slice().expect("standard layout")),
                Some(l.bias.as_slice().expect("standard layout")),
                l.gamma.as_ref().map(|g| g.as_slice().expect("standard layout")),
                l.beta.as_ref().map(|g| g.as_slice().expect("standard layout")),
            ]
            .into_iter()
            .flatten()
        })
    }

    /// All entries in a fixed order (weights, bias, gamma, beta per layer).
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().flat_map(|t| t.iter().copied()).collect()
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .flat_map(|t| t.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

/// Where the PER hook gets its directions.
#[derive(Clone, Copy, Debug)]
pub enum SliceSource<'a> {
    /// Fresh slices from `reg.slice_stream(iteration, layer)`.
    Sample { iteration: u64 },
    /// Fixed slices, one set per hidden layer (for deterministic checks).
    Frozen(&'a [SliceSet]),
}

fn regularizer_hook(
    upstream: Array2<f64>,
    act: &ActivationBatch,
    layer: usize,
    reg: &RegConfig,
    slices: SliceSource<'_>,
) -> Result<Array2<f64>> {
    if reg.lambda == 0.0 {
        return Ok(upstream);
    }
    match reg.method {
        RegMethod::None | RegMethod::Bn => Ok(upstream),
        RegMethod::Per => match slices {
            SliceSource::Sample { iteration } => {
                let mut rng = reg.slice_stream(iteration, layer);
                apply_per_backward(upstream.view(), act, reg, &mut rng)
            }
            SliceSource::Frozen(sets) => {
                let set = sets.get(layer).ok_or_else(|| {
                    Error::domain(format!("no frozen slice set for hidden layer {layer}"))
                })?;
                apply_per_backward_with_slices(upstream.view(), act, reg.lambda, set)
            }
        },
        RegMethod::L1 | RegMethod::L2 => {
            let order = if reg.method == RegMethod::L1 {
                PenaltyOrder::L1
            } else {
                PenaltyOrder::L2
            };
            let (_, g) = lp_activation_penalty(act.values(), order, reg.lambda);
            Ok(upstream + g)
        }
    }
}

/// Gradients of the mean cross-entropy, with the regularizer of `reg`
/// injected at every hidden layer.
pub fn backward(
    net: &Network,
    cache: &ForwardCache,
    labels: &[usize],
    reg: &RegConfig,
    slices: SliceSource<'_>,
) -> Result<Gradients> {
    check_labels(&cache.logits, labels)?;
    let n_hidden = net.hidden.len();
    let mut layers: Vec<Option<LayerGrads>> = vec![None; n_hidden + 1];

    let grad_logits = cross_entropy_grad(&cache.logits, labels);
    let last = cache.activations[n_hidden - 1].values();
    layers[n_hidden] = Some(LayerGrads {
        weights: grad_logits.t().dot(&last),
        bias: grad_logits.sum_axis(Axis(0)),
        gamma: None,
        beta: None,
    });
    let mut upstream = grad_logits.dot(&net.output.weights);

    for l in (0..n_hidden).rev() {
        let layer = &net.hidden[l];
        let act = &cache.activations[l];
        let act_in = &cache.act_inputs[l];
        if reg.target == RegTarget::PostActivation {
            upstream = regularizer_hook(upstream, act, l, reg, slices)?;
        }
        let mut grad_a = upstream;
        Zip::from(&mut grad_a)
            .and(&act_in.values())
            .and(&act.values())
            .for_each(|g, &a, &h| *g *= layer.activation.derivative(a, h));
        if reg.target == RegTarget::PreActivation {
            grad_a = regularizer_hook(grad_a, act_in, l, reg, slices)?;
        }
        let (grad_a, gamma, beta) = match &cache.bn_caches[l] {
            Some(c) => {
                let (gx, gg, gb) = bn_backward(grad_a.view(), c)?;
                (gx, Some(gg), Some(gb))
            }
            None => (grad_a, None, None),
        };
        let prev = if l == 0 {
            cache.inputs.view()
        } else {
            cache.activations[l - 1].values()
        };
        layers[l] = Some(LayerGrads {
            weights: grad_a.t().dot(&prev),
            bias: grad_a.sum_axis(Axis(0)),
            gamma,
            beta,
        });
        upstream = if l > 0 {
            grad_a.dot(&layer.weights)
        } else {
            Array2::zeros((0, 0))
        };
    }
    Ok(Gradients {
        layers: layers.into_iter().map(|g| g.expect("every layer visited")).collect(),
    })
}

/// The scalar whose exact gradient [`backward`] returns when the PER slices
/// are held fixed: data loss plus the per-layer regularizer terms
/// (`λ · b · per_loss` for PER, the activation penalty for L1/L2).
pub fn regularized_objective(
    net: &Network,
    inputs: ArrayView2<'_, f64>,
    labels: &[usize],
    reg: &RegConfig,
    frozen: &[SliceSet],
) -> Result<f64> {
    let cache = forward(net, inputs, Mode::Train)?;
    let mut total = mean_cross_entropy(&cache.logits, labels)?;
    if reg.lambda == 0.0 {
        return Ok(total);
    }
    for l in 0..net.hidden.len() {
        let act = match reg.target {
            RegTarget::PostActivation => &cache.activations[l],
            RegTarget::PreActivation => &cache.act_inputs[l],
        };
        total += match reg.method {
            RegMethod::None | RegMethod::Bn => 0.0,
            RegMethod::Per => {
                let set = frozen.get(l).ok_or_else(|| {
                    Error::domain(format!("no frozen slice set for hidden layer {l}"))
                })?;
                reg.lambda * act.batch_size() as f64 * per_loss(act, set)?
            }
            RegMethod::L1 => lp_activation_penalty(act.values(), PenaltyOrder::L1, reg.lambda).0,
            RegMethod::L2 => lp_activation_penalty(act.values(), PenaltyOrder::L2, reg.lambda).0,
        };
    }
    Ok(total)
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_clip_norm: Option<f64>,
    pub reg: RegConfig,
    pub init: Init,
    /// Root stream for minibatch shuffling.
    pub seed: RngStream,
}

impl TrainConfig {
    pub fn validate(&self, batch_norm: bool) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.batch_size == 0 || (batch_norm && self.batch_size < 2) {
            return Err(Error::config(format!(
                "batch_size {} too small{}",
                self.batch_size,
                if batch_norm { " for batch norm" } else { "" }
            )));
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0) {
                return Err(Error::config(format!("grad_clip_norm must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// Classical momentum: `v ← μ v + g`, `θ ← θ - lr v`, after optional
/// global-norm clipping of `g`.
pub fn sgd_step(net: &mut Network, grads: &Gradients, cfg: &TrainConfig, velocity: &mut Gradients) {
    let scale = match cfg.grad_clip_norm {
        Some(max) => {
            let norm = grads.global_norm();
            if norm > max {
                max / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    let (lr, mu) = (cfg.lr, cfg.momentum);
    let update = |p: &mut f64, v: &mut f64, &g: &f64| {
        *v = mu * *v + scale * g;
        *p -= lr * *v;
    };
    for ((layer, g), v) in net.layers_mut().zip(&grads.layers).zip(&mut velocity.layers) {
        Zip::from(&mut layer.weights).and(&mut v.weights).and(&g.weights).for_each(update);
        Zip::from(&mut layer.bias).and(&mut v.bias).and(&g.bias).for_each(update);
        if let (Some(state), Some(gg), Some(gb), Some(vg), Some(vb)) = (
            layer.bn.as_mut(),
            g.gamma.as_ref(),
            g.beta.as_ref(),
            v.gamma.as_mut(),
            v.beta.as_mut(),
        ) {
            Zip::from(&mut state.gamma).and(vg).and(gg).for_each(update);
            Zip::from(&mut state.beta).and(vb).and(gb).for_each(update);
        }
    }
}

const SHUFFLE_TAG: u64 = 0x5348_5546;

/// Owns a network and its optimizer state across epochs.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub net: Network,
    pub cfg: TrainConfig,
    velocity: Gradients,
    iteration: u64,
    shuffle: RngStream,
}

impl Trainer {
    pub fn new(net: Network, cfg: TrainConfig) -> Result<Self> {
        cfg.validate(net.hidden.iter().any(|l| l.bn.is_some()))?;
        let velocity = Gradients::zeros_like(&net);
        let shuffle = cfg.seed.split(SHUFFLE_TAG);
        Ok(Self {
            net,
            cfg,
            velocity,
            iteration: 0,
            shuffle,
        })
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// One pass over `(x, y)` in shuffled minibatches. Returns the mean
    /// minibatch loss; a non-finite loss aborts with [`Error::NumericalAbort`].
    pub fn train_epoch(&mut self, x: ArrayView2<'_, f64>, y: &[usize]) -> Result<f64> {
        if x.nrows() != y.len() {
            return Err(Error::domain(format!("{} rows but {} labels", x.nrows(), y.len())));
        }
        let has_bn = self.net.hidden.iter().any(|l| l.bn.is_some());
        let mut order: Vec<usize> = (0..y.len()).collect();
        order.shuffle(&mut self.shuffle);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for idx in order.chunks(self.cfg.batch_size) {
            if has_bn && idx.len() < 2 {
                continue;
            }
            let xb = x.select(Axis(0), idx);
            let yb: Vec<usize> = idx.iter().map(|&i| y[i]).collect();
            let cache = forward(&self.net, xb.view(), Mode::Train)?;
            let loss = mean_cross_entropy(&cache.logits, &yb)?;
            if !loss.is_finite() {
                return Err(Error::NumericalAbort(format!(
                    "non-finite training loss at iteration {}",
                    self.iteration
                )));
            }
            let grads = backward(
                &self.net,
                &cache,
                &yb,
                &self.cfg.reg,
                SliceSource::Sample {
                    iteration: self.iteration,
                },
            )?;
            self.net.update_running_stats(&cache);
            sgd_step(&mut self.net, &grads, &self.cfg, &mut self.velocity);
            loss_sum += loss;
            batches += 1;
            self.iteration += 1;
        }
        Ok(if batches == 0 { 0.0 } else { loss_sum / batches as f64 })
    }
}
