//! Comparator methods: L1/L2 activation penalties, batch normalization with an
//! `L^p` normalizer, and the Huber / Pseudo-Huber reference curves.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::sliced::ActivationBatch;

/// Denominator floor for normalization.
pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PenaltyOrder {
    L1,
    L2,
}

/// `sign(x)` with `sign(0) = 0` (the L1 subgradient choice at the kink).
#[inline]
fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Activation-norm penalty `λ (1/b) Σ_{i,j} |h_ij|^p` and its gradient.
pub fn lp_activation_penalty(
    batch: ArrayView2<'_, f64>,
    order: PenaltyOrder,
    lambda: f64,
) -> (f64, Array2<f64>) {
    let scale = lambda / batch.nrows().max(1) as f64;
    match order {
        PenaltyOrder::L1 => {
            let loss = scale * batch.iter().map(|h| h.abs()).sum::<f64>();
            (loss, batch.mapv(|h| scale * sign0(h)))
        }
        PenaltyOrder::L2 => {
            let loss = scale * batch.iter().map(|h| h * h).sum::<f64>();
            (loss, batch.mapv(|h| scale * 2.0 * h))
        }
    }
}

/// Centers a column and divides by its `L^p` deviation `((1/b) Σ|h - μ|^p)^{1/p}`.
///
/// The denominator is floored at [`BN_EPSILON`], so a constant column maps to zeros.
pub fn lp_normalize(column: &[f64], p: f64) -> Result<Vec<f64>> {
    let b = column.len();
    if b < 2 {
        return Err(Error::domain(format!("lp_normalize needs at least 2 values, got {b}")));
    }
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::domain(format!("lp_normalize needs finite p >= 1, got {p}")));
    }
    let mean = column.iter().sum::<f64>() / b as f64;
    let dev: Vec<f64> = column.iter().map(|h| h - mean).collect();
    let moment = dev.iter().map(|d| d.abs().powf(p)).sum::<f64>() / b as f64;
    let denom = moment.powf(1.0 / p).max(BN_EPSILON);
    Ok(dev.into_iter().map(|d| d / denom).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct BnState {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    /// Running `p`-th absolute central moment (the variance for `p = 2`).
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub epsilon: f64,
    pub order_p: f64,
}

impl BnState {
    pub fn new(d: usize) -> Self {
        Self {
            gamma: Array1::ones(d),
            beta: Array1::zeros(d),
            running_mean: Array1::zeros(d),
            running_var: Array1::ones(d),
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
            order_p: 2.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }
}

/// Values saved by [`bn_forward`] for [`bn_backward`].
#[derive(Clone, Debug)]
pub struct BnCache {
    normalized: Array2<f64>,
    centered: Array2<f64>,
    /// `(m_j + ε)^{1/p}` per unit.
    denom: Array1<f64>,
    /// `m_j + ε` per unit.
    moment_eps: Array1<f64>,
    gamma: Array1<f64>,
    order_p: f64,
    /// Batch mean and `p`-th moment, present in training mode.
    batch_stats: Option<(Array1<f64>, Array1<f64>)>,
}

/// `ψ(h) = γ ξ(h) + β` per unit, with `ξ` from batch statistics in training
/// mode and running statistics otherwise. Training mode also folds the batch
/// statistics into the running averages.
pub fn bn_forward(
    batch: &ActivationBatch,
    state: &mut BnState,
    training: bool,
) -> Result<(ActivationBatch, BnCache)> {
    let (out, cache) = bn_apply(batch.values(), state, training)?;
    bn_update_running(state, &cache);
    Ok((ActivationBatch::from_array_unchecked(out, batch.layer_index()), cache))
}

/// Forward map without touching the running statistics.
pub(crate) fn bn_apply(
    x: ArrayView2<'_, f64>,
    state: &BnState,
    training: bool,
) -> Result<(Array2<f64>, BnCache)> {
    let (b, d) = x.dim();
    if d != state.dim() {
        return Err(Error::domain(format!("batch norm width {} does not match input {d}", state.dim())));
    }
    let p = state.order_p;
    let (mean, moment) = if training {
        if b < 2 {
            return Err(Error::domain("batch norm in training mode needs at least 2 samples"));
        }
        let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
        let moment = (&x - &mean)
            .mapv(|v| abs_pow(v, p))
            .mean_axis(Axis(0))
            .expect("non-empty batch");
        (mean, moment)
    } else {
        (state.running_mean.clone(), state.running_var.clone())
    };
    let centered = &x - &mean;
    let moment_eps = moment.mapv(|m| m + state.epsilon);
    let denom = moment_eps.mapv(|m| m.powf(1.0 / p));
    let normalized = &centered / &denom;
    let out = &normalized * &state.gamma + &state.beta;
    let cache = BnCache {
        normalized,
        centered,
        denom,
        moment_eps,
        gamma: state.gamma.clone(),
        order_p: p,
        batch_stats: training.then_some((mean, moment)),
    };
    Ok((out, cache))
}

/// Exponential moving average of the batch statistics held in `cache`.
pub(crate) fn bn_update_running(state: &mut BnState, cache: &BnCache) {
    if let Some((mean, moment)) = &cache.batch_stats {
        let keep = 1.0 - state.momentum;
        state.running_mean = &state.running_mean * keep + mean * state.momentum;
        state.running_var = &state.running_var * keep + moment * state.momentum;
    }
}

#[inline]
fn abs_pow(v: f64, p: f64) -> f64 {
    if p == 2.0 {
        v * v
    } else {
        v.abs().powf(p)
    }
}

/// Derivative of `|v|^p` divided by `p`: `sign(v) |v|^{p-1}`.
#[inline]
fn abs_pow_slope(v: f64, p: f64) -> f64 {
    if p == 2.0 {
        v
    } else {
        sign0(v) * v.abs().powf(p - 1.0)
    }
}

/// Gradients of [`bn_forward`] with respect to its input, `γ` and `β`.
pub fn bn_backward(
    upstream: ArrayView2<'_, f64>,
    cache: &BnCache,
) -> Result<(Array2<f64>, Array1<f64>, Array1<f64>)> {
    if upstream.dim() != cache.normalized.dim() {
        return Err(Error::domain(format!(
            "upstream gradient {:?} does not match cached batch {:?}",
            upstream.dim(),
            cache.normalized.dim()
        )));
    }
    let b = upstream.nrows() as f64;
    let grad_beta = upstream.sum_axis(Axis(0));
    let grad_gamma = (&upstream * &cache.normalized).sum_axis(Axis(0));
    let grad_norm = &upstream * &cache.gamma;

    if cache.batch_stats.is_none() {
        return Ok((&grad_norm / &cache.denom, grad_gamma, grad_beta));
    }

    let p = cache.order_p;
    // dL/dD_j, then through D = (m + ε)^{1/p} and m = (1/b) Σ |c|^p.
    let grad_denom = -(&grad_norm * &cache.centered).sum_axis(Axis(0)) / cache.denom.mapv(|v| v * v);
    let grad_moment_coef = &grad_denom * &cache.denom / &cache.moment_eps / b;
    let slope = cache.centered.mapv(|c| abs_pow_slope(c, p));
    let grad_centered = &grad_norm / &cache.denom + &slope * &grad_moment_coef;
    let mean_grad = grad_centered.mean_axis(Axis(0)).expect("non-empty batch");
    Ok((grad_centered - &mean_grad, grad_gamma, grad_beta))
}

/// `x²/2` for `|x| ≤ 1`, `|x| - 1/2` otherwise.
pub fn huber(x: f64) -> f64 {
    if x.abs() <= 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

/// `√(1 + x²) - 1`.
pub fn pseudo_huber(x: f64) -> f64 {
    (1.0 + x * x).sqrt() - 1.0
}
