//! Projected error function regularization.
//!
//! For a projected activation `z = ⟨h, θ⟩` the per-sample loss is
//! `E|Z - z| = z erf(z/√2) + √(2/π) exp(-z²/2)` with `Z ~ N(0, 1)`, and its
//! derivative is `erf(z/√2)`. Averaging over the batch and over random
//! directions gives an upper bound on `SW1(N(0, I), ν_h)` that does not couple
//! samples in the batch.
//!
//! Two gradient entry points exist because the batch-mean loss gradient
//! carries a `1/b` that the training-time backward hook omits:
//!
//! * [`per_grad`] is the exact gradient of [`per_loss`] (includes `1/b`).
//! * [`apply_per_backward`] adds `λ g_i` with `g_i = (1/s) Σ_k erf(⟨h_i,θ_k⟩/√2) θ_k`
//!   to the upstream gradient of each sample, so it equals the gradient of
//!   `λ · b · per_loss`.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::sliced::{projections, ActivationBatch, SliceSet};
use crate::special_fns::{erf, erfc, RngStream, SQRT_2_OVER_PI};

/// Default number of Monte Carlo slices.
pub const DEFAULT_SLICES: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RegMethod {
    None,
    Per,
    L1,
    L2,
    Bn,
}

impl RegMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            RegMethod::None => "none",
            RegMethod::Per => "per",
            RegMethod::L1 => "l1",
            RegMethod::L2 => "l2",
            RegMethod::Bn => "bn",
        }
    }
}

impl fmt::Display for RegMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RegMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" | "vanilla" => Ok(RegMethod::None),
            "per" => Ok(RegMethod::Per),
            "l1" => Ok(RegMethod::L1),
            "l2" => Ok(RegMethod::L2),
            "bn" => Ok(RegMethod::Bn),
            other => Err(Error::config(format!("unknown method '{other}'"))),
        }
    }
}

/// Which tensor the regularizer hook acts on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RegTarget {
    /// `h = φ(a)`, the layer output.
    #[default]
    PostActivation,
    /// The input of the activation function.
    PreActivation,
}

#[derive(Clone, Debug)]
pub struct RegConfig {
    pub method: RegMethod,
    pub lambda: f64,
    pub slices: usize,
    /// Root of the slice streams; one sub-stream per (iteration, layer).
    pub seed: RngStream,
    pub target: RegTarget,
}

impl RegConfig {
    pub fn new(method: RegMethod, lambda: f64, slices: usize, seed: RngStream) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::config(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        if slices == 0 {
            return Err(Error::config("slices must be at least 1"));
        }
        Ok(Self {
            method,
            lambda,
            slices,
            seed,
            target: RegTarget::PostActivation,
        })
    }

    pub fn none() -> Self {
        Self {
            method: RegMethod::None,
            lambda: 0.0,
            slices: DEFAULT_SLICES,
            seed: RngStream::new(0, 0),
            target: RegTarget::PostActivation,
        }
    }

    pub fn with_target(mut self, target: RegTarget) -> Self {
        self.target = target;
        self
    }

    /// Slice stream for one layer at one training iteration.
    pub fn slice_stream(&self, iteration: u64, layer: usize) -> RngStream {
        self.seed.split(iteration).split(layer as u64)
    }
}

/// `E|Z - z|` for `Z ~ N(0, 1)`.
///
/// Evaluated as `|z| + (√(2/π) e^{-z²/2} - |z| erfc(|z|/√2))`; the bracket is
/// non-negative, so the result never drops below `|z|` in floating point.
#[inline]
pub fn per_point_loss(z: f64) -> f64 {
    let a = z.abs();
    let tail = SQRT_2_OVER_PI * (-0.5 * a * a).exp() - a * erfc(a * FRAC_1_SQRT_2);
    a + tail.max(0.0)
}

/// Derivative of [`per_point_loss`].
#[inline]
pub fn per_point_grad(z: f64) -> f64 {
    erf(z * FRAC_1_SQRT_2)
}

/// Monte Carlo PER loss `(1/(b s)) Σ_{i,k} per_point_loss(⟨h_i, θ_k⟩)`.
pub fn per_loss(batch: &ActivationBatch, slices: &SliceSet) -> Result<f64> {
    let p = projections(batch.values(), slices.directions())?;
    let total: f64 = p.iter().map(|&z| per_point_loss(z)).sum();
    Ok(total / (batch.batch_size() * slices.len()) as f64)
}

/// `(1/s) Σ_k erf(⟨h_i, θ_k⟩/√2) θ_k` for every row, without the `1/b` factor.
fn per_direction_sum(values: ArrayView2<'_, f64>, slices: &SliceSet) -> Result<Array2<f64>> {
    let mut p = projections(values, slices.directions())?;
    p.mapv_inplace(per_point_grad);
    let mut g = p.dot(&slices.directions());
    g /= slices.len() as f64;
    Ok(g)
}

/// Exact gradient of [`per_loss`] with respect to every activation.
pub fn per_grad(batch: &ActivationBatch, slices: &SliceSet) -> Result<Array2<f64>> {
    let mut g = per_direction_sum(batch.values(), slices)?;
    g /= batch.batch_size() as f64;
    Ok(g)
}

/// Backward-pass hook: `upstream + λ g` with `g` computed on the given slices.
pub fn apply_per_backward_with_slices(
    upstream: ArrayView2<'_, f64>,
    batch: &ActivationBatch,
    lambda: f64,
    slices: &SliceSet,
) -> Result<Array2<f64>> {
    if upstream.dim() != batch.values().dim() {
        return Err(Error::domain(format!(
            "upstream gradient {:?} does not match activations {:?}",
            upstream.dim(),
            batch.values().dim()
        )));
    }
    if lambda == 0.0 {
        return Ok(upstream.to_owned());
    }
    let g = per_direction_sum(batch.values(), slices)?;
    Ok(&upstream + &(g * lambda))
}

/// Backward-pass hook drawing `cfg.slices` fresh directions from `rng`.
pub fn apply_per_backward(
    upstream: ArrayView2<'_, f64>,
    batch: &ActivationBatch,
    cfg: &RegConfig,
    rng: &mut RngStream,
) -> Result<Array2<f64>> {
    if cfg.method != RegMethod::Per {
        return Err(Error::domain(format!(
            "apply_per_backward called with method '{}'",
            cfg.method
        )));
    }
    if upstream.dim() != batch.values().dim() {
        return Err(Error::domain(format!(
            "upstream gradient {:?} does not match activations {:?}",
            upstream.dim(),
            batch.values().dim()
        )));
    }
    if cfg.lambda == 0.0 {
        return Ok(upstream.to_owned());
    }
    let slices = SliceSet::sample(rng, cfg.slices, batch.dim())?;
    apply_per_backward_with_slices(upstream, batch, cfg.lambda, &slices)
}
