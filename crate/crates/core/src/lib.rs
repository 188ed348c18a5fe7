//! Projected error function regularization (PER) for neural-network activations.
//!
//! PER pushes the empirical distribution of a layer's activations toward the
//! standard normal `N(0, I)`. Activations are projected onto random unit
//! directions and, in each projected line, the per-sample loss
//! `z erf(z/√2) + √(2/π) exp(-z²/2)` upper-bounds the sliced Wasserstein-1
//! distance to the Gaussian.
//!
//! Crate layout:
//!
//! * [`special_fns`]: erf, normal pdf/cdf/quantile, seeded RNG streams, sphere sampling.
//! * [`ot1d`]: exact 1-D Wasserstein-1 distances (empirical vs empirical, empirical vs Gaussian).
//! * [`sliced`]: Monte Carlo sliced Wasserstein-1 estimators.
//! * [`per`]: the PER loss, its gradient, and the backward-pass hook.
//! * [`baselines`]: L1/L2 activation penalties, batch normalization, Huber curves.
//! * [`nn`]: a small dense network with manual backpropagation and momentum SGD.
//! * [`harness`]: datasets, experiment runner, metrics CSV and JSON summary.

pub mod baselines;
pub mod error;
pub mod harness;
pub mod nn;
pub mod ot1d;
pub mod per;
pub mod sliced;
pub mod special_fns;

pub use error::{Error, Result};
