//! Exact Wasserstein-1 distances on the real line.
//!
//! In one dimension `W1(μ, ν) = ∫ |F_μ(x) - F_ν(x)| dx`. For two empirical
//! measures of equal size this is the mean gap between matched order
//! statistics. Against the standard normal the integral is evaluated in closed
//! form: between consecutive order statistics the empirical cdf is a constant
//! `k/b` and `x(Φ(x) - c) + φ(x)` is an antiderivative of `Φ(x) - c`.

use crate::error::{Error, Result};
use crate::special_fns::{std_normal_cdf, std_normal_pdf, std_normal_quantile, std_normal_sf};

/// A non-empty set of finite reals, viewed as a uniform empirical measure.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample1D(Vec<f64>);

impl Sample1D {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("Sample1D must be non-empty"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("Sample1D entry {i} is not finite")));
        }
        Ok(Sample1D(values))
    }

    /// Caller guarantees non-empty, finite values.
    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        debug_assert!(!values.is_empty());
        Sample1D(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    fn sorted(&self) -> Vec<f64> {
        let mut v = self.0.clone();
        v.sort_by(f64::total_cmp);
        v
    }
}

impl TryFrom<Vec<f64>> for Sample1D {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Sample1D::new(values)
    }
}

/// W1 between two empirical measures of the same size.
pub fn w1_empirical_empirical(xs: &Sample1D, ys: &Sample1D) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::domain(format!(
            "empirical W1 needs equal sizes, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    Ok(sorted_w1(&xs.sorted(), &ys.sorted()))
}

/// W1 between two already-sorted samples of equal length.
pub(crate) fn sorted_w1(xs: &[f64], ys: &[f64]) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    let total: f64 = xs.iter().zip(ys).map(|(x, y)| (x - y).abs()).sum();
    total / xs.len() as f64
}

/// W1 between the empirical measure of `xs` and `N(0, 1)`.
pub fn w1_empirical_gaussian(xs: &Sample1D) -> Result<f64> {
    w1_sorted_gaussian(&xs.sorted())
}

/// Closed-form `∫ |Φ(x) - F_emp(x)| dx` for a sorted, non-empty sample.
pub(crate) fn w1_sorted_gaussian(sorted: &[f64]) -> Result<f64> {
    let n = sorted.len();
    if n == 0 {
        return Err(Error::domain("Gaussian W1 needs a non-empty sample"));
    }
    let first = sorted[0];
    let last = sorted[n - 1];

    // (-inf, x_(1)): integrand Φ(x), antiderivative vanishes at -inf.
    let mut total = antiderivative(first, 0, n);
    // (x_(n), inf): integrand 1 - Φ(x) = -(Φ(x) - 1), antiderivative vanishes at inf.
    total += antiderivative(last, n, n);

    for k in 1..n {
        let (a, b) = (sorted[k - 1], sorted[k]);
        if a == b {
            continue;
        }
        let gap_a = cdf_gap(a, k, n);
        let gap_b = cdf_gap(b, k, n);
        if gap_a < 0.0 && gap_b > 0.0 {
            let level = k as f64 / n as f64;
            let cross = std_normal_quantile(level)?.clamp(a, b);
            let g_cross = antiderivative(cross, k, n);
            total += (g_cross - antiderivative(a, k, n)).abs();
            total += (antiderivative(b, k, n) - g_cross).abs();
        } else {
            total += (antiderivative(b, k, n) - antiderivative(a, k, n)).abs();
        }
    }
    Ok(total)
}

/// `Φ(x) - k/n`, evaluated on whichever side keeps the subtraction well conditioned.
fn cdf_gap(x: f64, k: usize, n: usize) -> f64 {
    if x < 0.0 {
        std_normal_cdf(x) - k as f64 / n as f64
    } else {
        (n - k) as f64 / n as f64 - std_normal_sf(x)
    }
}

/// `x (Φ(x) - k/n) + φ(x)`: an antiderivative of `Φ(x) - k/n`.
fn antiderivative(x: f64, k: usize, n: usize) -> f64 {
    x * cdf_gap(x, k, n) + std_normal_pdf(x)
}
