//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use ndarray::Array2;
use per_core::nn::Network;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub fn test_rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// `erf` from the all-positive series `2/√π e^{-x²} Σ 2^n x^{2n+1} / (2n+1)!!`.
fn erf_series(x: f64) -> f64 {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    while term.abs() > 1e-18 * sum.abs() {
        n += 1.0;
        term *= 2.0 * x2 / (2.0 * n + 1.0);
        sum += term;
    }
    2.0 / PI.sqrt() * (-x2).exp() * sum
}

/// `erfc(x)` for `x > 0` from its continued fraction, evaluated by modified Lentz.
fn erfc_cf(x: f64) -> f64 {
    // erfc(x) = e^{-x²}/√π · 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + 2/(x + …)))))
    let tiny = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..500 {
        let a = k as f64 / 2.0;
        d = x + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = x + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x * x).exp() / PI.sqrt() / f
}

pub fn oracle_erfc(x: f64) -> f64 {
    if x < 0.0 {
        2.0 - oracle_erfc(-x)
    } else if x < 1.5 {
        1.0 - erf_series(x)
    } else {
        erfc_cf(x)
    }
}

pub fn oracle_erf(x: f64) -> f64 {
    if x.abs() < 3.0 {
        erf_series(x)
    } else {
        x.signum() * (1.0 - erfc_cf(x.abs()))
    }
}

pub fn oracle_phi(x: f64) -> f64 {
    0.5 * oracle_erfc(-x / 2f64.sqrt())
}

pub fn oracle_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Adaptive Simpson quadrature on `[a, b]` with absolute tolerance `tol`.
pub fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Adaptive Simpson over `[a, b]` cut at every integer and at `breaks`, so
/// the initial sampling cannot step over narrow features.
pub fn simpson_pieces<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, breaks: &[f64], tol: f64) -> f64 {
    let mut pts: Vec<f64> = vec![a, b];
    pts.extend(breaks.iter().copied().filter(|&x| x > a && x < b));
    let mut k = a.ceil();
    while k < b {
        pts.push(k);
        k += 1.0;
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts.windows(2).map(|w| simpson(f, w[0], w[1], tol)).sum()
}

/// Quadrature of `E|Z - z| = ∫ |t - z| φ(t) dt`, split at the kink.
pub fn quad_abs_dev(z: f64) -> f64 {
    let f = |t: f64| (t - z).abs() * oracle_pdf(t);
    simpson_pieces(&f, z.min(0.0) - 40.0, z.max(0.0) + 40.0, &[z], 1e-14)
}

/// Quadrature of `∫ |Φ(x) - F_emp(x)| dx`; the window covers the sample and
/// the Gaussian bulk with 40 units of margin.
pub fn quad_w1_gaussian(sample: &[f64]) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    let f = |x: f64| {
        let below = xs.partition_point(|&v| v <= x);
        (oracle_phi(x) - below as f64 / n as f64).abs()
    };
    simpson_pieces(&f, xs[0].min(0.0) - 40.0, xs[n - 1].max(0.0) + 40.0, &xs, 1e-12)
}

/// A random orthogonal matrix from Gram-Schmidt on Gaussian columns.
pub fn random_orthogonal(rng: &mut impl Rng, d: usize) -> Array2<f64> {
    let mut q = Array2::<f64>::zeros((d, d));
    for j in 0..d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        for k in 0..j {
            let dot: f64 = (0..d).map(|i| v[i] * q[[i, k]]).sum();
            for i in 0..d {
                v[i] -= dot * q[[i, k]];
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for i in 0..d {
            q[[i, j]] = v[i] / norm;
        }
    }
    q
}

/// Two-sample Kolmogorov-Smirnov statistic scaled by `√(nm/(n+m))`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    d * ((n * m) as f64 / (n + m) as f64).sqrt()
}

/// Critical value of the scaled KS statistic at level 0.001.
pub const KS_CRIT_0001: f64 = 1.949;

/// Mutable references to every trainable parameter, in the order of
/// `Gradients::flatten`.
pub fn params_mut(net: &mut Network) -> Vec<&mut f64> {
    let mut out = Vec::new();
    for layer in net.hidden.iter_mut().chain(std::iter::once(&mut net.output)) {
        out.extend(layer.weights.iter_mut());
        out.extend(layer.bias.iter_mut());
        if let Some(bn) = layer.bn.as_mut() {
            out.extend(bn.gamma.iter_mut());
            out.extend(bn.beta.iter_mut());
        }
    }
    out
}

pub fn param_count(net: &Network) -> usize {
    params_mut(&mut net.clone()).len()
}

/// Central-difference gradient of `f` with respect to every parameter.
pub fn fd_gradient<F: Fn(&Network) -> f64>(net: &Network, f: F, h: f64) -> Vec<f64> {
    let n = param_count(net);
    (0..n)
        .map(|i| {
            let mut plus = net.clone();
            *params_mut(&mut plus)[i] += h;
            let mut minus = net.clone();
            *params_mut(&mut minus)[i] -= h;
            (f(&plus) - f(&minus)) / (2.0 * h)
        })
        .collect()
}

/// `‖a - b‖ / max(‖a‖, ‖b‖, tiny)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-300)
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

use per_core::nn::{backward, forward, init_network, regularized_objective, Activation, Init, Mode, NetworkSpec, SliceSource};
use per_core::per::{RegConfig, RegMethod, RegTarget};
use per_core::sliced::SliceSet;
use per_core::special_fns::RngStream;

pub const ALL_ACTIVATIONS: [Activation; 4] =
    [Activation::Relu, Activation::LeakyRelu, Activation::Elu, Activation::Identity];

/// Method names used by the network gradient checks; `"bn"` means a
/// batch-normalized network without an activation penalty.
pub const ALL_METHODS: [&str; 5] = ["none", "per", "l1", "l2", "bn"];

/// Relative error between backpropagated and central-difference gradients
/// of the full regularized objective on a small random network.
pub fn network_fd_error(activation: Activation, method: &str, target: RegTarget, seed: u64) -> f64 {
    let mut rng = RngStream::new(seed, 77);
    let bn = method == "bn";
    let spec = NetworkSpec {
        input_dim: 3,
        hidden_widths: vec![6, 5],
        classes: 3,
        activation,
        batch_norm: bn,
    };
    let mut net = init_network(&spec, Init::He, &mut rng).unwrap();
    let mut trng = test_rng(seed);
    for layer in net.hidden.iter_mut() {
        layer.bias.mapv_inplace(|_| trng.random_range(-0.3..0.3));
        if let Some(state) = layer.bn.as_mut() {
            state.gamma.mapv_inplace(|_| trng.random_range(0.5..1.5));
            state.beta.mapv_inplace(|_| trng.random_range(-0.5..0.5));
        }
    }
    let b = 4;
    let x = Array2::from_shape_simple_fn((b, 3), || trng.sample::<f64, _>(rand_distr::StandardNormal));
    let y: Vec<usize> = (0..b).map(|i| i % 3).collect();
    let reg_method = match method {
        "none" | "bn" => RegMethod::None,
        other => other.parse().unwrap(),
    };
    let lambda = if reg_method == RegMethod::None { 0.0 } else { 0.1 };
    let reg = RegConfig::new(reg_method, lambda, 7, RngStream::new(seed, 5))
        .unwrap()
        .with_target(target);
    let frozen: Vec<SliceSet> = spec
        .hidden_widths
        .iter()
        .enumerate()
        .map(|(l, &w)| SliceSet::sample(&mut RngStream::new(seed, 100 + l as u64), 7, w).unwrap())
        .collect();

    let cache = forward(&net, x.view(), Mode::Train).unwrap();
    let analytic = backward(&net, &cache, &y, &reg, SliceSource::Frozen(&frozen))
        .unwrap()
        .flatten();
    let numeric = fd_gradient(
        &net,
        |n| regularized_objective(n, x.view(), &y, &reg, &frozen).unwrap(),
        1e-5,
    );
    rel_err(&analytic, &numeric)
}
