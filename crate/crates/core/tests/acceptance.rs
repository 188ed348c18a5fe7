mod common;

use std::time::{Duration, Instant};

use common::*;
use ndarray::Array2;
use per_core::baselines::lp_normalize;
use per_core::harness::*;
use per_core::ot1d::*;
use per_core::per::{per_loss, per_point_grad, per_point_loss, RegMethod, RegTarget};
use per_core::sliced::*;
use per_core::special_fns::{RngStream, SQRT_2_OVER_PI};
use rand::Rng;

struct Report {
    failed: Vec<u32>,
}

impl Report {
    fn check(&mut self, id: u32, name: &str, ok: bool, detail: String) {
        println!("{} [{id}] {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failed.push(id);
        }
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn closed_forms() -> (bool, String) {
    let start = Instant::now();
    let mut worst_point = 0.0f64;
    for i in 0..=120 {
        let z = -6.0 + 0.1 * i as f64;
        worst_point = worst_point.max((per_point_loss(z) - quad_abs_dev(z)).abs());
    }
    let mut rng = test_rng(101);
    let mut worst_sample = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=64);
        let shift = rng.random_range(-2.0..2.0);
        let scale = rng.random_range(0.1..3.0);
        let xs: Vec<f64> = (0..n)
            .map(|_| shift + scale * rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let w = w1_empirical_gaussian(&Sample1D::new(xs.clone()).unwrap()).unwrap();
        worst_sample = worst_sample.max((w - quad_w1_gaussian(&xs)).abs());
    }
    let t = start.elapsed();
    (
        worst_point <= 1e-8 && worst_sample <= 1e-9 && t < Duration::from_secs(10),
        format!("point err {worst_point:.2e}, sample err {worst_sample:.2e}, {:.2}s", secs(t)),
    )
}

fn gradients() -> (bool, String) {
    let start = Instant::now();
    let h = 1e-5;
    let mut worst_point = 0.0f64;
    for i in 0..=120 {
        let z = -6.0 + 0.1 * i as f64;
        let fd = (per_point_loss(z + h) - per_point_loss(z - h)) / (2.0 * h);
        worst_point = worst_point.max((fd - per_point_grad(z)).abs());
        worst_point = worst_point.max((per_point_grad(z) - oracle_erf(z / 2f64.sqrt())).abs());
    }
    let mut worst_net = 0.0f64;
    for (i, act) in ALL_ACTIVATIONS.iter().enumerate() {
        for (j, method) in ALL_METHODS.iter().enumerate() {
            let e = network_fd_error(*act, method, RegTarget::PostActivation, (10 * i + j) as u64);
            worst_net = worst_net.max(e);
        }
    }
    let t = start.elapsed();
    (
        worst_point <= 1e-6 && worst_net <= 1e-5 && t < Duration::from_secs(60),
        format!("scalar err {worst_point:.2e}, network rel err {worst_net:.2e}, {:.2}s", secs(t)),
    )
}

fn random_batch(rng: &mut impl Rng, b: usize, d: usize) -> ActivationBatch {
    let shift: f64 = rng.random_range(-2.0..2.0);
    let scale: f64 = rng.random_range(0.1..3.0);
    let v = Array2::from_shape_simple_fn((b, d), || shift + scale * rng.sample::<f64, _>(rand_distr::StandardNormal));
    ActivationBatch::new(v, 1).unwrap()
}

fn minkowski() -> (bool, String) {
    let mut rng = test_rng(103);
    let mut violations = 0;
    let mut min_gap = f64::INFINITY;
    for i in 0..200 {
        let b = rng.random_range(1..=64);
        let d = rng.random_range(1..=16);
        let s = rng.random_range(1..=128);
        let batch = random_batch(&mut rng, b, d);
        let slices = SliceSet::sample(&mut RngStream::new(1000 + i, 0), s, d).unwrap();
        let sw = sw1_to_gaussian(&batch, &slices).unwrap();
        let per = per_loss(&batch, &slices).unwrap();
        min_gap = min_gap.min(per - sw);
        if sw > per + 1e-9 {
            violations += 1;
        }
    }
    (violations == 0, format!("{violations} violations in 200 batches, min gap {min_gap:.2e}"))
}

fn metric_properties() -> (bool, String) {
    let mut rng = test_rng(104);
    let mut asym = 0;
    let mut tri = 0;
    let mut worst_shift = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..=50);
        let draw = |rng: &mut rand_chacha::ChaCha20Rng| {
            let c = rng.random_range(-5.0..5.0);
            let s = rng.random_range(0.1..4.0);
            Sample1D::new((0..n).map(|_| c + s * rng.random_range(-1.0..1.0)).collect()).unwrap()
        };
        let (x, y, z) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
        let xy = w1_empirical_empirical(&x, &y).unwrap();
        if xy != w1_empirical_empirical(&y, &x).unwrap() {
            asym += 1;
        }
        let xz = w1_empirical_empirical(&x, &z).unwrap();
        let yz = w1_empirical_empirical(&y, &z).unwrap();
        if xz > xy + yz + 1e-12 {
            tri += 1;
        }
        let c = rng.random_range(-10.0..10.0);
        let shifted = Sample1D::new(x.values().iter().map(|v| v + c).collect()).unwrap();
        let w = w1_empirical_empirical(&x, &shifted).unwrap();
        worst_shift = worst_shift.max((w - f64::abs(c)).abs());
    }
    (
        asym == 0 && tri == 0 && worst_shift <= 1e-12,
        format!("{asym} asymmetric, {tri} triangle violations, shift err {worst_shift:.2e}"),
    )
}

fn monte_carlo_scaling() -> (bool, String) {
    let mut rng = test_rng(105);
    let batch = random_batch(&mut rng, 32, 8);
    let estimates = |s: usize| -> Vec<f64> {
        (0..50)
            .map(|seed| {
                let slices = SliceSet::sample(&mut RngStream::new(seed, 7_000 + s as u64), s, 8).unwrap();
                sw1_to_gaussian(&batch, &slices).unwrap()
            })
            .collect()
    };
    let (_, a) = mean_std(&estimates(256));
    let (_, b) = mean_std(&estimates(2304));
    let ratio = a / b;
    ((2.0..=4.5).contains(&ratio), format!("std ratio {ratio:.3}"))
}

fn curves() -> (bool, String) {
    let rows = loss_curve_rows();
    let at = |x: f64| rows.iter().find(|r| (r[0] - x).abs() < 1e-9).unwrap();
    let origin = at(0.0)[1] == 0.0;
    let mut worst_tail = 0.0f64;
    for r in rows.iter().filter(|r| r[0].abs() >= 3.0 - 1e-12) {
        let loss = r[1] + SQRT_2_OVER_PI;
        worst_tail = worst_tail.max((loss - r[0].abs()).abs());
    }
    for i in 0..=200 {
        let x = 3.0 + 0.01 * i as f64;
        worst_tail = worst_tail.max((per_point_loss(x) - x).abs());
        worst_tail = worst_tail.max((per_point_loss(-x) - x).abs());
    }
    let sat = (per_point_grad(5.0) - 1.0).abs().max((per_point_grad(-5.0) + 1.0).abs());
    (
        origin && worst_tail <= 1e-3 && sat <= 1e-6,
        format!("value at 0 = {}, tail gap {worst_tail:.2e}, grad saturation err {sat:.2e}", at(0.0)[1]),
    )
}

fn mean_final_sw1(r: &MethodResult) -> f64 {
    let v = &r.summary.final_sw1_per_layer;
    v.iter().sum::<f64>() / v.len() as f64
}

fn reference_reproduction() -> (bool, String, bool, String) {
    let start = Instant::now();
    let outputs: Vec<ExperimentOutput> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..3u64)
            .map(|seed| {
                s.spawn(move || {
                    let cfg = ExperimentConfig {
                        seed,
                        ..ExperimentConfig::default()
                    };
                    execute(&cfg).unwrap()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let t = start.elapsed();
    let mut wins = 0;
    let mut detail = Vec::new();
    let mut fig4 = 0;
    let mut fig4_detail = Vec::new();
    for (seed, out) in outputs.iter().enumerate() {
        let find = |m: RegMethod| out.methods.iter().find(|r| r.spec.method == m).unwrap();
        let (van, per) = (find(RegMethod::None), find(RegMethod::Per));
        let ratio = mean_final_sw1(per) / mean_final_sw1(van);
        let acc_gap = per.summary.final_val_acc - van.summary.final_val_acc;
        if ratio <= 0.5 && acc_gap >= -0.02 {
            wins += 1;
        }
        detail.push(format!("seed {seed}: ratio {ratio:.3}, acc {:+.3}", acc_gap));

        let last = per.records.iter().map(|r| r.epoch).max().unwrap();
        let layers = per.summary.final_sw1_per_layer.len();
        let mut ok = true;
        for layer in 1..=layers {
            let mean_at = |e: usize| {
                per.records
                    .iter()
                    .find(|r| r.epoch == e && r.layer == layer)
                    .unwrap()
                    .act_mean
                    .abs()
            };
            let (m0, m1) = (mean_at(0), mean_at(last));
            ok &= m1 <= m0 || m1 <= 0.2;
        }
        if ok {
            fig4 += 1;
        }
        fig4_detail.push(format!("seed {seed}: {}", if ok { "ok" } else { "drift" }));
    }
    (
        wins >= 2 && t < Duration::from_secs(300),
        format!("{wins}/3 seeds ({}), {:.1}s", detail.join("; "), secs(t)),
        fig4 >= 2,
        format!("{fig4}/3 seeds ({})", fig4_detail.join("; ")),
    )
}

fn bn_normalization() -> (bool, String) {
    let mut rng = test_rng(108);
    let mut worst = 0.0f64;
    for p in [1.0, 2.0, 4.0] {
        for _ in 0..50 {
            let b = rng.random_range(2..=128);
            let c = rng.random_range(-5.0..5.0);
            let s = rng.random_range(0.01..20.0);
            let col: Vec<f64> = (0..b)
                .map(|_| c + s * rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect();
            let xi = lp_normalize(&col, p).unwrap();
            let norm = (xi.iter().map(|v| v.abs().powf(p)).sum::<f64>() / b as f64).powf(1.0 / p);
            worst = worst.max((norm - 1.0).abs());
        }
    }
    (worst <= 1e-9, format!("max |norm - 1| = {worst:.2e}"))
}

fn determinism() -> (bool, String) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = |name: &str| {
        FileConfig::from_toml(
            "n_train = 300\nn_val = 100\nhidden = [16, 16, 16]\nepochs = 3\ngaussian_ref_size = 100\n\
             methods = [\"none\", \"per:1e-3\", \"l1:1e-4\", \"l2:1e-4\", \"bn\"]\n",
        )
        .unwrap()
        .overlay(FileConfig {
            out_dir: Some(dir.path().join(name)),
            seed: Some(11),
            ..Default::default()
        })
        .resolve()
        .unwrap()
    };
    run_experiment(&cfg("a")).unwrap();
    let mut seq = cfg("b");
    seq.parallel = false;
    run_experiment(&seq).unwrap();
    let a = std::fs::read(dir.path().join("a/metrics.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/metrics.csv")).unwrap();
    (a == b && !a.is_empty(), format!("{} bytes, identical: {}", a.len(), a == b))
}

#[test]
fn acceptance() {
    let mut report = Report { failed: Vec::new() };
    let (ok, d) = closed_forms();
    report.check(1, "closed-form correctness", ok, d);
    let (ok, d) = gradients();
    report.check(2, "gradient exactness", ok, d);
    let (ok, d) = minkowski();
    report.check(3, "Minkowski bound", ok, d);
    let (ok, d) = metric_properties();
    report.check(4, "metric properties", ok, d);
    let (ok, d) = monte_carlo_scaling();
    report.check(5, "Monte Carlo scaling", ok, d);
    let (ok, d) = curves();
    report.check(6, "loss curve shape", ok, d);
    let (ok, d, fig4_ok, fig4) = reference_reproduction();
    report.check(7, "reference experiment, PER vs vanilla", ok, d);
    println!("{} [-] tracked-unit mean under PER: {fig4}", if fig4_ok { "PASS" } else { "FAIL" });
    let (ok, d) = bn_normalization();
    report.check(8, "lp normalization", ok, d);
    let (ok, d) = determinism();
    report.check(9, "bytewise determinism", ok, d);
    assert!(report.failed.is_empty(), "failed criteria: {:?}", report.failed);
}
