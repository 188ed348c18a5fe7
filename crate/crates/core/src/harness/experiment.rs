//! Method comparison runs with per-epoch distribution diagnostics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use ndarray::{s, Array2};
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::config::{ExperimentConfig, MethodSpec};
use super::dataset::{generate_dataset, Dataset};
use crate::error::{Error, Result};
use crate::nn::{
    accuracy, forward, init_network, mean_cross_entropy, Mode, Network, NetworkSpec, TrainConfig,
    Trainer,
};
use crate::per::{RegConfig, RegMethod};
use crate::sliced::{sw1_empirical, ActivationBatch, SliceSet};
use crate::special_fns::RngStream;

pub const CSV_HEADER: &str =
    "method,epoch,layer,train_loss,val_loss,val_acc,sw1_gauss,q25,q50,q75,act_mean,act_var";

const TAG_DATA: u64 = 1;
const TAG_INIT: u64 = 2;
const TAG_SHUFFLE: u64 = 3;
const TAG_SLICES: u64 = 4;
const TAG_METRICS: u64 = 5;

/// Index of the unit whose marginal is summarized in every layer.
pub const TRACKED_UNIT: usize = 0;

/// One CSV row. `layer` is 1-based; an abort record has `layer = 0` and
/// NaN in every numeric field.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub method: String,
    pub epoch: usize,
    pub layer: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub sw1_gauss: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub act_mean: f64,
    pub act_var: f64,
}

impl MetricsRecord {
    fn abort(method: &str, epoch: usize) -> Self {
        Self {
            method: method.to_string(),
            epoch,
            layer: 0,
            train_loss: f64::NAN,
            val_loss: f64::NAN,
            val_acc: f64::NAN,
            sw1_gauss: f64::NAN,
            q25: f64::NAN,
            q50: f64::NAN,
            q75: f64::NAN,
            act_mean: f64::NAN,
            act_var: f64::NAN,
        }
    }

    pub fn is_abort(&self) -> bool {
        self.layer == 0
    }

    fn write_csv(&self, out: &mut String) {
        write!(out, "{},{},{}", self.method, self.epoch, self.layer).expect("write to String");
        for v in [
            self.train_loss,
            self.val_loss,
            self.val_acc,
            self.sw1_gauss,
            self.q25,
            self.q50,
            self.q75,
            self.act_mean,
            self.act_var,
        ] {
            out.push(',');
            out.push_str(&fmt_f64(v));
        }
        out.push('\n');
    }
}

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        v.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodSummary {
    pub final_val_acc: f64,
    pub final_sw1_per_layer: Vec<f64>,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug)]
pub struct MethodResult {
    pub label: String,
    pub spec: MethodSpec,
    pub records: Vec<MetricsRecord>,
    pub summary: MethodSummary,
    /// Diagnostic message when training hit a non-finite loss.
    pub aborted: Option<String>,
    pub network: Network,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub methods: Vec<MethodResult>,
}

impl ExperimentOutput {
    pub fn records(&self) -> impl Iterator<Item = &MetricsRecord> {
        self.methods.iter().flat_map(|m| m.records.iter())
    }

    pub fn csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in self.records() {
            r.write_csv(&mut out);
        }
        out
    }

    pub fn summary_json(&self) -> String {
        let map: BTreeMap<&str, &MethodSummary> =
            self.methods.iter().map(|m| (m.label.as_str(), &m.summary)).collect();
        serde_json::to_string_pretty(&map).expect("summary is serializable") + "\n"
    }

    pub fn method(&self, label: &str) -> Option<&MethodResult> {
        self.methods.iter().find(|m| m.label == label)
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn standard_normal_matrix(rng: &mut RngStream, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

struct EvalData<'a> {
    train: &'a Dataset,
    val: &'a Dataset,
    /// Leading rows of the training split used for activation statistics.
    probe: Array2<f64>,
}

fn diagnostics(
    net: &Network,
    label: &str,
    epoch: usize,
    data: &EvalData<'_>,
    cfg: &ExperimentConfig,
    metric_rng: &RngStream,
) -> Result<Vec<MetricsRecord>> {
    let train_out = forward(net, data.train.x.view(), Mode::Eval)?;
    let train_loss = mean_cross_entropy(&train_out.logits, &data.train.y)?;
    let val_out = forward(net, data.val.x.view(), Mode::Eval)?;
    let val_loss = mean_cross_entropy(&val_out.logits, &data.val.y)?;
    let val_acc = accuracy(&val_out.logits, &data.val.y)?;

    let probe = forward(net, data.probe.view(), Mode::Train)?;
    let mut records = Vec::with_capacity(probe.activations.len());
    for (l, act) in probe.activations.iter().enumerate() {
        let mut rng = metric_rng.split(epoch as u64).split(l as u64);
        let (m, d) = (act.batch_size(), act.dim());
        let reference = ActivationBatch::from_array_unchecked(standard_normal_matrix(&mut rng, m, d), l + 1);
        let slices = SliceSet::sample(&mut rng, cfg.metrics_slices, d)?;
        let sw1_gauss = sw1_empirical(act, &reference, &slices)?;

        let mut unit: Vec<f64> = act.values().column(TRACKED_UNIT).to_vec();
        let n = unit.len() as f64;
        let act_mean = unit.iter().sum::<f64>() / n;
        let act_var = if unit.len() > 1 {
            unit.iter().map(|v| (v - act_mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        unit.sort_by(f64::total_cmp);
        records.push(MetricsRecord {
            method: label.to_string(),
            epoch,
            layer: l + 1,
            train_loss,
            val_loss,
            val_acc,
            sw1_gauss,
            q25: quantile_sorted(&unit, 0.25),
            q50: quantile_sorted(&unit, 0.5),
            q75: quantile_sorted(&unit, 0.75),
            act_mean,
            act_var,
        });
    }
    Ok(records)
}

struct Streams {
    init: RngStream,
    shuffle: RngStream,
    slices: RngStream,
    metrics: RngStream,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let root = RngStream::new(seed, 0);
        Self {
            init: root.split(TAG_INIT),
            shuffle: root.split(TAG_SHUFFLE),
            slices: root.split(TAG_SLICES),
            metrics: root.split(TAG_METRICS),
        }
    }
}

fn run_method(
    cfg: &ExperimentConfig,
    index: usize,
    label: &str,
    spec: MethodSpec,
    data: &EvalData<'_>,
    streams: &Streams,
) -> Result<MethodResult> {
    let start = Instant::now();
    let net_spec = NetworkSpec {
        input_dim: data.train.dim(),
        hidden_widths: cfg.model.hidden_widths.clone(),
        classes: data.train.classes,
        activation: cfg.model.activation,
        batch_norm: spec.method == RegMethod::Bn,
    };
    let net = init_network(&net_spec, cfg.train.init, &mut streams.init.clone())?;
    let reg = RegConfig::new(spec.method, spec.lambda, cfg.slices, streams.slices.clone())?
        .with_target(cfg.reg_target);
    let train_cfg = TrainConfig {
        lr: cfg.train.lr,
        momentum: cfg.train.momentum,
        epochs: cfg.train.epochs,
        batch_size: cfg.train.batch_size,
        grad_clip_norm: cfg.train.grad_clip_norm,
        reg,
        init: cfg.train.init,
        seed: streams.shuffle.clone(),
    };
    let metric_rng = streams.metrics.split(index as u64);
    let mut trainer = Trainer::new(net, train_cfg)?;

    let mut records = diagnostics(&trainer.net, label, 0, data, cfg, &metric_rng)?;
    let mut aborted = None;
    for epoch in 1..=cfg.train.epochs {
        match trainer.train_epoch(data.train.x.view(), &data.train.y) {
            Ok(_) => {}
            Err(Error::NumericalAbort(msg)) => {
                records.push(MetricsRecord::abort(label, epoch));
                aborted = Some(msg);
                break;
            }
            Err(e) => return Err(e),
        }
        records.extend(diagnostics(&trainer.net, label, epoch, data, cfg, &metric_rng)?);
    }

    let last_epoch = records.iter().filter(|r| !r.is_abort()).map(|r| r.epoch).max().unwrap_or(0);
    let last: Vec<&MetricsRecord> = records.iter().filter(|r| !r.is_abort() && r.epoch == last_epoch).collect();
    let summary = MethodSummary {
        final_val_acc: if aborted.is_some() {
            f64::NAN
        } else {
            last.first().map_or(f64::NAN, |r| r.val_acc)
        },
        final_sw1_per_layer: last.iter().map(|r| r.sw1_gauss).collect(),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok(MethodResult {
        label: label.to_string(),
        spec,
        records,
        summary,
        aborted,
        network: trainer.net,
    })
}

/// Trains every configured method from the same initialization and collects
/// the diagnostics in memory. A method that hits a non-finite loss stops
/// early with an abort record; the others still run.
pub fn execute(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let root = RngStream::new(cfg.seed, 0);
    let (train, val) = generate_dataset(&cfg.dataset, &root.split(TAG_DATA))?;
    let m = cfg.gaussian_ref_size.min(train.len());
    let data = EvalData {
        probe: train.x.slice(s![..m, ..]).to_owned(),
        train: &train,
        val: &val,
    };
    let streams = Streams::new(cfg.seed);
    let labels = cfg.method_labels();
    let jobs: Vec<(usize, &String, MethodSpec)> = labels
        .iter()
        .zip(&cfg.methods)
        .enumerate()
        .map(|(i, (l, s))| (i, l, *s))
        .collect();

    let results: Vec<Result<MethodResult>> = if cfg.parallel && jobs.len() > 1 {
        std::thread::scope(|scope| {
            let handles: Vec<_> = jobs
                .iter()
                .map(|&(i, label, spec)| {
                    let (data, streams) = (&data, &streams);
                    scope.spawn(move || run_method(cfg, i, label, spec, data, streams))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("method thread panicked"))
                .collect()
        })
    } else {
        jobs.iter()
            .map(|&(i, label, spec)| run_method(cfg, i, label, spec, &data, &streams))
            .collect()
    };
    Ok(ExperimentOutput {
        methods: results.into_iter().collect::<Result<Vec<_>>>()?,
    })
}

/// Runs [`execute`] and writes `metrics.csv` and `summary.json` into
/// `cfg.out_dir`. Returns [`Error::NumericalAbort`] after writing if any
/// method aborted.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let out = execute(cfg)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(cfg.out_dir.join("metrics.csv"), out.csv())?;
    std::fs::write(cfg.out_dir.join("summary.json"), out.summary_json())?;
    if let Some(m) = out.methods.iter().find(|m| m.aborted.is_some()) {
        return Err(Error::NumericalAbort(format!(
            "method '{}': {}",
            m.label,
            m.aborted.as_deref().unwrap_or_default()
        )));
    }
    Ok(out)
}
