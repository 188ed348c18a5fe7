//! Experiment configuration: a flat TOML file merged with CLI overrides.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::nn::{Activation, Init};
use crate::per::{RegMethod, RegTarget, DEFAULT_SLICES};

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetConfig {
    /// `classes` isotropic Gaussian blobs in `dim` dimensions. Class means
    /// are uniform on the sphere of radius `radius`; `spread` is the noise std.
    GaussMixture {
        classes: usize,
        dim: usize,
        n_train: usize,
        n_val: usize,
        spread: f64,
        radius: f64,
    },
    /// Two interleaving half circles in the plane with Gaussian noise.
    TwoArcs {
        n_train: usize,
        n_val: usize,
        noise: f64,
    },
    /// IDX image/label pair; the last `val_fraction` of a shuffled copy is
    /// held out for validation.
    IdxFiles {
        images: PathBuf,
        labels: PathBuf,
        val_fraction: f64,
    },
}

impl DatasetConfig {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetConfig::GaussMixture { .. } => "gauss_mixture",
            DatasetConfig::TwoArcs { .. } => "two_arcs",
            DatasetConfig::IdxFiles { .. } => "idx_files",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub hidden_widths: Vec<usize>,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainParams {
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_clip_norm: Option<f64>,
    pub init: Init,
}

/// One entry of the comparison: a method with its coefficient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MethodSpec {
    pub method: RegMethod,
    pub lambda: f64,
}

impl MethodSpec {
    /// Parses `name` or `name:lambda`; a bare name takes `default_lambda`
    /// (0 for `none` and `bn`).
    pub fn parse(s: &str, default_lambda: f64) -> Result<Self> {
        let (name, lambda) = match s.split_once(':') {
            Some((n, l)) => {
                let l: f64 = l
                    .trim()
                    .parse()
                    .map_err(|_| Error::config(format!("bad lambda in method '{s}'")))?;
                (n, Some(l))
            }
            None => (s, None),
        };
        let method: RegMethod = name.parse()?;
        let lambda = match (method, lambda) {
            (_, Some(l)) => l,
            (RegMethod::None | RegMethod::Bn, None) => 0.0,
            (_, None) => default_lambda,
        };
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::config(format!("lambda must be finite and >= 0 in '{s}'")));
        }
        Ok(Self { method, lambda })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainParams,
    pub methods: Vec<MethodSpec>,
    /// Slices per regularizer call.
    pub slices: usize,
    pub reg_target: RegTarget,
    pub metrics_slices: usize,
    /// Rows of the evaluation batch and of the `N(0, I)` reference sample.
    pub gaussian_ref_size: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Run methods on separate threads.
    pub parallel: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::GaussMixture {
                classes: 3,
                dim: 10,
                n_train: 2000,
                n_val: 500,
                spread: 1.0,
                radius: 4.0,
            },
            model: ModelConfig {
                hidden_widths: vec![64; 4],
                activation: Activation::LeakyRelu,
            },
            train: TrainParams {
                lr: 0.05,
                momentum: 0.9,
                epochs: 60,
                batch_size: 32,
                grad_clip_norm: None,
                init: Init::He,
            },
            methods: vec![
                MethodSpec {
                    method: RegMethod::None,
                    lambda: 0.0,
                },
                MethodSpec {
                    method: RegMethod::Per,
                    lambda: 1e-4,
                },
            ],
            slices: DEFAULT_SLICES,
            reg_target: RegTarget::PostActivation,
            metrics_slices: DEFAULT_SLICES,
            gaussian_ref_size: 500,
            seed: 0,
            out_dir: PathBuf::from("runs"),
            parallel: true,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::config("at least one method is required"));
        }
        match &self.dataset {
            DatasetConfig::GaussMixture {
                classes,
                dim,
                n_train,
                n_val,
                spread,
                radius,
            } => {
                if *classes < 2 || *dim == 0 || *n_train == 0 || *n_val == 0 {
                    return Err(Error::config(
                        "gauss_mixture needs classes >= 2 and positive dim, n_train, n_val",
                    ));
                }
                if !(*spread >= 0.0 && spread.is_finite() && *radius > 0.0 && radius.is_finite()) {
                    return Err(Error::config("gauss_mixture needs spread >= 0 and radius > 0"));
                }
            }
            DatasetConfig::TwoArcs {
                n_train,
                n_val,
                noise,
            } => {
                if *n_train == 0 || *n_val == 0 || !(*noise >= 0.0 && noise.is_finite()) {
                    return Err(Error::config("two_arcs needs positive sizes and noise >= 0"));
                }
            }
            DatasetConfig::IdxFiles { val_fraction, .. } => {
                if !(*val_fraction > 0.0 && *val_fraction < 1.0) {
                    return Err(Error::config("val_fraction must be in (0, 1)"));
                }
            }
        }
        if self.model.hidden_widths.is_empty() || self.model.hidden_widths.contains(&0) {
            return Err(Error::config("hidden widths must be a non-empty list of positive sizes"));
        }
        if self.slices == 0 || self.metrics_slices == 0 {
            return Err(Error::config("slice counts must be positive"));
        }
        if self.gaussian_ref_size == 0 {
            return Err(Error::config("gaussian_ref_size must be positive"));
        }
        let t = &self.train;
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return Err(Error::config(format!("lr must be positive, got {}", t.lr)));
        }
        if !(0.0..1.0).contains(&t.momentum) {
            return Err(Error::config(format!("momentum must be in [0, 1), got {}", t.momentum)));
        }
        let uses_bn = self.methods.iter().any(|m| m.method == RegMethod::Bn);
        if t.batch_size == 0 || (uses_bn && t.batch_size < 2) {
            return Err(Error::config(format!("batch_size {} too small", t.batch_size)));
        }
        Ok(())
    }

    /// Distinct labels for the CSV: the method name, or `name:lambda` when
    /// the same method appears more than once.
    pub fn method_labels(&self) -> Vec<String> {
        self.methods
            .iter()
            .map(|m| {
                let dup = self.methods.iter().filter(|o| o.method == m.method).count() > 1;
                if dup {
                    format!("{}:{}", m.method, m.lambda)
                } else {
                    m.method.to_string()
                }
            })
            .collect()
    }
}

/// Keys accepted in a config file. Every key is optional.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub dataset: Option<String>,
    pub classes: Option<usize>,
    pub dim: Option<usize>,
    pub n_train: Option<usize>,
    pub n_val: Option<usize>,
    pub spread: Option<f64>,
    pub radius: Option<f64>,
    pub noise: Option<f64>,
    pub idx_images: Option<PathBuf>,
    pub idx_labels: Option<PathBuf>,
    pub val_fraction: Option<f64>,
    pub hidden: Option<Vec<usize>>,
    pub activation: Option<String>,
    pub init: Option<String>,
    pub lr: Option<f64>,
    pub momentum: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub grad_clip_norm: Option<f64>,
    pub methods: Option<Vec<String>>,
    pub lambda: Option<f64>,
    pub slices: Option<usize>,
    pub reg_target: Option<String>,
    pub metrics_slices: Option<usize>,
    pub gaussian_ref_size: Option<usize>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub parallel: Option<bool>,
}

impl FileConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml(&text)
    }

    /// Fields set in `other` replace those in `self`.
    pub fn overlay(mut self, other: FileConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(
            dataset, classes, dim, n_train, n_val, spread, radius, noise, idx_images, idx_labels,
            val_fraction, hidden, activation, init, lr, momentum, epochs, batch_size,
            grad_clip_norm, methods, lambda, slices, reg_target, metrics_slices,
            gaussian_ref_size, seed, out_dir, parallel
        );
        self
    }

    /// Fills unset keys from [`ExperimentConfig::default`] and validates.
    pub fn resolve(self) -> Result<ExperimentConfig> {
        let d = ExperimentConfig::default();
        let (dc, dd, dtr, dva, dsp, drad) = match d.dataset {
            DatasetConfig::GaussMixture {
                classes,
                dim,
                n_train,
                n_val,
                spread,
                radius,
            } => (classes, dim, n_train, n_val, spread, radius),
            _ => unreachable!("default dataset is a Gaussian mixture"),
        };
        let dataset = match self.dataset.as_deref().unwrap_or("gauss_mixture") {
            "gauss_mixture" => DatasetConfig::GaussMixture {
                classes: self.classes.unwrap_or(dc),
                dim: self.dim.unwrap_or(dd),
                n_train: self.n_train.unwrap_or(dtr),
                n_val: self.n_val.unwrap_or(dva),
                spread: self.spread.unwrap_or(dsp),
                radius: self.radius.unwrap_or(drad),
            },
            "two_arcs" => DatasetConfig::TwoArcs {
                n_train: self.n_train.unwrap_or(dtr),
                n_val: self.n_val.unwrap_or(dva),
                noise: self.noise.unwrap_or(0.1),
            },
            "idx" | "idx_files" => DatasetConfig::IdxFiles {
                images: self
                    .idx_images
                    .ok_or_else(|| Error::config("idx dataset needs idx_images"))?,
                labels: self
                    .idx_labels
                    .ok_or_else(|| Error::config("idx dataset needs idx_labels"))?,
                val_fraction: self.val_fraction.unwrap_or(0.1),
            },
            other => return Err(Error::config(format!("unknown dataset '{other}'"))),
        };
        let default_lambda = self.lambda.unwrap_or(1e-4);
        let methods = match self.methods {
            Some(list) => list
                .iter()
                .flat_map(|s| s.split(','))
                .filter(|s| !s.trim().is_empty())
                .map(|s| MethodSpec::parse(s.trim(), default_lambda))
                .collect::<Result<Vec<_>>>()?,
            None => d
                .methods
                .iter()
                .map(|m| MethodSpec {
                    lambda: if m.method == RegMethod::Per {
                        default_lambda
                    } else {
                        m.lambda
                    },
                    ..*m
                })
                .collect(),
        };
        let reg_target = match self.reg_target.as_deref() {
            None | Some("post") | Some("post_activation") => RegTarget::PostActivation,
            Some("pre") | Some("pre_activation") => RegTarget::PreActivation,
            Some(other) => return Err(Error::config(format!("unknown reg_target '{other}'"))),
        };
        let cfg = ExperimentConfig {
            dataset,
            model: ModelConfig {
                hidden_widths: self.hidden.unwrap_or(d.model.hidden_widths),
                activation: match self.activation {
                    Some(a) => a.parse()?,
                    None => d.model.activation,
                },
            },
            train: TrainParams {
                lr: self.lr.unwrap_or(d.train.lr),
                momentum: self.momentum.unwrap_or(d.train.momentum),
                epochs: self.epochs.unwrap_or(d.train.epochs),
                batch_size: self.batch_size.unwrap_or(d.train.batch_size),
                grad_clip_norm: self.grad_clip_norm,
                init: match self.init {
                    Some(i) => i.parse()?,
                    None => d.train.init,
                },
            },
            methods,
            slices: self.slices.unwrap_or(d.slices),
            reg_target,
            metrics_slices: self.metrics_slices.unwrap_or(d.metrics_slices),
            gaussian_ref_size: self.gaussian_ref_size.unwrap_or(d.gaussian_ref_size),
            seed: self.seed.unwrap_or(d.seed),
            out_dir: self.out_dir.unwrap_or(d.out_dir),
            parallel: self.parallel.unwrap_or(d.parallel),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
