//! Synthetic datasets and the IDX loader, with train-split standardization.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::config::DatasetConfig;
use super::idx::load_idx;
use crate::error::{Error, Result};
use crate::special_fns::{sample_unit_sphere, RngStream};

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }
}

/// Builds the train and validation splits. Features are shifted and scaled
/// so each training column has mean 0 and variance 1; the validation split
/// uses the same transform.
pub fn generate_dataset(cfg: &DatasetConfig, rng: &RngStream) -> Result<(Dataset, Dataset)> {
    let (mut train, mut val) = match cfg {
        DatasetConfig::GaussMixture {
            classes,
            dim,
            n_train,
            n_val,
            spread,
            radius,
        } => {
            if *classes < 2 || *dim == 0 || *n_train == 0 || *n_val == 0 {
                return Err(Error::config("gauss_mixture needs classes >= 2 and positive sizes"));
            }
            let mut mean_rng = rng.split(0);
            let mut means = Array2::zeros((*classes, *dim));
            for mut row in means.rows_mut() {
                let u = sample_unit_sphere(&mut mean_rng, *dim)?;
                row.iter_mut().zip(u).for_each(|(m, v)| *m = radius * v);
            }
            let make = |n: usize, mut r: RngStream| {
                let mut x = Array2::zeros((n, *dim));
                let y: Vec<usize> = (0..n).map(|i| i % classes).collect();
                for (mut row, &c) in x.rows_mut().into_iter().zip(&y) {
                    for (v, &m) in row.iter_mut().zip(means.row(c)) {
                        let z: f64 = r.sample(StandardNormal);
                        *v = m + spread * z;
                    }
                }
                Dataset {
                    x,
                    y,
                    classes: *classes,
                }
            };
            (make(*n_train, rng.split(1)), make(*n_val, rng.split(2)))
        }
        DatasetConfig::TwoArcs {
            n_train,
            n_val,
            noise,
        } => {
            if *n_train == 0 || *n_val == 0 {
                return Err(Error::config("two_arcs needs positive sizes"));
            }
            let make = |n: usize, mut r: RngStream| {
                let mut x = Array2::zeros((n, 2));
                let y: Vec<usize> = (0..n).map(|i| i % 2).collect();
                for (mut row, &c) in x.rows_mut().into_iter().zip(&y) {
                    let t: f64 = r.random_range(0.0..PI);
                    let (px, py) = if c == 0 {
                        (t.cos(), t.sin())
                    } else {
                        (1.0 - t.cos(), 0.5 - t.sin())
                    };
                    let (ex, ey): (f64, f64) = (r.sample(StandardNormal), r.sample(StandardNormal));
                    row[0] = px + noise * ex;
                    row[1] = py + noise * ey;
                }
                Dataset { x, y, classes: 2 }
            };
            (make(*n_train, rng.split(1)), make(*n_val, rng.split(2)))
        }
        DatasetConfig::IdxFiles {
            images,
            labels,
            val_fraction,
        } => {
            let (x, y) = load_idx(images, labels)?;
            split_holdout(x, y, *val_fraction, &mut rng.split(3))?
        }
    };
    standardize(&mut train.x, &mut val.x);
    Ok((train, val))
}

fn split_holdout(
    x: Array2<f64>,
    y: Vec<usize>,
    val_fraction: f64,
    rng: &mut RngStream,
) -> Result<(Dataset, Dataset)> {
    let n = y.len();
    let n_val = (n as f64 * val_fraction).round() as usize;
    if n_val == 0 || n_val >= n {
        return Err(Error::config(format!(
            "cannot hold out {val_fraction} of {n} samples as a non-empty validation split"
        )));
    }
    let classes = y.iter().max().map_or(0, |m| m + 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let (tr, va) = order.split_at(n - n_val);
    let take = |idx: &[usize]| Dataset {
        x: x.select(Axis(0), idx),
        y: idx.iter().map(|&i| y[i]).collect(),
        classes,
    };
    Ok((take(tr), take(va)))
}

/// Column statistics of `train` applied to both matrices. Columns with
/// standard deviation below 1e-12 are only centered.
pub fn standardize(train: &mut Array2<f64>, other: &mut Array2<f64>) {
    let n = train.nrows() as f64;
    let mean = train.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(train.ncols()));
    let var = train
        .axis_iter(Axis(1))
        .zip(&mean)
        .map(|(col, m)| col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n)
        .collect::<Array1<f64>>();
    let scale = var.mapv(|v| {
        let s = v.sqrt();
        if s < 1e-12 {
            1.0
        } else {
            s
        }
    });
    for m in [train, other] {
        *m -= &mean;
        *m /= &scale;
    }
}
