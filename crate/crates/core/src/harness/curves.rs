//! One-dimensional PER profile next to the Huber and Pseudo-Huber losses.

use std::fmt::Write as _;
use std::path::Path;

use crate::baselines::{huber, pseudo_huber};
use crate::error::Result;
use crate::per::{per_point_grad, per_point_loss};
use crate::special_fns::SQRT_2_OVER_PI;

pub const CURVE_HEADER: &str = "x,per_shifted,per_grad,huber,pseudo_huber";

/// `[x, per_point_loss(x) - √(2/π), erf(x/√2), huber(x), pseudo_huber(x)]`
/// for `x = -3, -2.99, …, 3`.
pub fn loss_curve_rows() -> Vec<[f64; 5]> {
    (0..=600)
        .map(|i| {
            let x = (i as f64 - 300.0) / 100.0;
            [
                x,
                per_point_loss(x) - SQRT_2_OVER_PI,
                per_point_grad(x),
                huber(x),
                pseudo_huber(x),
            ]
        })
        .collect()
}

pub fn loss_curves_csv() -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for row in loss_curve_rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", cells.join(",")).expect("writing to a String");
    }
    out
}

pub fn emit_loss_curves(out_path: &Path) -> Result<()> {
    if let Some(parent) = out_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(out_path, loss_curves_csv())?;
    Ok(())
}
