use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use per_core::harness::{emit_loss_curves, run_experiment, FileConfig};
use per_core::Result;

/// Compare activation regularizers on a small MLP and write per-epoch
/// distribution diagnostics.
#[derive(Parser, Debug)]
#[command(name = "per-experiment", version)]
struct Cli {
    /// TOML file with experiment keys; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// gauss_mixture, two_arcs or idx.
    #[arg(long)]
    dataset: Option<String>,
    /// Comma-separated methods, each `name` or `name:lambda`
    /// (none, per, l1, l2, bn).
    #[arg(long)]
    method: Option<String>,
    /// Coefficient for methods given without an explicit lambda.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    slices: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Write the PER / Huber comparison curves (to PATH, or
    /// `<out-dir>/loss_curves.csv`) and exit.
    #[arg(long, value_name = "PATH", num_args = 0..=1)]
    emit_curves: Option<Option<PathBuf>>,
}

fn run(cli: Cli) -> Result<()> {
    let base = match &cli.config {
        Some(path) => FileConfig::from_path(path)?,
        None => FileConfig::default(),
    };
    let overrides = FileConfig {
        dataset: cli.dataset,
        methods: cli.method.map(|m| vec![m]),
        lambda: cli.lambda,
        slices: cli.slices,
        epochs: cli.epochs,
        batch_size: cli.batch_size,
        lr: cli.lr,
        seed: cli.seed,
        out_dir: cli.out_dir,
        ..Default::default()
    };
    let cfg = base.overlay(overrides).resolve()?;

    if let Some(target) = cli.emit_curves {
        let path = target.unwrap_or_else(|| cfg.out_dir.join("loss_curves.csv"));
        emit_loss_curves(&path)?;
        eprintln!("wrote {}", path.display());
        return Ok(());
    }

    let out = run_experiment(&cfg)?;
    for m in &out.methods {
        let sw1: Vec<String> = m.summary.final_sw1_per_layer.iter().map(|v| format!("{v:.4}")).collect();
        eprintln!(
            "{:<12} val_acc {:.4}  sw1 [{}]  {:.1}s",
            m.label,
            m.summary.final_val_acc,
            sw1.join(", "),
            m.summary.wall_time_s
        );
    }
    eprintln!("wrote {}", cfg.out_dir.join("metrics.csv").display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
