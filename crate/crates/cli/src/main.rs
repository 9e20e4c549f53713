use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use curved_label::{data, distance_report, LossKind, Metric, MetricConfig};
use curved_label_cli::{
    metric_report, resume_train, run_compare, run_train, ConfigOverrides, DataSource,
    ExperimentConfig, HarnessError, Result,
};

#[derive(Debug, Parser)]
#[command(name = "curvlab", version, about = "Curved label-space loss experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a classifier, regenerating the label-space metric every epoch.
    Train {
        #[command(flatten)]
        cfg: ConfigOverrides,
        /// Run directory for reports, metrics and checkpoints.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue the run in this directory from its checkpoint.
        #[arg(long, conflicts_with = "out")]
        resume: Option<PathBuf>,
    },
    /// Compare two loss settings over paired seeds.
    Compare {
        #[command(flatten)]
        cfg: ConfigOverrides,
        /// Full config for side B; defaults to the shared config.
        #[arg(long)]
        config_b: Option<PathBuf>,
        #[arg(long)]
        loss_a: Option<LossKind>,
        #[arg(long)]
        loss_b: Option<LossKind>,
        #[arg(long)]
        scale_a: Option<f64>,
        #[arg(long)]
        scale_b: Option<f64>,
        #[arg(long)]
        lambda_a: Option<f64>,
        #[arg(long)]
        lambda_b: Option<f64>,
        #[arg(long, default_value_t = 5)]
        n_seeds: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build P, S, the metric and the distance table from a confusion-count CSV.
    MetricReport {
        /// k x k integer CSV, rows = true class.
        confusion: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long)]
        clamp_max: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pairwise class distances implied by a metric file (.csv or .json).
    DistanceTable {
        metric: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a generated hierarchical dataset as CSV.
    GenData {
        #[command(flatten)]
        cfg: ConfigOverrides,
        #[arg(long)]
        out: PathBuf,
        /// Also write the class → superclass map, one line per class.
        #[arg(long)]
        superclass_out: Option<PathBuf>,
    },
}

fn read_input(path: &PathBuf) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Validation(format!("cannot read {}: {e}", path.display())))
}

fn side(
    base: &ExperimentConfig,
    loss: Option<LossKind>,
    scale: Option<f64>,
    lambda: Option<f64>,
) -> ExperimentConfig {
    let mut cfg = base.clone();
    if let Some(l) = loss {
        cfg.loss = l;
    }
    if let Some(s) = scale {
        cfg.metric.scale = s;
    }
    if let Some(l) = lambda {
        cfg.metric.lambda = l;
    }
    cfg
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { cfg, out, resume } => {
            let outcome = match resume {
                Some(dir) => resume_train(&dir, cfg.epochs)?,
                None => {
                    let mut cfg = cfg.resolve()?;
                    cfg.output_dir = Some(out.ok_or_else(|| {
                        HarnessError::Validation("train needs --out or --resume".into())
                    })?);
                    if let DataSource::Csv { .. } = cfg.data {
                        let empty = cfg.load_data()?.empty_classes();
                        if !empty.is_empty() {
                            eprintln!("warning: classes {empty:?} have no examples");
                        }
                    }
                    run_train(&cfg)?
                }
            };
            for r in &outcome.reports {
                println!(
                    "epoch {:>4}  loss {:.6}  train acc {:.4}  test acc {:.4}  g off-diag [{:.4}, {:.4}]",
                    r.epoch,
                    r.train_loss,
                    r.train_accuracy,
                    r.test_accuracy,
                    r.metric_exported.min,
                    r.metric_exported.max
                );
            }
        }
        Command::Compare {
            cfg,
            config_b,
            loss_a,
            loss_b,
            scale_a,
            scale_b,
            lambda_a,
            lambda_b,
            n_seeds,
            out,
        } => {
            let base = cfg.resolve()?;
            let a = side(&base, loss_a, scale_a, lambda_a);
            let b_base = match config_b {
                Some(path) => {
                    let mut b = ExperimentConfig::load(&path)?;
                    cfg.apply(&mut b)?;
                    b
                }
                None => base.clone(),
            };
            let b = side(&b_base, loss_b, scale_b, lambda_b);
            let report = run_compare(&a, &b, n_seeds)?;
            print!("{}", report.to_text());
            if let Some(dir) = out {
                report.write(&dir)?;
            }
        }
        Command::MetricReport {
            confusion,
            scale,
            clamp_max,
            out,
        } => {
            let cfg = MetricConfig {
                scale,
                clamp_max,
                ..MetricConfig::default()
            };
            let report = metric_report(&read_input(&confusion)?, &cfg)?;
            print!("{}", report.extremes_text());
            if let Some(dir) = out {
                report.write(&dir)?;
            }
        }
        Command::DistanceTable { metric, out } => {
            let m = Metric::load(&metric).map_err(|e| {
                HarnessError::Validation(format!("{}: {e}", metric.display()))
            })?;
            let table = distance_report(&m).to_csv();
            match out {
                Some(path) => std::fs::write(path, table)?,
                None => print!("{table}"),
            }
        }
        Command::GenData {
            cfg,
            out,
            superclass_out,
        } => {
            let cfg = cfg.resolve()?;
            let DataSource::Generated(spec) = &cfg.data else {
                return Err(HarnessError::Validation(
                    "gen-data needs a generator config, not CSV data".into(),
                ));
            };
            let ds = data::generate(spec)?;
            std::fs::write(&out, ds.to_csv())?;
            if let (Some(path), Some(map)) = (superclass_out, ds.superclass_of()) {
                let text: String = map.iter().map(|s| format!("{s}\n")).collect();
                std::fs::write(path, text)?;
            }
            eprintln!(
                "wrote {} examples, {} classes, dimension {}",
                ds.len(),
                ds.classes(),
                ds.dim()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
