use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use uplot::analysis::{FlagTag, MiConfig};
use uplot::miest::{Estimator, HistConfig, KdeBound, KdeConfig};
use uplot::reduce::{CoarsenConfig, ReduceConfig};
use uplot_cli::commands::{self, PlotKind};
use uplot_cli::RunConfig;

#[derive(Parser)]
#[command(name = "uplot", version, about = "Layer-wise mutual information analysis of U-Nets")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration (desk-scale defaults when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the network seed from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory (defaults to the configuration's `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the network and record probe activations.
    Train,
    /// Estimate I(X;M) and I(Y;M) for every captured epoch and layer.
    Mi(MiArgs),
    /// Render information planes or U-Plots from an MI table.
    Plot(PlotArgs),
    /// Train Models 1-4 over several seeds and compare convergence.
    Ablate(AblateArgs),
    /// DPI and saturation analysis of a run directory.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Kde,
    Hist,
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundArg {
    Upper,
    Lower,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReduceArg {
    Kmeans,
    Coarsen,
}

#[derive(Args)]
struct MiArgs {
    /// Trace directory (defaults to `<out>/trace`).
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, value_enum)]
    estimator: Option<EstimatorArg>,
    /// KDE noise variance.
    #[arg(long)]
    var: Option<f64>,
    #[arg(long, value_enum)]
    bound: Option<BoundArg>,
    /// Histogram bin width.
    #[arg(long)]
    bin: Option<f64>,
    #[arg(long, value_enum)]
    reduce: Option<ReduceArg>,
    /// Number of K-means clusters.
    #[arg(long)]
    k: Option<usize>,
    /// Coarsening grid size.
    #[arg(long, default_value_t = 4)]
    grid: usize,
    /// Coarsening foreground-count threshold.
    #[arg(long)]
    threshold: Option<usize>,
    /// Largest activation width estimated without subsampling.
    #[arg(long)]
    max_dims: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlotArg {
    Plane,
    Uplot,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long, value_enum)]
    kind: PlotArg,
    /// MI table (defaults to `<out>/mi.csv`).
    #[arg(long)]
    mi: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    /// Comma-separated model ids (1-4).
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<u8>>,
    /// Comma-separated network seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// DPI violation tolerance in bits.
    #[arg(long, default_value_t = 0.1)]
    tolerance: f64,
    /// Saturation band in bits.
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
}

fn mi_settings(cfg: &RunConfig, a: &MiArgs) -> (MiConfig, ReduceConfig) {
    let mut estimator = cfg.estimator;
    match a.estimator {
        Some(EstimatorArg::Kde) if !matches!(estimator, Estimator::Kde(_)) => estimator = Estimator::Kde(KdeConfig::default()),
        Some(EstimatorArg::Hist) if !matches!(estimator, Estimator::Hist(_)) => {
            estimator = Estimator::Hist(HistConfig::default())
        }
        _ => {}
    }
    match &mut estimator {
        Estimator::Kde(k) => {
            if let Some(v) = a.var {
                k.noise_variance = v;
            }
            if let Some(b) = a.bound {
                k.bound = match b {
                    BoundArg::Upper => KdeBound::Upper,
                    BoundArg::Lower => KdeBound::Lower,
                };
            }
        }
        Estimator::Hist(h) => {
            if let Some(b) = a.bin {
                h.bin_width = b;
            }
        }
    }
    let mut reduction = cfg.reduction;
    let side = cfg.network.input_size;
    match a.reduce {
        Some(ReduceArg::Coarsen) => {
            let block = side / a.grid.max(1);
            reduction = ReduceConfig::Coarsen(CoarsenConfig {
                grid: a.grid,
                // Half the block area unless given.
                threshold: a.threshold.unwrap_or(block * block / 2),
            })
        }
        Some(ReduceArg::Kmeans) if !matches!(reduction, ReduceConfig::Kmeans { .. }) => {
            reduction = ReduceConfig::Kmeans {
                k: 16,
                seed: cfg.seed,
                max_iter: 100,
            }
        }
        _ => {}
    }
    if let (Some(k_new), ReduceConfig::Kmeans { k, .. }) = (a.k, &mut reduction) {
        *k = k_new;
    }
    let mi = MiConfig {
        estimator,
        max_dims: a.max_dims.unwrap_or(cfg.max_dims),
        seed: cfg.seed,
    };
    (mi, reduction)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.common.seed {
        cfg.seed = s;
    }
    let out = cli.common.out.clone().unwrap_or_else(|| cfg.out.clone());
    match cli.command {
        Command::Train => {
            let m = commands::cmd_train(&cfg, &out)?;
            println!(
                "epoch {}: train loss {:.4}, train Dice {:.4}, validation Dice {}",
                m.epoch,
                m.train_loss,
                m.train_dice,
                m.val_dice.map_or("n/a".into(), |d| format!("{d:.4}"))
            );
            println!("trace written to {}", out.join(commands::TRACE_DIR).display());
        }
        Command::Mi(a) => {
            let (mi, reduction) = mi_settings(&cfg, &a);
            let trace = a.trace.unwrap_or_else(|| out.join(commands::TRACE_DIR));
            let traj = commands::cmd_mi(&trace, &out, &mi, &reduction)?;
            println!(
                "{} records with {} written to {}",
                traj.records().len(),
                mi.estimator,
                out.join(commands::MI_CSV).display()
            );
        }
        Command::Plot(a) => {
            let mi = a.mi.unwrap_or_else(|| out.join(commands::MI_CSV));
            let kind = match a.kind {
                PlotArg::Plane => PlotKind::Plane,
                PlotArg::Uplot => PlotKind::Uplot,
            };
            for p in commands::cmd_plot(&mi, kind, &out.join(commands::PLOTS_DIR))? {
                println!("{}", p.display());
            }
        }
        Command::Ablate(a) => {
            if let Some(m) = a.models {
                cfg.ablation.models = m;
            }
            if let Some(s) = a.seeds {
                cfg.ablation.seeds = s;
            } else if let Some(s) = cli.common.seed {
                cfg.ablation.seeds = vec![s];
            }
            if let Some(e) = a.epochs {
                cfg.training.epochs = e;
            }
            let report = commands::cmd_ablate(&cfg, &out)?;
            for m in &report.models {
                println!(
                    "model {} (removed: {}): median epochs to reach {}, median final validation Dice {}",
                    m.model,
                    if m.removed_skips.is_empty() { "none".into() } else { m.removed_skips.join(",") },
                    m.median_epochs_to_reach.map_or("never".into(), |e| e.to_string()),
                    m.median_final_val_dice.map_or("n/a".into(), |d| format!("{d:.4}"))
                );
            }
            let verdict = match report.ordering_holds {
                Some(true) => "holds",
                Some(false) => "fails",
                None => "undetermined",
            };
            println!("ordering {verdict}: {}", report.ordering_detail);
        }
        Command::Report(a) => {
            let r = commands::cmd_report(&out, a.tolerance, a.epsilon)?;
            let (mut merges, mut anomalies) = (0, 0);
            for (_, f) in r.dpi.flags() {
                match f.tag {
                    FlagTag::ExpectedMerge => merges += 1,
                    FlagTag::Anomaly => anomalies += 1,
                }
            }
            println!("DPI flags: {merges} at merge layers, {anomalies} elsewhere");
            for l in &r.saturation.layers {
                if r.dpi.merge_layers.contains(&l.layer) {
                    println!(
                        "merge layer {}: max I(Y;M) {:.3} bits, saturated at {}",
                        l.layer,
                        l.max_i_ym_bits,
                        l.saturation_epoch.map_or("never".into(), |e| format!("epoch {e}"))
                    );
                }
            }
            for p in &r.saturation.predictions {
                println!(
                    "skip {} ({} -> {}): removable after {}",
                    p.skip,
                    p.source,
                    p.merge,
                    p.removable_after.map_or("never".into(), |e| format!("epoch {e}"))
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // Usage errors exit with status 2 from inside `parse`.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
