//! The work behind each subcommand. Every command reads and writes a run
//! directory with a fixed layout:
//!
//! ```text
//! run/
//!   config.json          resolved configuration
//!   trace/               activation trace (manifest.json, probe.ufat, epoch_*.ufat)
//!   mi.csv, mi.json      MI table and the settings behind it
//!   clusters/            fitted K-means model, when used
//!   plots/               SVG output
//!   dpi.json, saturation.json
//!   ablation.json, dice_curves.csv
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use uplot::analysis::{
    ablate_compare, dpi_check, info_plane, saturation_detect, uplot, write_curves_csv, AblationReport, DpiReport,
    MITrajectory, MiConfig, Quantity, SaturationReport,
};
use uplot::reduce::{OutputReducer, ReduceConfig};
use uplot::unet::{build, train, ActivationTrace, EpochMetrics, MANIFEST};

use crate::config::RunConfig;
use crate::svg;

pub const TRACE_DIR: &str = "trace";
pub const MI_CSV: &str = "mi.csv";
pub const MI_META: &str = "mi.json";
pub const CLUSTERS_DIR: &str = "clusters";
pub const PLOTS_DIR: &str = "plots";
pub const DPI_JSON: &str = "dpi.json";
pub const SATURATION_JSON: &str = "saturation.json";
pub const ABLATION_JSON: &str = "ablation.json";
pub const CURVES_CSV: &str = "dice_curves.csv";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Trains the configured network and stores its activation trace.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<EpochMetrics> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join("config.json"), cfg)?;
    let (train_set, val_set, probe) = cfg.datasets()?;
    let opts = cfg.training.options()?;
    let mut graph = build(&cfg.network_spec())?;
    log::info!(
        "training {} parameters on {} samples for {} epochs",
        graph.param_count(),
        train_set.len(),
        opts.epochs
    );
    let trace = train(&mut graph, &train_set, &val_set, &probe, &opts)?;
    trace.write_dir(&out.join(TRACE_DIR))?;
    Ok(*trace.metrics().last().expect("epoch 0 is always recorded"))
}

#[derive(Debug, Serialize)]
struct MiMeta<'a> {
    mi: &'a MiConfig,
    estimator_id: String,
    reduction: &'a ReduceConfig,
    /// Upper limit of I(Y;M) implied by the label alphabet.
    label_bits_bound: f64,
    label_entropy_bits: f64,
    /// Layers estimated on a coordinate subsample, with their full width.
    subsampled_layers: BTreeMap<usize, usize>,
}

/// Reduces the probe masks to labels and estimates MI for every captured
/// epoch and layer of `trace_dir`.
pub fn cmd_mi(trace_dir: &Path, out: &Path, mi: &MiConfig, reduction: &ReduceConfig) -> Result<MITrajectory> {
    if !trace_dir.join(MANIFEST).is_file() {
        bail!("no trace at {}: {} is missing", trace_dir.display(), trace_dir.join(MANIFEST).display());
    }
    let trace = ActivationTrace::read_dir(trace_dir)?;
    let masks = trace
        .probe_masks()
        .with_context(|| format!("trace {} has no probe masks", trace_dir.display()))?;
    let reducer = OutputReducer::fit(reduction, masks)?;
    let labels = reducer.labels(masks)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    if let OutputReducer::Kmeans(model) = &reducer {
        model.save(&out.join(CLUSTERS_DIR))?;
    }
    let traj = info_plane(&trace, &labels, mi)?;

    let mut counts = BTreeMap::<usize, u64>::new();
    for &l in &labels {
        *counts.entry(l).or_default() += 1;
    }
    let counts: Vec<u64> = counts.into_values().collect();
    let meta = MiMeta {
        mi,
        estimator_id: mi.estimator.to_string(),
        reduction,
        label_bits_bound: reducer.max_bits(),
        label_entropy_bits: uplot::miest::entropy_discrete(&counts)?,
        subsampled_layers: trace
            .layers()
            .iter()
            .map(|l| (l.index, l.shape.iter().product::<usize>()))
            .filter(|&(_, d)| d > mi.max_dims)
            .collect(),
    };
    write_json(&out.join(MI_META), &meta)?;
    let path = out.join(MI_CSV);
    let file = File::create(&path).with_context(|| format!("writing {}", path.display()))?;
    traj.write_csv(BufWriter::new(file))?;
    Ok(traj)
}

pub fn read_mi_csv(path: &Path) -> Result<MITrajectory> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    MITrajectory::read_csv(file).with_context(|| format!("reading {}", path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Plane,
    Uplot,
}

/// Writes SVG charts into `out` and returns their paths.
pub fn cmd_plot(mi_csv: &Path, kind: PlotKind, out: &Path) -> Result<Vec<PathBuf>> {
    let traj = read_mi_csv(mi_csv)?;
    if traj.estimators().len() > 1 {
        bail!("{} mixes several estimators", mi_csv.display());
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut written = Vec::new();
    let mut emit = |name: String, body: String| -> Result<()> {
        let p = out.join(name);
        fs::write(&p, body).with_context(|| format!("writing {}", p.display()))?;
        written.push(p);
        Ok(())
    };
    match kind {
        PlotKind::Plane => {
            let mut by_layer: BTreeMap<usize, Vec<(usize, f64, f64)>> = BTreeMap::new();
            for r in traj.records() {
                by_layer.entry(r.layer).or_default().push((r.epoch, r.i_xm_bits, r.i_ym_bits));
            }
            for (layer, mut pts) in by_layer {
                pts.sort_by_key(|p| p.0);
                emit(format!("plane_layer_{layer:02}.svg"), svg::plane_svg(layer, &pts))?;
            }
        }
        PlotKind::Uplot => {
            for (q, name) in [(Quantity::IXm, "uplot_ixm.svg"), (Quantity::IYm, "uplot_iym.svg")] {
                emit(name.into(), svg::uplot_svg(&uplot(&traj, q)?))?;
            }
        }
    }
    Ok(written)
}

/// Trains every requested model variant per seed and writes the report
/// and the Dice curves.
pub fn cmd_ablate(cfg: &RunConfig, out: &Path) -> Result<AblationReport> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let (train_set, val_set, _) = cfg.datasets()?;
    let report = ablate_compare(&cfg.network_spec(), &train_set, &val_set, &cfg.ablation_config()?)?;
    write_json(&out.join(ABLATION_JSON), &report)?;
    let path = out.join(CURVES_CSV);
    let file = File::create(&path).with_context(|| format!("writing {}", path.display()))?;
    write_curves_csv(&report.curves, BufWriter::new(file))?;
    Ok(report)
}

#[derive(Debug)]
pub struct RunReport {
    pub dpi: DpiReport,
    pub saturation: SaturationReport,
    pub final_metrics: Option<EpochMetrics>,
}

/// DPI and saturation analysis of a run directory holding `trace/` and
/// `mi.csv`.
pub fn cmd_report(run: &Path, tolerance: f64, epsilon: f64) -> Result<RunReport> {
    let manifest = ActivationTrace::read_manifest(&run.join(TRACE_DIR))?;
    let traj = read_mi_csv(&run.join(MI_CSV))?;
    let graph = build(&manifest.spec)?;
    let dpi = dpi_check(&traj, &graph, tolerance)?;
    let saturation = saturation_detect(&traj, &graph, epsilon)?;
    write_json(&run.join(DPI_JSON), &dpi)?;
    write_json(&run.join(SATURATION_JSON), &saturation)?;
    Ok(RunReport {
        dpi,
        saturation,
        final_metrics: manifest.metrics.last().copied(),
    })
}
