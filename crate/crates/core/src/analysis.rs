//! From activations to conclusions: information-plane trajectories,
//! U-Plot series, data-processing-inequality checks, saturation-based
//! skip-removal predictions and the four-model skip ablation.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::miest::{Estimator, Points};
use crate::unet::{build, remove_skips, train, ActivationTrace, LayerGraph, NetworkSpec, SkipId, TrainOptions};
use crate::{Error, Result};

pub const MI_CSV_HEADER: [&str; 5] = ["epoch", "layer", "i_xm_bits", "i_ym_bits", "estimator"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiRecord {
    pub epoch: usize,
    pub layer: usize,
    pub i_xm_bits: f64,
    pub i_ym_bits: f64,
    pub estimator: String,
}

/// How layer MI is estimated from a trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiConfig {
    pub estimator: Estimator,
    /// Layers wider than this are estimated on a seeded coordinate subsample.
    pub max_dims: usize,
    pub seed: u64,
}

impl Default for MiConfig {
    fn default() -> Self {
        MiConfig {
            estimator: Estimator::Kde(Default::default()),
            max_dims: 4096,
            seed: 0,
        }
    }
}

/// MI records keyed uniquely by `(epoch, layer, estimator)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MITrajectory {
    records: Vec<MiRecord>,
    /// Settings that produced the records, when known.
    pub config: Option<MiConfig>,
}

impl MITrajectory {
    pub fn from_records(records: Vec<MiRecord>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for r in &records {
            if !seen.insert((r.epoch, r.layer, r.estimator.as_str())) {
                return Err(Error::invalid(format!(
                    "duplicate record for epoch {}, layer {}, estimator {}",
                    r.epoch, r.layer, r.estimator
                )));
            }
            for v in [r.i_xm_bits, r.i_ym_bits] {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::invalid(format!(
                        "epoch {}, layer {}: MI value {v} is not a finite non-negative number",
                        r.epoch, r.layer
                    )));
                }
            }
        }
        Ok(MITrajectory { records, config: None })
    }

    pub fn records(&self) -> &[MiRecord] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn epochs(&self) -> Vec<usize> {
        let e: BTreeSet<usize> = self.records.iter().map(|r| r.epoch).collect();
        e.into_iter().collect()
    }

    pub fn layers(&self) -> Vec<usize> {
        let l: BTreeSet<usize> = self.records.iter().map(|r| r.layer).collect();
        l.into_iter().collect()
    }

    pub fn estimators(&self) -> Vec<String> {
        let e: BTreeSet<&str> = self.records.iter().map(|r| r.estimator.as_str()).collect();
        e.into_iter().map(String::from).collect()
    }

    fn single_estimator(&self) -> Result<()> {
        match self.estimators().len() {
            0 | 1 => Ok(()),
            _ => Err(Error::invalid("trajectory mixes several estimators; filter it first")),
        }
    }

    /// Keeps only the records of one estimator.
    pub fn filter_estimator(&self, id: &str) -> MITrajectory {
        MITrajectory {
            records: self.records.iter().filter(|r| r.estimator == id).cloned().collect(),
            config: self.config,
        }
    }

    /// `(epoch, layer) -> value` for one quantity.
    fn table(&self, which: Quantity) -> BTreeMap<(usize, usize), f64> {
        self.records
            .iter()
            .map(|r| ((r.epoch, r.layer), which.of(r)))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(MI_CSV_HEADER).map_err(csv_err)?;
        for r in &self.records {
            out.write_record([
                r.epoch.to_string(),
                r.layer.to_string(),
                r.i_xm_bits.to_string(),
                r.i_ym_bits.to_string(),
                r.estimator.clone(),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Parses an MI table, naming the first malformed row (1-based, header
    /// is row 1).
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
        let mut rows = rdr.records();
        let header = rows
            .next()
            .ok_or_else(|| Error::invalid("MI table is empty"))?
            .map_err(csv_err)?;
        if header.iter().collect::<Vec<_>>() != MI_CSV_HEADER {
            return Err(Error::invalid(format!(
                "row 1: header must be {}",
                MI_CSV_HEADER.join(",")
            )));
        }
        let mut records = Vec::new();
        for (i, row) in rows.enumerate() {
            let n = i + 2;
            let row = row.map_err(|e| Error::invalid(format!("row {n}: {e}")))?;
            if row.len() != 5 {
                return Err(Error::invalid(format!("row {n}: expected 5 fields, got {}", row.len())));
            }
            let bad = |col: usize| Error::invalid(format!("row {n}: bad {} {:?}", MI_CSV_HEADER[col], &row[col]));
            records.push(MiRecord {
                epoch: row[0].parse().map_err(|_| bad(0))?,
                layer: row[1].parse().map_err(|_| bad(1))?,
                i_xm_bits: row[2].parse().map_err(|_| bad(2))?,
                i_ym_bits: row[3].parse().map_err(|_| bad(3))?,
                estimator: row[4].to_string(),
            });
        }
        Self::from_records(records)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::invalid(format!("csv: {e}"))
}

/// Computes `(I(X;M), I(Y;M))` for every captured epoch and layer. X is
/// uniform over the probe samples; `y_labels[i]` is the reduced label of
/// probe sample `i`.
pub fn info_plane(trace: &ActivationTrace, y_labels: &[usize], cfg: &MiConfig) -> Result<MITrajectory> {
    let n = trace.probe_size();
    if trace.epochs().is_empty() || n == 0 {
        return Err(Error::invalid("trace has no captured activations"));
    }
    if y_labels.len() != n {
        return Err(Error::Shape {
            op: "info_plane",
            dim: "y labels",
            expected: n,
            got: y_labels.len(),
        });
    }
    let x_labels: Vec<usize> = (0..n).collect();
    let id = cfg.estimator.to_string();
    let mut records = Vec::new();
    for epoch in trace.epochs() {
        for layer in 1..=trace.layer_count() {
            let acts = trace.activations(epoch, layer)?;
            // Same coordinate subsample for a layer at every epoch.
            let seed = cfg.seed ^ (layer as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            let points = Points::from_tensor(acts, cfg.max_dims, seed)?;
            let mi = cfg.estimator.layer_mi(&points, &x_labels, y_labels)?;
            records.push(MiRecord {
                epoch,
                layer,
                i_xm_bits: mi.i_xm,
                i_ym_bits: mi.i_ym,
                estimator: id.clone(),
            });
        }
        log::info!("estimated MI for epoch {epoch}");
    }
    let mut traj = MITrajectory::from_records(records)?;
    traj.config = Some(*cfg);
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    IXm,
    IYm,
}

impl Quantity {
    fn of(self, r: &MiRecord) -> f64 {
        match self {
            Quantity::IXm => r.i_xm_bits,
            Quantity::IYm => r.i_ym_bits,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UPlotSeries {
    pub epoch: usize,
    /// Values for layers `1..=n`, in order.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UPlot {
    pub quantity: Quantity,
    pub series: Vec<UPlotSeries>,
    /// Epochs left out because some layers had no record.
    pub omitted: Vec<(usize, String)>,
}

/// One series per epoch of the chosen quantity over layers `1..=n`, where
/// `n` is the largest layer index present.
pub fn uplot(traj: &MITrajectory, which: Quantity) -> Result<UPlot> {
    if traj.is_empty() {
        return Err(Error::invalid("empty trajectory"));
    }
    traj.single_estimator()?;
    let table = traj.table(which);
    let n = traj.layers().last().copied().unwrap_or(0);
    let mut out = UPlot {
        quantity: which,
        series: Vec::new(),
        omitted: Vec::new(),
    };
    for epoch in traj.epochs() {
        let missing: Vec<usize> = (1..=n).filter(|l| !table.contains_key(&(epoch, *l))).collect();
        if missing.is_empty() {
            out.series.push(UPlotSeries {
                epoch,
                values: (1..=n).map(|l| table[&(epoch, l)]).collect(),
            });
        } else {
            log::warn!("epoch {epoch} omitted from U-Plot: missing layers {missing:?}");
            out.omitted.push((epoch, format!("missing layers {missing:?}")));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlagTag {
    ExpectedMerge,
    Anomaly,
}

/// A violation between layers `from` and `to = from + 1`; `excess` is the
/// amount beyond zero change (always positive).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpiFlag {
    pub from: usize,
    pub to: usize,
    pub excess: f64,
    pub tag: FlagTag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochDpi {
    pub epoch: usize,
    /// `I(X;M_{i+1}) > I(X;M_i) + tolerance`.
    pub forward: Vec<DpiFlag>,
    /// `I(Y;M_{i+1}) < I(Y;M_i) - tolerance`.
    pub reverse: Vec<DpiFlag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpiReport {
    pub tolerance: f64,
    pub merge_layers: Vec<usize>,
    pub epochs: Vec<EpochDpi>,
}

impl DpiReport {
    pub fn flags(&self) -> impl Iterator<Item = (usize, &DpiFlag)> {
        self.epochs
            .iter()
            .flat_map(|e| e.forward.iter().chain(&e.reverse).map(move |f| (e.epoch, f)))
    }
}

/// Flags adjacent-layer increases of I(X;M) and decreases of I(Y;M) beyond
/// `tolerance`. Flags landing on a merge layer that has a skip are tagged
/// as expected.
pub fn dpi_check(traj: &MITrajectory, graph: &LayerGraph, tolerance: f64) -> Result<DpiReport> {
    if !(tolerance.is_finite() && tolerance >= 0.0) {
        return Err(Error::invalid(format!("tolerance must be non-negative, got {tolerance}")));
    }
    traj.single_estimator()?;
    let merges = graph.active_merges();
    let tag = |layer: usize| {
        if merges.contains(&layer) {
            FlagTag::ExpectedMerge
        } else {
            FlagTag::Anomaly
        }
    };
    let xm = traj.table(Quantity::IXm);
    let ym = traj.table(Quantity::IYm);
    let mut epochs = Vec::new();
    for epoch in traj.epochs() {
        let mut e = EpochDpi {
            epoch,
            forward: Vec::new(),
            reverse: Vec::new(),
        };
        for from in 1..graph.layer_count() {
            let to = from + 1;
            if let (Some(a), Some(b)) = (xm.get(&(epoch, from)), xm.get(&(epoch, to))) {
                if b > &(a + tolerance) {
                    e.forward.push(DpiFlag { from, to, excess: b - a, tag: tag(to) });
                }
            }
            if let (Some(a), Some(b)) = (ym.get(&(epoch, from)), ym.get(&(epoch, to))) {
                if b < &(a - tolerance) {
                    e.reverse.push(DpiFlag { from, to, excess: a - b, tag: tag(to) });
                }
            }
        }
        epochs.push(e);
    }
    Ok(DpiReport {
        tolerance,
        merge_layers: merges.into_iter().collect(),
        epochs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSaturation {
    pub layer: usize,
    pub max_i_ym_bits: f64,
    pub saturation_epoch: Option<usize>,
}

/// A skip edge and the epoch from which it is predicted to be removable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipPrediction {
    pub skip: SkipId,
    pub source: usize,
    pub merge: usize,
    /// Layer whose I(Y;M) saturation makes the skip redundant.
    pub reference_layer: usize,
    /// Removable under any epoch budget greater than this.
    pub removable_after: Option<usize>,
}

impl SkipPrediction {
    pub fn removable_at(&self, budget: usize) -> bool {
        self.removable_after.is_some_and(|e| e < budget)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationReport {
    pub epsilon: f64,
    pub layers: Vec<LayerSaturation>,
    pub predictions: Vec<SkipPrediction>,
}

impl SaturationReport {
    pub fn saturation_epoch(&self, layer: usize) -> Option<usize> {
        self.layers
            .iter()
            .find(|l| l.layer == layer)
            .and_then(|l| l.saturation_epoch)
    }
}

/// First capture epoch from which I(Y;M) stays within `epsilon` of the
/// layer's maximum for the rest of the run.
///
/// The skip into merge layer `m` is predicted removable once the merge one
/// decoder stage deeper (`m - 3`) has saturated; for the deepest skip that
/// reference is the bottleneck.
pub fn saturation_detect(traj: &MITrajectory, graph: &LayerGraph, epsilon: f64) -> Result<SaturationReport> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    traj.single_estimator()?;
    let epochs = traj.epochs();
    if epochs.len() < 2 {
        return Err(Error::invalid("saturation needs at least two capture epochs"));
    }
    let ym = traj.table(Quantity::IYm);
    let mut layers = Vec::new();
    for layer in traj.layers() {
        let series: Vec<(usize, f64)> = epochs
            .iter()
            .filter_map(|&e| ym.get(&(e, layer)).map(|&v| (e, v)))
            .collect();
        let max = series.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let mut saturation_epoch = None;
        for &(e, v) in series.iter().rev() {
            if v >= max - epsilon {
                saturation_epoch = Some(e);
            } else {
                break;
            }
        }
        layers.push(LayerSaturation {
            layer,
            max_i_ym_bits: max,
            saturation_epoch,
        });
    }
    let layout = graph.layout();
    let mut report = SaturationReport {
        epsilon,
        layers,
        predictions: Vec::new(),
    };
    for (skip, source, merge) in graph.spec().skip_edges() {
        let stage = layout.stage_for_level(skip.level());
        let reference_layer = if stage == 0 {
            layout.bottleneck()
        } else {
            layout.merge(stage - 1)
        };
        report.predictions.push(SkipPrediction {
            skip,
            source,
            merge,
            reference_layer,
            removable_after: report.saturation_epoch(reference_layer),
        });
    }
    Ok(report)
}

/// Settings of a skip-ablation comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub models: Vec<u8>,
    pub seeds: Vec<u64>,
    /// Dice slack below Model 1's best validation Dice that counts as reached.
    pub delta: f64,
    /// Allowed relative gap between Model 2's and Model 1's epochs-to-reach.
    pub model2_slack: f64,
    pub training: TrainOptions,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            models: vec![1, 2, 3, 4],
            seeds: vec![1, 2, 3],
            delta: 0.01,
            model2_slack: 0.25,
            training: TrainOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub model: u8,
    pub seed: u64,
    pub epoch: usize,
    pub train_dice: f64,
    pub val_dice: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub failed: Option<String>,
    pub final_train_dice: Option<f64>,
    pub final_val_dice: Option<f64>,
    pub best_val_dice: Option<f64>,
    pub target_dice: Option<f64>,
    pub epochs_to_reach: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: u8,
    pub removed_skips: Vec<String>,
    pub runs: Vec<RunSummary>,
    /// `None` when the median run never reaches the target.
    pub median_epochs_to_reach: Option<f64>,
    pub median_final_val_dice: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub epochs: usize,
    pub delta: f64,
    pub models: Vec<ModelSummary>,
    /// `None` when the comparison is undetermined.
    pub ordering_holds: Option<bool>,
    pub ordering_detail: String,
    #[serde(skip)]
    pub curves: Vec<CurvePoint>,
}

/// Median where `None` stands for "never" and sorts last.
fn median_epochs(values: &[Option<usize>]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().map(|e| e.map_or(f64::INFINITY, |e| e as f64)).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    let med = if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 };
    med.is_finite().then_some(med)
}

fn median(values: &[f64]) -> Option<f64> {
    let mut v = values.to_vec();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

fn fmt_epochs(e: Option<f64>) -> String {
    e.map_or("never".into(), |v| v.to_string())
}

fn ordering_verdict(models: &[ModelSummary], epochs: usize, slack: f64) -> (Option<bool>, String) {
    if epochs < 2 {
        return (None, "undetermined: fewer than two epochs".into());
    }
    let by_id: BTreeMap<u8, Option<f64>> = models
        .iter()
        .map(|m| (m.model, m.median_epochs_to_reach))
        .collect();
    let inf = |e: Option<f64>| e.unwrap_or(f64::INFINITY);
    let mut notes = Vec::new();
    let mut holds = true;
    let chain: Vec<u8> = [2, 3, 4].into_iter().filter(|m| by_id.contains_key(m)).collect();
    for w in chain.windows(2) {
        let (a, b) = (by_id[&w[0]], by_id[&w[1]]);
        let ok = inf(a) <= inf(b);
        holds &= ok;
        notes.push(format!(
            "model {} ({}) {} model {} ({})",
            w[0],
            fmt_epochs(a),
            if ok { "<=" } else { ">" },
            w[1],
            fmt_epochs(b)
        ));
    }
    if let (Some(&m1), Some(&m2)) = (by_id.get(&1), by_id.get(&2)) {
        let ok = match (m1, m2) {
            (Some(a), Some(b)) => (b - a).abs() <= slack * a,
            _ => false,
        };
        holds &= ok;
        notes.push(format!(
            "model 2 ({}) {} {}% of model 1 ({})",
            fmt_epochs(m2),
            if ok { "within" } else { "not within" },
            slack * 100.0,
            fmt_epochs(m1)
        ));
    }
    if notes.is_empty() {
        notes.push("single model, nothing to compare".into());
    }
    (Some(holds), notes.join("; "))
}

/// Trains each requested model variant once per seed on the same data and
/// compares how many epochs each needs to come within `delta` of Model 1's
/// best validation Dice (paired by seed).
pub fn ablate_compare(
    base: &NetworkSpec,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &AblationConfig,
) -> Result<AblationReport> {
    cfg.training.validate()?;
    if cfg.training.epochs == 0 {
        return Err(Error::invalid("ablation needs at least one epoch"));
    }
    if val_set.is_empty() {
        return Err(Error::invalid("ablation needs a validation set"));
    }
    let mut models: Vec<u8> = cfg.models.clone();
    models.sort_unstable();
    models.dedup();
    if models.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::invalid("ablation needs at least one model and one seed"));
    }
    let opts = TrainOptions {
        capture_epochs: Vec::new(),
        ..cfg.training.clone()
    };
    let empty = val_set.subset(&[]);

    // model -> seed -> per-epoch (train, val) Dice, or the failure.
    let mut runs: BTreeMap<u8, Vec<(u64, std::result::Result<Vec<(f64, f64)>, String>)>> = BTreeMap::new();
    let mut curves = Vec::new();
    for &model in &models {
        for &seed in &cfg.seeds {
            let spec = remove_skips(&NetworkSpec { seed, ..base.clone() }, model)?;
            let mut graph = build(&spec)?;
            log::info!("ablation: model {model}, seed {seed}");
            let outcome = match train(&mut graph, train_set, val_set, &empty, &opts) {
                Ok(trace) => {
                    let dice: Vec<(f64, f64)> = trace
                        .metrics()
                        .iter()
                        .filter(|m| m.epoch >= 1)
                        .map(|m| (m.train_dice, m.val_dice.unwrap_or(f64::NAN)))
                        .collect();
                    for (i, &(t, v)) in dice.iter().enumerate() {
                        curves.push(CurvePoint {
                            model,
                            seed,
                            epoch: i + 1,
                            train_dice: t,
                            val_dice: v,
                        });
                    }
                    Ok(dice)
                }
                Err(e @ Error::Diverged { .. }) => {
                    log::warn!("model {model}, seed {seed}: {e}");
                    Err(e.to_string())
                }
                Err(e) => return Err(e),
            };
            runs.entry(model).or_default().push((seed, outcome));
        }
    }

    // Targets come from Model 1 (or the lowest model present), per seed.
    let reference = if models.contains(&1) { 1 } else { models[0] };
    let best = |d: &[(f64, f64)]| d.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let targets: BTreeMap<u64, f64> = runs[&reference]
        .iter()
        .filter_map(|(s, r)| r.as_ref().ok().map(|d| (*s, best(d) - cfg.delta)))
        .collect();

    let mut summaries = Vec::new();
    for &model in &models {
        let spec = remove_skips(base, model)?;
        let mut list = Vec::new();
        for (seed, outcome) in &runs[&model] {
            let target = targets.get(seed).copied();
            list.push(match outcome {
                Ok(d) => RunSummary {
                    seed: *seed,
                    failed: None,
                    final_train_dice: d.last().map(|p| p.0),
                    final_val_dice: d.last().map(|p| p.1),
                    best_val_dice: Some(best(d)),
                    target_dice: target,
                    epochs_to_reach: target.and_then(|t| d.iter().position(|p| p.1 >= t).map(|i| i + 1)),
                },
                Err(msg) => RunSummary {
                    seed: *seed,
                    failed: Some(msg.clone()),
                    final_train_dice: None,
                    final_val_dice: None,
                    best_val_dice: None,
                    target_dice: target,
                    epochs_to_reach: None,
                },
            });
        }
        let reach: Vec<Option<usize>> = list.iter().map(|r| r.epochs_to_reach).collect();
        let finals: Vec<f64> = list.iter().filter_map(|r| r.final_val_dice).collect();
        summaries.push(ModelSummary {
            model,
            removed_skips: spec.removed_skips().iter().map(ToString::to_string).collect(),
            median_epochs_to_reach: median_epochs(&reach),
            median_final_val_dice: median(&finals),
            runs: list,
        });
    }
    let (ordering_holds, ordering_detail) = ordering_verdict(&summaries, cfg.training.epochs, cfg.model2_slack);
    Ok(AblationReport {
        epochs: cfg.training.epochs,
        delta: cfg.delta,
        models: summaries,
        ordering_holds,
        ordering_detail,
        curves,
    })
}

/// Writes `model,seed,epoch,train_dice,val_dice` rows.
pub fn write_curves_csv<W: Write>(curves: &[CurvePoint], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for c in curves {
        out.serialize(c).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}
