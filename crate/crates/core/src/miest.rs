//! Entropy and mutual information estimators, all reported in bits.
//!
//! * [`entropy_discrete`] / [`mi_discrete`]: plug-in estimates from counts.
//! * [`hist_mi_layer`]: bins every activation coordinate with a fixed width
//!   over the layer's empirical range, treats each binned vector as a symbol
//!   and falls back to the discrete estimators.
//! * [`kde_entropy`] / [`kde_mi_layer`]: treats the activations as centres of
//!   an equal-weight Gaussian mixture with covariance `σ²·I` and bounds its
//!   entropy with pairwise distances,
//!
//!   ```text
//!   H ≈ d/2·ln(2πeσ²) − 1/N · Σ_i ln( 1/N · Σ_j exp(−‖s_i − s_j‖² / (κσ²)) )
//!   ```
//!
//!   where κ = 2 (KL distance, upper bound) or κ = 8 (Bhattacharyya
//!   distance, lower bound).
//!
//! For layer MI the input X is uniform over the probe samples, each its own
//! symbol, so `I(X;M) = H(M) − H(M|X)` with `H(M|X)` the entropy of a single
//! noise kernel.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::{E, LN_2, PI};
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Tensor};

/// Histogram estimator settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistConfig {
    pub bin_width: f64,
}

impl Default for HistConfig {
    fn default() -> Self {
        HistConfig { bin_width: 0.2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KdeBound {
    #[default]
    Upper,
    Lower,
}

/// Gaussian-KDE estimator settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KdeConfig {
    pub noise_variance: f64,
    #[serde(default)]
    pub bound: KdeBound,
}

impl Default for KdeConfig {
    fn default() -> Self {
        KdeConfig {
            noise_variance: 1.0,
            bound: KdeBound::Upper,
        }
    }
}

impl KdeConfig {
    fn validate(&self) -> Result<()> {
        if !(self.noise_variance.is_finite() && self.noise_variance > 0.0) {
            return Err(Error::invalid(format!(
                "noise variance must be positive, got {}",
                self.noise_variance
            )));
        }
        Ok(())
    }

    /// Entropy of one noise kernel in `dim` dimensions, in bits.
    pub fn kernel_entropy_bits(&self, dim: usize) -> f64 {
        0.5 * dim as f64 * (2.0 * PI * E * self.noise_variance).log2()
    }
}

/// A layer estimator with its settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Estimator {
    Hist(HistConfig),
    Kde(KdeConfig),
}

impl fmt::Display for Estimator {
    /// The identifier written into MI tables, e.g. `kde(σ²=1)` or `hist(0.2)`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Estimator::Hist(h) => write!(f, "hist({})", h.bin_width),
            Estimator::Kde(k) => match k.bound {
                KdeBound::Upper => write!(f, "kde(σ²={})", k.noise_variance),
                KdeBound::Lower => write!(f, "kde-lower(σ²={})", k.noise_variance),
            },
        }
    }
}

/// `(I(X;M), I(Y;M))` for one layer, in bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerMi {
    pub i_xm: f64,
    pub i_ym: f64,
}

/// Dense contingency table of two discrete variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointCounts {
    rows: usize,
    cols: usize,
    counts: Vec<u64>,
}

impl JointCounts {
    /// Row-major `rows x cols` table; needs at least one positive entry.
    pub fn new(rows: usize, cols: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != rows * cols {
            return Err(Error::Shape {
                op: "JointCounts::new",
                dim: "entry count",
                expected: rows * cols,
                got: counts.len(),
            });
        }
        if counts.iter().all(|&c| c == 0) {
            return Err(Error::invalid("joint table has no positive entries"));
        }
        Ok(JointCounts { rows, cols, counts })
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged joint table"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    /// Tabulates paired observations; labels are densely re-indexed in
    /// ascending order.
    pub fn from_pairs(xs: &[usize], ys: &[usize]) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::Shape {
                op: "JointCounts::from_pairs",
                dim: "label count",
                expected: xs.len(),
                got: ys.len(),
            });
        }
        let xi = dense_index(xs);
        let yi = dense_index(ys);
        let (rows, cols) = (xi.len(), yi.len());
        let mut counts = vec![0u64; rows * cols];
        for (x, y) in xs.iter().zip(ys) {
            counts[xi[x] * cols + yi[y]] += 1;
        }
        Self::new(rows, cols, counts)
    }

    pub fn get(&self, r: usize, c: usize) -> u64 {
        self.counts[r * self.cols + c]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_marginal(&self) -> Vec<u64> {
        self.counts.chunks_exact(self.cols).map(|r| r.iter().sum()).collect()
    }

    pub fn col_marginal(&self) -> Vec<u64> {
        (0..self.cols)
            .map(|c| (0..self.rows).map(|r| self.get(r, c)).sum())
            .collect()
    }

    pub fn transpose(&self) -> JointCounts {
        let mut counts = vec![0u64; self.counts.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                counts[c * self.rows + r] = self.get(r, c);
            }
        }
        JointCounts {
            rows: self.cols,
            cols: self.rows,
            counts,
        }
    }
}

fn dense_index(labels: &[usize]) -> BTreeMap<usize, usize> {
    let mut map: BTreeMap<usize, usize> = labels.iter().map(|&l| (l, 0)).collect();
    for (i, v) in map.values_mut().enumerate() {
        *v = i;
    }
    map
}

/// Shannon entropy of the empirical distribution given by `counts`.
pub fn entropy_discrete(counts: &[u64]) -> Result<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::invalid("entropy of an all-zero count vector"));
    }
    let n = total as f64;
    // Written as p·log2(N/n) so that mi_discrete of a diagonal table
    // reproduces this sum term for term.
    Ok(counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| (c as f64 / n) * (n / c as f64).log2())
        .sum())
}

/// Plug-in mutual information of a contingency table.
pub fn mi_discrete(joint: &JointCounts) -> Result<f64> {
    let total = joint.total();
    if total == 0 {
        return Err(Error::invalid("mutual information of an empty table"));
    }
    let n = total as f64;
    let rm = joint.row_marginal();
    let cm = joint.col_marginal();
    let mut mi = 0.0f64;
    for r in 0..joint.rows {
        for c in 0..joint.cols {
            let nxy = joint.get(r, c);
            if nxy == 0 {
                continue;
            }
            let ratio = (nxy as f64 * n) / (rm[r] as f64 * cm[c] as f64);
            mi += (nxy as f64 / n) * ratio.log2();
        }
    }
    Ok(if mi > 0.0 { mi } else { 0.0 })
}

/// Row-major sample matrix: `n` points of dimension `dim`.
///
/// Points taken from a coordinate subsample remember the original
/// dimension; the KDE estimators then rescale squared distances by
/// `full_dim / dim` so that they estimate full-space distances.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    data: Vec<f64>,
    dim: usize,
    full_dim: usize,
}

impl Points {
    pub fn new(data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("points must have positive dimension"));
        }
        if data.len() % dim != 0 {
            return Err(Error::invalid(format!(
                "{} values do not form rows of dimension {dim}",
                data.len()
            )));
        }
        Ok(Points {
            data,
            dim,
            full_dim: dim,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::invalid("rows differ in dimension"));
        }
        Self::new(rows.concat(), dim)
    }

    /// Flattens an `[N, ...]` tensor into `N` points, keeping at most
    /// `max_dims` coordinates chosen with `seed` (sorted, same for every row).
    pub fn from_tensor(t: &Tensor, max_dims: usize, seed: u64) -> Result<Self> {
        let n = t.outer_len();
        let dim = if n == 0 { 0 } else { t.len() / n };
        if dim <= max_dims || max_dims == 0 {
            return Self::new(t.data().iter().map(|&v| v as f64).collect(), dim);
        }
        let mut keep = rand::seq::index::sample(&mut ChaCha8Rng::seed_from_u64(seed), dim, max_dims).into_vec();
        keep.sort_unstable();
        let mut data = Vec::with_capacity(n * max_dims);
        for i in 0..n {
            let row = t.outer_slice(i);
            data.extend(keep.iter().map(|&k| row[k] as f64));
        }
        let mut p = Self::new(data, max_dims)?;
        p.full_dim = dim;
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Dimension before any coordinate subsampling.
    pub fn full_dim(&self) -> usize {
        self.full_dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn squared_distances(&self) -> Vec<f64> {
        let n = self.len();
        let scale = self.full_dim as f64 / self.dim as f64;
        let mut d = vec![0.0f64; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let s: f64 = self
                    .row(i)
                    .iter()
                    .zip(self.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    * scale;
                d[i * n + j] = s;
                d[j * n + i] = s;
            }
        }
        d
    }
}

fn check_labels(n: usize, x_labels: &[usize], y_labels: &[usize]) -> Result<()> {
    for (what, l) in [("x labels", x_labels), ("y labels", y_labels)] {
        if l.len() != n {
            return Err(Error::Shape {
                op: "layer MI",
                dim: what,
                expected: n,
                got: l.len(),
            });
        }
    }
    if n < 2 {
        return Err(Error::invalid("layer MI needs at least two samples"));
    }
    Ok(())
}

/// Symbol id of each row after per-coordinate binning.
pub fn bin_symbols(points: &Points, cfg: &HistConfig) -> Result<Vec<usize>> {
    if !(cfg.bin_width.is_finite() && cfg.bin_width > 0.0) {
        return Err(Error::invalid(format!("bin width must be positive, got {}", cfg.bin_width)));
    }
    let (lo, hi) = points
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let last_bin = if hi > lo {
        ((hi - lo) / cfg.bin_width).floor() as u64
    } else {
        0
    };
    let mut table: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut out = Vec::with_capacity(points.len());
    for i in 0..points.len() {
        let key: Vec<u64> = points
            .row(i)
            .iter()
            .map(|&v| (((v - lo) / cfg.bin_width).floor() as u64).min(last_bin))
            .collect();
        let next = table.len();
        out.push(*table.entry(key).or_insert(next));
    }
    Ok(out)
}

/// Histogram estimate of `(I(X;M), I(Y;M))`.
pub fn hist_mi_layer(points: &Points, x_labels: &[usize], y_labels: &[usize], cfg: &HistConfig) -> Result<LayerMi> {
    check_labels(points.len(), x_labels, y_labels)?;
    let symbols = bin_symbols(points, cfg)?;
    Ok(LayerMi {
        i_xm: mi_discrete(&JointCounts::from_pairs(x_labels, &symbols)?)?,
        i_ym: mi_discrete(&JointCounts::from_pairs(y_labels, &symbols)?)?,
    })
}

/// Mixture entropy bound over the subset `idx` of a precomputed distance
/// matrix, in bits.
fn mixture_entropy_bits(dists: &[f64], n_all: usize, idx: &[usize], dim: usize, cfg: &KdeConfig) -> f64 {
    let kappa = match cfg.bound {
        KdeBound::Upper => 2.0,
        KdeBound::Lower => 8.0,
    };
    let scale = 1.0 / (kappa * cfg.noise_variance);
    let ln_n = (idx.len() as f64).ln();
    let mut acc = 0.0f64;
    for &i in idx {
        // The diagonal term exp(0) = 1 is the row maximum.
        let s: f64 = idx.iter().map(|&j| (-dists[i * n_all + j] * scale).exp()).sum();
        acc += s.ln() - ln_n;
    }
    cfg.kernel_entropy_bits(dim) - acc / idx.len() as f64 / LN_2
}

/// Entropy (bits) of the equal-weight Gaussian mixture centred at `points`.
pub fn kde_entropy(points: &Points, cfg: &KdeConfig) -> Result<f64> {
    cfg.validate()?;
    if points.is_empty() {
        return Err(Error::invalid("KDE entropy of zero samples"));
    }
    let idx: Vec<usize> = (0..points.len()).collect();
    Ok(mixture_entropy_bits(&points.squared_distances(), points.len(), &idx, points.full_dim(), cfg))
}

/// `H(M) − Σ_c p(c)·H(M | label = c)`, clamped at zero.
fn kde_conditional_mi(dists: &[f64], n: usize, dim: usize, h_all: f64, labels: &[usize], cfg: &KdeConfig) -> f64 {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    let h_cond: f64 = groups
        .values()
        .map(|g| g.len() as f64 / n as f64 * mixture_entropy_bits(dists, n, g, dim, cfg))
        .sum();
    let mi = h_all - h_cond;
    if mi > 0.0 {
        mi
    } else {
        0.0
    }
}

/// Gaussian-KDE estimate of `(I(X;M), I(Y;M))`.
pub fn kde_mi_layer(points: &Points, x_labels: &[usize], y_labels: &[usize], cfg: &KdeConfig) -> Result<LayerMi> {
    cfg.validate()?;
    let n = points.len();
    check_labels(n, x_labels, y_labels)?;
    let dists = points.squared_distances();
    let all: Vec<usize> = (0..n).collect();
    let dim = points.full_dim();
    let h_all = mixture_entropy_bits(&dists, n, &all, dim, cfg);
    Ok(LayerMi {
        i_xm: kde_conditional_mi(&dists, n, dim, h_all, x_labels, cfg),
        i_ym: kde_conditional_mi(&dists, n, dim, h_all, y_labels, cfg),
    })
}

impl Estimator {
    pub fn layer_mi(&self, points: &Points, x_labels: &[usize], y_labels: &[usize]) -> Result<LayerMi> {
        match self {
            Estimator::Hist(h) => hist_mi_layer(points, x_labels, y_labels, h),
            Estimator::Kde(k) => kde_mi_layer(points, x_labels, y_labels, k),
        }
    }
}
