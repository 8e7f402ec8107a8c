//! Output reduction: maps full-resolution binary masks to a small label
//! alphabet, either by block coarsening or by K-means clustering.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::unet::check_binary;
use crate::{ufat, Error, Result, Tensor};

pub const CLUSTERS_JSON: &str = "clusters.json";
pub const CENTROIDS_FILE: &str = "centroids.ufat";

/// `grid x grid` blocks; a block's bit is set when its foreground count
/// is strictly greater than `threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoarsenConfig {
    pub grid: usize,
    pub threshold: usize,
}

impl CoarsenConfig {
    fn validate(&self, side: usize) -> Result<usize> {
        if self.grid == 0 || self.grid * self.grid > 63 {
            return Err(Error::invalid(format!("grid {} must lie in 1..=7", self.grid)));
        }
        if side % self.grid != 0 {
            return Err(Error::invalid(format!(
                "grid {} does not divide mask side {side}",
                self.grid
            )));
        }
        let block = side / self.grid;
        if self.threshold >= block * block {
            return Err(Error::invalid(format!(
                "threshold {} must be below the block area {}",
                self.threshold,
                block * block
            )));
        }
        Ok(block)
    }
}

fn mask_side(mask: &Tensor) -> Result<usize> {
    let s = mask.shape();
    let (h, w) = match s {
        [h, w] | [1, h, w] => (*h, *w),
        _ => {
            return Err(Error::Rank {
                op: "mask",
                rank: s.len(),
                shape: s.to_vec(),
            })
        }
    };
    if h != w {
        return Err(Error::Shape {
            op: "mask",
            dim: "width",
            expected: h,
            got: w,
        });
    }
    Ok(h)
}

/// Packs the block bits of a square mask row-major, top-left block first
/// (most significant).
pub fn spatial_coarsen(mask: &Tensor, cfg: &CoarsenConfig) -> Result<u64> {
    let side = mask_side(mask)?;
    let block = cfg.validate(side)?;
    check_binary(mask.data())?;
    let d = mask.data();
    let mut label = 0u64;
    for by in 0..cfg.grid {
        for bx in 0..cfg.grid {
            let mut count = 0usize;
            for y in by * block..(by + 1) * block {
                let row = &d[y * side + bx * block..y * side + (bx + 1) * block];
                count += row.iter().filter(|&&v| v == 1.0).count();
            }
            label = (label << 1) | u64::from(count > cfg.threshold);
        }
    }
    Ok(label)
}

/// A fitted K-means model over vectorized masks.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    centroids: Vec<Vec<f32>>,
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    /// Sum of squared distances after each Lloyd iteration.
    pub objective_history: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ClusterMeta {
    k: usize,
    dim: usize,
    seed: u64,
    iterations: usize,
    converged: bool,
    objective: f64,
    objective_history: Vec<f64>,
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Index and squared distance of the nearest centroid; ties go to the
/// lowest index.
fn nearest(centroids: &[Vec<f32>], x: &[f32]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn kmeans_pp_init(points: &[&[f32]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f32>> {
    let mut centroids = vec![points[rng.gen_range(0..points.len())].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let r = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = d2.iter().rposition(|&d| d > 0.0).expect("fewer distinct points than k");
        for (i, &d) in d2.iter().enumerate() {
            acc += d;
            if d > 0.0 && acc > r {
                pick = i;
                break;
            }
        }
        centroids.push(points[pick].to_vec());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

/// k-means++ seeded Lloyd iterations until assignments stop changing or
/// `max_iter` iterations have run.
pub fn kmeans_fit(masks: &[&[f32]], k: usize, seed: u64, max_iter: usize) -> Result<ClusterModel> {
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    let dim = masks.first().map_or(0, |m| m.len());
    if let Some(bad) = masks.iter().find(|m| m.len() != dim) {
        return Err(Error::Shape {
            op: "kmeans_fit",
            dim: "mask length",
            expected: dim,
            got: bad.len(),
        });
    }
    let distinct: HashSet<Vec<u32>> = masks
        .iter()
        .map(|m| m.iter().map(|v| v.to_bits()).collect())
        .collect();
    if k > distinct.len() {
        return Err(Error::invalid(format!(
            "K = {k} exceeds the {} distinct masks",
            distinct.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp_init(masks, k, &mut rng);
    let mut assign = vec![usize::MAX; masks.len()];
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iter {
        let next: Vec<usize> = masks.iter().map(|m| nearest(&centroids, m).0).collect();
        if next == assign {
            converged = true;
            break;
        }
        assign = next;
        iterations += 1;

        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (m, &a) in masks.iter().zip(&assign) {
            counts[a] += 1;
            for (s, &v) in sums[a].iter_mut().zip(*m) {
                *s += v as f64;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let n = counts[c] as f64;
                centroids[c] = sums[c].iter().map(|s| (s / n) as f32).collect();
            }
        }
        // Empty clusters jump to the point currently farthest from its own
        // centroid; that point is then treated as covered.
        let mut own: Vec<f64> = masks
            .iter()
            .zip(&assign)
            .map(|(m, &a)| sq_dist(m, &centroids[a]))
            .collect();
        for c in (0..k).filter(|&c| counts[c] == 0) {
            let far = (0..masks.len())
                .fold(0, |best, i| if own[i] > own[best] { i } else { best });
            log::debug!("k-means: cluster {c} empty, reseeding at point {far}");
            centroids[c] = masks[far].to_vec();
            own[far] = 0.0;
        }
        history.push(
            masks
                .iter()
                .zip(&assign)
                .map(|(m, &a)| sq_dist(m, &centroids[a]))
                .sum(),
        );
    }
    if !converged {
        log::warn!("k-means stopped after {max_iter} iterations without converging");
    }
    Ok(ClusterModel {
        centroids,
        seed,
        iterations,
        converged,
        objective_history: history,
    })
}

/// Nearest centroid of `mask`, ties to the lowest index.
pub fn kmeans_assign(model: &ClusterModel, mask: &[f32]) -> Result<usize> {
    if mask.len() != model.dim() {
        return Err(Error::Shape {
            op: "kmeans_assign",
            dim: "mask length",
            expected: model.dim(),
            got: mask.len(),
        });
    }
    Ok(nearest(&model.centroids, mask).0)
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids[0].len()
    }

    pub fn centroids(&self) -> &[Vec<f32>] {
        &self.centroids
    }

    pub fn objective(&self) -> f64 {
        self.objective_history.last().copied().unwrap_or(f64::NAN)
    }

    /// Writes `clusters.json` and `centroids.ufat` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let meta = ClusterMeta {
            k: self.k(),
            dim: self.dim(),
            seed: self.seed,
            iterations: self.iterations,
            converged: self.converged,
            objective: self.objective(),
            objective_history: self.objective_history.clone(),
        };
        fs::write(dir.join(CLUSTERS_JSON), serde_json::to_string_pretty(&meta)? + "\n")?;
        let t = Tensor::new(vec![self.k(), self.dim()], self.centroids.concat())?;
        ufat::write_file(&dir.join(CENTROIDS_FILE), &[("centroids", &t)])
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(CLUSTERS_JSON);
        let text = fs::read_to_string(&path).map_err(|e| Error::file(&path, e.to_string()))?;
        let meta: ClusterMeta = serde_json::from_str(&text).map_err(|e| Error::file(&path, e.to_string()))?;
        let cpath = dir.join(CENTROIDS_FILE);
        let t = ufat::read_named(&cpath, "centroids")?;
        if t.shape() != [meta.k, meta.dim] || meta.k == 0 {
            return Err(Error::file(
                &cpath,
                format!("centroids have shape {:?}, expected [{}, {}]", t.shape(), meta.k, meta.dim),
            ));
        }
        Ok(ClusterModel {
            centroids: t.data().chunks_exact(meta.dim).map(<[f32]>::to_vec).collect(),
            seed: meta.seed,
            iterations: meta.iterations,
            converged: meta.converged,
            objective_history: meta.objective_history,
        })
    }
}

/// How probe masks are turned into Y labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ReduceConfig {
    Coarsen(CoarsenConfig),
    Kmeans { k: usize, seed: u64, max_iter: usize },
}

impl Default for ReduceConfig {
    fn default() -> Self {
        ReduceConfig::Kmeans {
            k: 64,
            seed: 0,
            max_iter: 100,
        }
    }
}

/// A ready-to-use mask labeller.
#[derive(Debug, Clone, PartialEq)]
pub enum OutputReducer {
    Coarsen(CoarsenConfig),
    Kmeans(ClusterModel),
}

impl OutputReducer {
    /// Fits the reducer on `masks` (`[N, 1, S, S]` or `[N, S, S]`).
    pub fn fit(cfg: &ReduceConfig, masks: &Tensor) -> Result<Self> {
        match *cfg {
            ReduceConfig::Coarsen(c) => Ok(OutputReducer::Coarsen(c)),
            ReduceConfig::Kmeans { k, seed, max_iter } => {
                let rows: Vec<&[f32]> = (0..masks.outer_len()).map(|i| masks.outer_slice(i)).collect();
                Ok(OutputReducer::Kmeans(kmeans_fit(&rows, k, seed, max_iter)?))
            }
        }
    }

    /// Upper limit of I(M;Y) in bits implied by the label alphabet.
    pub fn max_bits(&self) -> f64 {
        match self {
            OutputReducer::Coarsen(c) => (c.grid * c.grid) as f64,
            OutputReducer::Kmeans(m) => (m.k() as f64).log2(),
        }
    }

    pub fn labels(&self, masks: &Tensor) -> Result<Vec<usize>> {
        (0..masks.outer_len())
            .map(|i| match self {
                OutputReducer::Coarsen(c) => spatial_coarsen(&masks.outer(i)?, c).map(|l| l as usize),
                OutputReducer::Kmeans(m) => kmeans_assign(m, masks.outer_slice(i)),
            })
            .collect()
    }
}
