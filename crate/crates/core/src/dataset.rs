//! (image, mask) pairs: a seeded synthetic blob generator, a PGM (P5) loader
//! and deterministic train/validation splitting.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::unet::check_binary;
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `[1, S, S]`, values in `[0, 1]`.
    pub image: Tensor,
    /// `[1, S, S]`, values in `{0, 1}`.
    pub mask: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    size: usize,
    source: String,
    seed: u64,
}

impl Dataset {
    /// Validates that every sample is `[1, size, size]` with a binary mask.
    pub fn new(samples: Vec<Sample>, size: usize, source: impl Into<String>, seed: u64) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            for (what, t) in [("image", &s.image), ("mask", &s.mask)] {
                if t.shape() != [1, size, size] {
                    return Err(Error::invalid(format!(
                        "sample {i}: {what} shape {:?}, expected [1, {size}, {size}]",
                        t.shape()
                    )));
                }
            }
            check_binary(s.mask.data())?;
            if s.image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid(format!("sample {i}: image values outside [0, 1]")));
            }
        }
        Ok(Dataset {
            samples,
            size,
            source: source.into(),
            seed,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Spatial side length shared by every sample.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `[N, 1, S, S]` stack of all images.
    pub fn images(&self) -> Result<Tensor> {
        Tensor::stack(&self.samples.iter().map(|s| s.image.clone()).collect::<Vec<_>>())
    }

    /// `[N, 1, S, S]` stack of all masks.
    pub fn masks(&self) -> Result<Tensor> {
        Tensor::stack(&self.samples.iter().map(|s| s.mask.clone()).collect::<Vec<_>>())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            size: self.size,
            source: self.source.clone(),
            seed: self.seed,
        }
    }
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    intensity: f64,
}

impl Ellipse {
    fn random(rng: &mut ChaCha8Rng, size: f64, cfg: &SyntheticConfig) -> Ellipse {
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let (lo, hi) = (cfg.min_axis * size, cfg.max_axis * size);
        Ellipse {
            cx: rng.gen_range(0.1 * size..0.9 * size),
            cy: rng.gen_range(0.1 * size..0.9 * size),
            a: rng.gen_range(lo..=hi),
            b: rng.gen_range(lo..=hi),
            cos: theta.cos(),
            sin: theta.sin(),
            intensity: rng.gen_range(0.5..1.0),
        }
    }

    /// Normalized radius: 1 on the boundary.
    fn radius(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        ((u / self.a).powi(2) + (v / self.b).powi(2)).sqrt()
    }
}

const BACKGROUND: f64 = 0.15;

/// Shape and noise parameters of the synthetic blob generator. Axis
/// lengths are fractions of the image side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_axis: f64,
    pub max_axis: f64,
    pub noise_std: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            min_objects: 1,
            max_objects: 5,
            min_axis: 0.06,
            max_axis: 0.2,
            noise_std: 0.08,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return Err(Error::invalid("object counts must satisfy 1 <= min <= max"));
        }
        if !(self.min_axis > 0.0 && self.min_axis <= self.max_axis && self.max_axis <= 1.0) {
            return Err(Error::invalid("axis fractions must satisfy 0 < min <= max <= 1"));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::invalid("noise_std must be non-negative"));
        }
        Ok(())
    }
}

/// `n` samples of soft-edged ellipses on a noisy background with the
/// default generator settings.
pub fn gen_synthetic(n: usize, size: usize, seed: u64) -> Result<Dataset> {
    gen_synthetic_with(n, size, seed, &SyntheticConfig::default())
}

/// The mask is the exact union of the ellipses (pixel centres inside); the
/// image is the soft-edged intensity map, blurred with a 3x3 binomial kernel,
/// plus Gaussian noise, clipped to `[0, 1]`.
pub fn gen_synthetic_with(n: usize, size: usize, seed: u64, cfg: &SyntheticConfig) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("synthetic dataset needs at least one sample"));
    }
    if size < 8 || size % 2 != 0 {
        return Err(Error::invalid(format!("synthetic size {size} must be even and at least 8")));
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cfg.noise_std).expect("finite std");
    let s = size as f64;
    let mut samples = Vec::with_capacity(n);
    while samples.len() < n {
        let count = rng.gen_range(cfg.min_objects..=cfg.max_objects);
        let ellipses: Vec<Ellipse> = (0..count).map(|_| Ellipse::random(&mut rng, s, cfg)).collect();
        let mut mask = vec![0.0f32; size * size];
        let mut intensity = vec![BACKGROUND; size * size];
        for y in 0..size {
            for x in 0..size {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                for e in &ellipses {
                    let r = e.radius(px, py);
                    if r <= 1.0 {
                        mask[y * size + x] = 1.0;
                    }
                    let edge = 1.0 / (1.0 + (-(1.0 - r) * e.a.min(e.b) / 0.75).exp());
                    let v = BACKGROUND + (e.intensity - BACKGROUND) * edge;
                    intensity[y * size + x] = intensity[y * size + x].max(v);
                }
            }
        }
        if mask.iter().all(|&m| m == 0.0) {
            continue;
        }
        let blurred = binomial_blur(&intensity, size);
        let image: Vec<f32> = blurred
            .iter()
            .map(|&v| (v + noise.sample(&mut rng)).clamp(0.0, 1.0) as f32)
            .collect();
        samples.push(Sample {
            image: Tensor::new(vec![1, size, size], image)?,
            mask: Tensor::new(vec![1, size, size], mask)?,
        });
    }
    Dataset::new(samples, size, "synthetic", seed)
}

/// Separable [1, 2, 1] / 4 blur with edge clamping.
fn binomial_blur(src: &[f64], size: usize) -> Vec<f64> {
    let at = |v: &[f64], y: usize, x: isize, horizontal: bool| -> f64 {
        let c = x.clamp(0, size as isize - 1) as usize;
        if horizontal {
            v[y * size + c]
        } else {
            v[c * size + y]
        }
    };
    let mut tmp = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let xi = x as isize;
            tmp[y * size + x] =
                (at(src, y, xi - 1, true) + 2.0 * at(src, y, xi, true) + at(src, y, xi + 1, true)) / 4.0;
        }
    }
    let mut out = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let yi = y as isize;
            out[y * size + x] =
                (at(&tmp, x, yi - 1, false) + 2.0 * at(&tmp, x, yi, false) + at(&tmp, x, yi + 1, false)) / 4.0;
        }
    }
    out
}

/// Seeded shuffle, then the first `n_train` indices and the next `n_val`.
pub fn split_indices(len: usize, n_train: usize, n_val: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_train + n_val > len {
        return Err(Error::invalid(format!(
            "split of {n_train} + {n_val} exceeds dataset size {len}"
        )));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let val = order[n_train..n_train + n_val].to_vec();
    order.truncate(n_train);
    Ok((order, val))
}

pub fn split(data: &Dataset, n_train: usize, n_val: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, val) = split_indices(data.len(), n_train, n_val, seed)?;
    Ok((data.subset(&train), data.subset(&val)))
}

/// An 8-bit grayscale raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

pub fn parse_pgm(bytes: &[u8], path: &Path) -> Result<Pgm> {
    let bad = |msg: &str| Error::file(path, msg.to_string());
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(bad("not a binary PGM (missing P5 magic)"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&c| c != b'\n') {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(bad("truncated PGM header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("malformed PGM header field"))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(bad("PGM has zero size"));
    }
    if maxval != 255 {
        return Err(bad("only maxval 255 PGM files are supported"));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("missing whitespace after PGM header"));
    }
    pos += 1;
    let payload = &bytes[pos..];
    if payload.len() < width * height {
        return Err(bad("truncated PGM payload"));
    }
    Ok(Pgm {
        width,
        height,
        pixels: payload[..width * height].to_vec(),
    })
}

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    write!(f, "P5\n{width} {height}\n255\n")?;
    f.write_all(pixels)?;
    Ok(())
}

fn resize_nearest(pgm: &Pgm, size: usize) -> Vec<u8> {
    let mut out = vec![0u8; size * size];
    for y in 0..size {
        let sy = y * pgm.height / size;
        for x in 0..size {
            let sx = x * pgm.width / size;
            out[y * size + x] = pgm.pixels[sy * pgm.width + sx];
        }
    }
    out
}

fn pgm_files(dir: &Path) -> Result<BTreeMap<String, std::path::PathBuf>> {
    let mut files = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            files.insert(stem, path);
        }
    }
    Ok(files)
}

/// Loads `*.pgm` pairs matched by file stem, resized (nearest neighbour) to
/// `size`. Images scale to `[0, 1]`; masks binarize at 128.
pub fn load_pairs(images_dir: &Path, masks_dir: &Path, size: usize) -> Result<Dataset> {
    if size == 0 {
        return Err(Error::invalid("target size must be positive"));
    }
    let images = pgm_files(images_dir)?;
    let masks = pgm_files(masks_dir)?;
    if let Some((_, orphan)) = images.iter().find(|(stem, _)| !masks.contains_key(*stem)) {
        return Err(Error::file(orphan, "no mask with a matching file name"));
    }
    if let Some((_, orphan)) = masks.iter().find(|(stem, _)| !images.contains_key(*stem)) {
        return Err(Error::file(orphan, "no image with a matching file name"));
    }
    let mut samples = Vec::with_capacity(images.len());
    for (stem, image_path) in &images {
        let mask_path = &masks[stem];
        let image = parse_pgm(&fs::read(image_path)?, image_path)?;
        let mask = parse_pgm(&fs::read(mask_path)?, mask_path)?;
        let image = resize_nearest(&image, size)
            .into_iter()
            .map(|v| v as f32 / 255.0)
            .collect();
        let mask = resize_nearest(&mask, size)
            .into_iter()
            .map(|v| if v >= 128 { 1.0 } else { 0.0 })
            .collect();
        samples.push(Sample {
            image: Tensor::new(vec![1, size, size], image)?,
            mask: Tensor::new(vec![1, size, size], mask)?,
        });
    }
    Dataset::new(samples, size, format!("pgm:{}", images_dir.display()), 0)
}

/// Writes every sample as `<index>.pgm` into the two directories.
pub fn save_pairs(data: &Dataset, images_dir: &Path, masks_dir: &Path) -> Result<()> {
    fs::create_dir_all(images_dir)?;
    fs::create_dir_all(masks_dir)?;
    let s = data.size();
    for (i, sample) in data.samples().iter().enumerate() {
        let name = format!("{i:05}.pgm");
        let img: Vec<u8> = sample
            .image
            .data()
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        let mask: Vec<u8> = sample.mask.data().iter().map(|&v| if v == 1.0 { 255 } else { 0 }).collect();
        write_pgm(&images_dir.join(&name), s, s, &img)?;
        write_pgm(&masks_dir.join(&name), s, s, &mask)?;
    }
    Ok(())
}
