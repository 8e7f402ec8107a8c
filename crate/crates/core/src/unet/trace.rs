use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::graph::LayerKind;
use super::spec::NetworkSpec;
use super::train::{EpochMetrics, TrainOptions};
use crate::{ufat, Error, Result, Tensor};

pub const MANIFEST: &str = "manifest.json";
pub const PROBE_FILE: &str = "probe.ufat";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerInfo {
    pub index: usize,
    pub kind: LayerKind,
    pub shape: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureEntry {
    pub epoch: usize,
    pub file: String,
}

/// `manifest.json` of a trace directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    /// The only field that differs between otherwise identical runs.
    pub created_unix: u64,
    pub spec: NetworkSpec,
    pub training: TrainOptions,
    pub probe_size: usize,
    pub layers: Vec<LayerInfo>,
    pub captures: Vec<CaptureEntry>,
    pub metrics: Vec<EpochMetrics>,
}

/// Training metrics plus per-epoch, per-layer probe activations.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    spec: NetworkSpec,
    options: TrainOptions,
    metrics: Vec<EpochMetrics>,
    layers: Vec<LayerInfo>,
    captures: BTreeMap<usize, Vec<Tensor>>,
    probe_images: Option<Tensor>,
    probe_masks: Option<Tensor>,
}

fn epoch_file(epoch: usize) -> String {
    format!("epoch_{epoch:05}.ufat")
}

fn layer_name(index: usize) -> String {
    format!("layer_{index:02}")
}

impl ActivationTrace {
    pub fn new(
        spec: NetworkSpec,
        options: TrainOptions,
        metrics: Vec<EpochMetrics>,
        captures: BTreeMap<usize, Vec<Tensor>>,
        probe_images: Option<Tensor>,
        probe_masks: Option<Tensor>,
        layers: Vec<(LayerKind, [usize; 3])>,
    ) -> Result<Self> {
        let layers: Vec<LayerInfo> = layers
            .into_iter()
            .enumerate()
            .map(|(i, (kind, shape))| LayerInfo {
                index: i + 1,
                kind,
                shape,
            })
            .collect();
        let probe_size = probe_images.as_ref().map_or(0, Tensor::outer_len);
        if probe_masks.as_ref().map_or(0, Tensor::outer_len) != probe_size {
            return Err(Error::invalid("probe images and masks differ in count"));
        }
        for (&epoch, tensors) in &captures {
            if tensors.len() != layers.len() {
                return Err(Error::invalid(format!(
                    "epoch {epoch}: {} captured layers, network has {}",
                    tensors.len(),
                    layers.len()
                )));
            }
            for (info, t) in layers.iter().zip(tensors) {
                let mut expected = vec![probe_size];
                expected.extend_from_slice(&info.shape);
                if t.shape() != expected {
                    return Err(Error::invalid(format!(
                        "epoch {epoch}, layer {}: shape {:?}, expected {:?}",
                        info.index,
                        t.shape(),
                        expected
                    )));
                }
            }
        }
        Ok(ActivationTrace {
            spec,
            options,
            metrics,
            layers,
            captures,
            probe_images,
            probe_masks,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn options(&self) -> &TrainOptions {
        &self.options
    }

    pub fn metrics(&self) -> &[EpochMetrics] {
        &self.metrics
    }

    pub fn layers(&self) -> &[LayerInfo] {
        &self.layers
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Captured epochs in ascending order.
    pub fn epochs(&self) -> Vec<usize> {
        self.captures.keys().copied().collect()
    }

    /// `[N, C, H, W]` activations of `layer` (1-based) at `epoch`.
    pub fn activations(&self, epoch: usize, layer: usize) -> Result<&Tensor> {
        self.captures
            .get(&epoch)
            .and_then(|v| layer.checked_sub(1).and_then(|i| v.get(i)))
            .ok_or(Error::MissingLayer { epoch, layer })
    }

    pub fn probe_size(&self) -> usize {
        self.probe_images.as_ref().map_or(0, Tensor::outer_len)
    }

    pub fn probe_images(&self) -> Option<&Tensor> {
        self.probe_images.as_ref()
    }

    pub fn probe_masks(&self) -> Option<&Tensor> {
        self.probe_masks.as_ref()
    }

    pub fn manifest(&self) -> Manifest {
        let created_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Manifest {
            format: "uplot-trace".into(),
            version: 1,
            created_unix,
            spec: self.spec.clone(),
            training: self.options.clone(),
            probe_size: self.probe_size(),
            layers: self.layers.clone(),
            captures: self
                .captures
                .keys()
                .map(|&epoch| CaptureEntry {
                    epoch,
                    file: epoch_file(epoch),
                })
                .collect(),
            metrics: self.metrics.clone(),
        }
    }

    /// Writes `manifest.json`, `probe.ufat` and one UFAT file per capture epoch.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        if let (Some(images), Some(masks)) = (&self.probe_images, &self.probe_masks) {
            ufat::write_file(&dir.join(PROBE_FILE), &[("images", images), ("masks", masks)])?;
        }
        for (&epoch, tensors) in &self.captures {
            let names: Vec<String> = (1..=tensors.len()).map(layer_name).collect();
            let entries: Vec<(&str, &Tensor)> =
                names.iter().map(String::as_str).zip(tensors.iter()).collect();
            ufat::write_file(&dir.join(epoch_file(epoch)), &entries)?;
        }
        let json = serde_json::to_string_pretty(&self.manifest())?;
        fs::write(dir.join(MANIFEST), json + "\n")?;
        Ok(())
    }

    pub fn read_manifest(dir: &Path) -> Result<Manifest> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::file(&path, e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| Error::file(&path, e.to_string()))
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let manifest = Self::read_manifest(dir)?;
        let probe_path = dir.join(PROBE_FILE);
        let (probe_images, probe_masks) = if manifest.probe_size > 0 {
            (
                Some(ufat::read_named(&probe_path, "images")?),
                Some(ufat::read_named(&probe_path, "masks")?),
            )
        } else {
            (None, None)
        };
        let mut captures = BTreeMap::new();
        let mut last = 0;
        for entry in &manifest.captures {
            if entry.epoch <= last {
                return Err(Error::file(dir.join(MANIFEST), "capture epochs not strictly increasing"));
            }
            last = entry.epoch;
            let path = dir.join(&entry.file);
            let mut by_name: BTreeMap<String, Tensor> = ufat::read_file(&path)?.into_iter().collect();
            let tensors = manifest
                .layers
                .iter()
                .map(|l| {
                    by_name
                        .remove(&layer_name(l.index))
                        .ok_or_else(|| Error::file(&path, format!("missing {}", layer_name(l.index))))
                })
                .collect::<Result<Vec<_>>>()?;
            captures.insert(entry.epoch, tensors);
        }
        ActivationTrace::new(
            manifest.spec,
            manifest.training,
            manifest.metrics,
            captures,
            probe_images,
            probe_masks,
            manifest.layers.iter().map(|l| (l.kind, l.shape)).collect(),
        )
    }
}
