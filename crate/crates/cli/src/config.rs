use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use uplot::analysis::AblationConfig;
use uplot::dataset::{self, Dataset, SyntheticConfig};
use uplot::miest::{Estimator, KdeConfig};
use uplot::reduce::ReduceConfig;
use uplot::unet::{exponential_schedule, NetworkSpec, TrainOptions};

/// Network shape; the seed lives on [`RunConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub input_size: usize,
    pub levels: usize,
    pub base_channels: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            input_size: 32,
            levels: 4,
            base_channels: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic {
        count: usize,
        seed: u64,
        #[serde(default)]
        generator: SyntheticConfig,
    },
    /// Paired grayscale PGM files matched by file stem.
    Dirs { images: PathBuf, masks: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub train: usize,
    pub val: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CaptureSchedule {
    /// `"exponential"`: 1, 2, 5, 10, 20, 50, ... and the last epoch.
    Named(String),
    Epochs(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub capture: CaptureSchedule,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let t = TrainOptions::default();
        TrainingConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            capture: CaptureSchedule::Named("exponential".into()),
        }
    }
}

impl TrainingConfig {
    pub fn options(&self) -> Result<TrainOptions> {
        let capture_epochs = match &self.capture {
            CaptureSchedule::Named(n) if n == "exponential" => exponential_schedule(self.epochs),
            CaptureSchedule::Named(n) => bail!("unknown capture schedule {n:?}; use \"exponential\" or a list"),
            CaptureSchedule::Epochs(e) => e.clone(),
        };
        let opts = TrainOptions {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            capture_epochs,
        };
        opts.validate()?;
        Ok(opts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub models: Vec<u8>,
    pub seeds: Vec<u64>,
    pub delta: f64,
    pub model2_slack: f64,
}

impl Default for AblationSection {
    fn default() -> Self {
        let a = AblationConfig::default();
        AblationSection {
            models: a.models,
            seeds: a.seeds,
            delta: a.delta,
            model2_slack: a.model2_slack,
        }
    }
}

/// Everything a run needs, read from a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub network: NetworkConfig,
    pub dataset: DatasetSource,
    pub split: SplitConfig,
    /// Number of validation samples used as the probe set (all when absent).
    pub probe_size: Option<usize>,
    pub training: TrainingConfig,
    pub estimator: Estimator,
    pub max_dims: usize,
    pub reduction: ReduceConfig,
    pub ablation: AblationSection,
    pub out: PathBuf,
}

impl Default for RunConfig {
    /// The desk-scale setup: 32x32 synthetic blobs, 4 levels, 8 base channels.
    fn default() -> Self {
        RunConfig {
            seed: 1,
            network: NetworkConfig::default(),
            dataset: DatasetSource::Synthetic {
                count: 112,
                seed: 1,
                // Fewer, larger blobs than the library default: at 32x32 the
                // small-object default leaves boundary detail to the top skip,
                // which dominates any comparison between the model variants.
                generator: SyntheticConfig {
                    max_objects: 3,
                    min_axis: 0.12,
                    max_axis: 0.3,
                    ..SyntheticConfig::default()
                },
            },
            split: SplitConfig {
                train: 64,
                val: 48,
                seed: 2,
            },
            probe_size: None,
            training: TrainingConfig::default(),
            estimator: Estimator::Kde(KdeConfig::default()),
            max_dims: 4096,
            reduction: ReduceConfig::Kmeans {
                k: 16,
                seed: 0,
                max_iter: 100,
            },
            ablation: AblationSection::default(),
            out: PathBuf::from("run"),
        }
    }
}

impl RunConfig {
    /// Parses a config file; syntax and schema errors carry line and column.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.check_paths()?;
        Ok(cfg)
    }

    fn check_paths(&self) -> Result<()> {
        if let DatasetSource::Dirs { images, masks } = &self.dataset {
            for p in [images, masks] {
                if !p.is_dir() {
                    bail!("dataset directory {} does not exist", p.display());
                }
            }
        }
        Ok(())
    }

    pub fn network_spec(&self) -> NetworkSpec {
        NetworkSpec::new(
            self.network.input_size,
            self.network.levels,
            self.network.base_channels,
            self.seed,
        )
    }

    pub fn ablation_config(&self) -> Result<AblationConfig> {
        Ok(AblationConfig {
            models: self.ablation.models.clone(),
            seeds: self.ablation.seeds.clone(),
            delta: self.ablation.delta,
            model2_slack: self.ablation.model2_slack,
            training: TrainOptions {
                capture_epochs: Vec::new(),
                ..self.training.options()?
            },
        })
    }

    /// Loads or generates the data and returns `(train, validation, probe)`.
    pub fn datasets(&self) -> Result<(Dataset, Dataset, Dataset)> {
        let size = self.network.input_size;
        let all = match &self.dataset {
            DatasetSource::Synthetic { count, seed, generator } => {
                dataset::gen_synthetic_with(*count, size, *seed, generator)?
            }
            DatasetSource::Dirs { images, masks } => dataset::load_pairs(images, masks, size)?,
        };
        let (train, val) = dataset::split(&all, self.split.train, self.split.val, self.split.seed)?;
        let probe = match self.probe_size {
            Some(n) if n > val.len() => bail!("probe_size {n} exceeds the {} validation samples", val.len()),
            Some(n) => val.subset(&(0..n).collect::<Vec<_>>()),
            None => val.clone(),
        };
        Ok((train, val, probe))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        let text = serde_json::to_string_pretty(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c);
        assert_eq!(c.training.options().unwrap().capture_epochs.last(), Some(&300));
    }

    #[test]
    fn parse_errors_report_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, "{\n  \"seed\": 3,\n  \"training\": {\"epochs\": \"ten\"}\n}\n").unwrap();
        let err = format!("{:#}", RunConfig::load(&p).unwrap_err());
        assert!(err.contains("line 3"), "{err}");
        fs::write(&p, "{\n  \"sede\": 3\n}\n").unwrap();
        let err = format!("{:#}", RunConfig::load(&p).unwrap_err());
        assert!(err.contains("line 2") && err.contains("sede"), "{err}");
    }

    #[test]
    fn missing_dirs_rejected_at_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"dataset": {"kind": "dirs", "images": "/nope/a", "masks": "/nope/b"}}"#).unwrap();
        assert!(format!("{:#}", RunConfig::load(&p).unwrap_err()).contains("/nope/a"));
    }

    #[test]
    fn explicit_capture_list() {
        let t = TrainingConfig {
            epochs: 10,
            capture: CaptureSchedule::Epochs(vec![1, 2, 5, 10]),
            ..Default::default()
        };
        assert_eq!(t.options().unwrap().capture_epochs, vec![1, 2, 5, 10]);
        let bad = TrainingConfig {
            capture: CaptureSchedule::Named("linear".into()),
            ..Default::default()
        };
        assert!(bad.options().is_err());
    }
}
