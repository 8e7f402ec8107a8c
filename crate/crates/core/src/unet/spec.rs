use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{Error, Result};

/// A skip connection, identified by the encoder level it leaves from
/// (0 = the shallowest, "top").
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SkipId(pub usize);

impl SkipId {
    pub const TOP: SkipId = SkipId(0);
    pub const SECOND: SkipId = SkipId(1);
    pub const THIRD: SkipId = SkipId(2);
    pub const BOTTOM: SkipId = SkipId(3);

    pub fn level(self) -> usize {
        self.0
    }
}

impl fmt::Display for SkipId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            0 => f.write_str("top"),
            1 => f.write_str("second"),
            2 => f.write_str("third"),
            3 => f.write_str("bottom"),
            n => write!(f, "level{n}"),
        }
    }
}

impl FromStr for SkipId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "top" => Ok(SkipId(0)),
            "second" => Ok(SkipId(1)),
            "third" => Ok(SkipId(2)),
            "bottom" => Ok(SkipId(3)),
            other => other
                .strip_prefix("level")
                .unwrap_or(other)
                .parse()
                .map(SkipId)
                .map_err(|_| Error::invalid(format!("unknown skip identifier {other:?}"))),
        }
    }
}

impl Serialize for SkipId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SkipId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Declarative description of a U-Net.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Pixels per side of the (square, single-channel) input.
    pub input_size: usize,
    /// Encoder depth; 4 gives the 23-layer indexing.
    pub levels: usize,
    pub base_channels: usize,
    pub skips_enabled: BTreeSet<SkipId>,
    pub seed: u64,
}

impl NetworkSpec {
    /// All skips enabled.
    pub fn new(input_size: usize, levels: usize, base_channels: usize, seed: u64) -> Self {
        NetworkSpec {
            input_size,
            levels,
            base_channels,
            skips_enabled: (0..levels).map(SkipId).collect(),
            seed,
        }
    }

    /// The desk-scale default: 32x32 input, 4 levels, 8 base channels.
    pub fn desk(seed: u64) -> Self {
        Self::new(32, 4, 8, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::invalid("levels must be at least 1"));
        }
        if self.base_channels == 0 {
            return Err(Error::invalid("base_channels must be positive"));
        }
        let factor = 1usize
            .checked_shl(self.levels as u32)
            .ok_or_else(|| Error::invalid("levels too large"))?;
        if self.input_size == 0 || self.input_size % factor != 0 {
            return Err(Error::invalid(format!(
                "input_size {} must be a positive multiple of 2^levels = {factor}",
                self.input_size
            )));
        }
        if let Some(bad) = self.skips_enabled.iter().find(|s| s.level() >= self.levels) {
            return Err(Error::invalid(format!(
                "skip {bad} does not exist in a {}-level network",
                self.levels
            )));
        }
        Ok(())
    }

    pub fn layout(&self) -> LayerLayout {
        LayerLayout {
            levels: self.levels,
        }
    }

    /// Skip edges `(source, merge)` that are enabled, ordered top first.
    pub fn skip_edges(&self) -> Vec<(SkipId, usize, usize)> {
        let layout = self.layout();
        self.skips_enabled
            .iter()
            .map(|&s| (s, layout.skip_source(s), layout.skip_merge(s)))
            .collect()
    }

    /// Skips that the network has room for but that are disabled.
    pub fn removed_skips(&self) -> Vec<SkipId> {
        (0..self.levels)
            .map(SkipId)
            .filter(|s| !self.skips_enabled.contains(s))
            .collect()
    }
}

/// Index arithmetic for the layer numbering.
///
/// Per encoder level: conv block then pool. The bottleneck block follows.
/// Per decoder level: up-convolution, merge (channel concatenation with the
/// skip stream) and conv block. Then a 1x1 convolution and the sigmoid
/// output. With 4 levels this yields layers 1..=23, skip sources 1, 3, 5, 7
/// and merges 11, 14, 17, 20.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    pub levels: usize,
}

impl LayerLayout {
    pub fn layer_count(&self) -> usize {
        5 * self.levels + 3
    }

    pub fn encoder_block(&self, level: usize) -> usize {
        2 * level + 1
    }

    pub fn pool(&self, level: usize) -> usize {
        2 * level + 2
    }

    pub fn bottleneck(&self) -> usize {
        2 * self.levels + 1
    }

    /// Decoder stage `j` counts from the deepest (0) to the shallowest.
    pub fn upconv(&self, stage: usize) -> usize {
        2 * self.levels + 2 + 3 * stage
    }

    pub fn merge(&self, stage: usize) -> usize {
        self.upconv(stage) + 1
    }

    pub fn decoder_block(&self, stage: usize) -> usize {
        self.upconv(stage) + 2
    }

    pub fn conv1x1(&self) -> usize {
        5 * self.levels + 2
    }

    pub fn output(&self) -> usize {
        5 * self.levels + 3
    }

    /// Decoder stage that consumes encoder level `level`'s skip.
    pub fn stage_for_level(&self, level: usize) -> usize {
        self.levels - 1 - level
    }

    pub fn skip_source(&self, skip: SkipId) -> usize {
        self.encoder_block(skip.level())
    }

    pub fn skip_merge(&self, skip: SkipId) -> usize {
        self.merge(self.stage_for_level(skip.level()))
    }

    /// Every merge position, whether or not its skip is enabled.
    pub fn merge_layers(&self) -> Vec<usize> {
        (0..self.levels).map(|s| self.merge(s)).collect()
    }
}

/// Which skips survive in ablation model `model_id` (1..=4).
///
/// Model 1 keeps every skip; model `m` drops the `m - 1` shallowest ones.
/// The deepest skip is always retained.
pub fn remove_skips(spec: &NetworkSpec, model_id: u8) -> Result<NetworkSpec> {
    if !(1..=4).contains(&model_id) {
        return Err(Error::invalid(format!("model id {model_id} not in 1..=4")));
    }
    let dropped = (model_id as usize - 1).min(spec.levels.saturating_sub(1));
    let mut out = spec.clone();
    out.skips_enabled = (dropped..spec.levels).map(SkipId).collect();
    Ok(out)
}
