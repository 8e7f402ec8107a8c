//! The 23-layer-indexed U-Net: construction, training, ablation variants,
//! activation capture and Dice scoring.

mod dice;
mod graph;
mod spec;
mod trace;
mod train;

pub use dice::{binarize, check_binary, dice};
pub use graph::{build, BatchResult, Conv, ForwardOutput, Layer, LayerGraph, LayerKind, ParamGrads};
pub use spec::{remove_skips, LayerLayout, NetworkSpec, SkipId};
pub use trace::{ActivationTrace, CaptureEntry, LayerInfo, Manifest, MANIFEST, PROBE_FILE};
pub use train::{evaluate, exponential_schedule, train, EpochMetrics, Evaluation, TrainOptions};
