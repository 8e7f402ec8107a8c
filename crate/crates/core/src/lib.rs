//! Desk-scale U-Net information-flow toolkit.
//!
//! The crate trains a small U-Net with the 23-layer indexing of the classic
//! 4-level architecture, captures every layer's activations on a probe set at
//! scheduled epochs, estimates I(X;M) and I(Y;M) per layer, and turns the
//! trajectories into information planes, U-Plots, data-processing-inequality
//! reports and skip-connection removal predictions.
//!
//! Module map:
//!
//! | module | contents |
//! |--------|----------|
//! | [`tensorcore`] | dense f32 tensors and the conv / pool / upsample kernels |
//! | [`unet`] | network description, forward/backward, training, Dice, traces |
//! | [`dataset`] | synthetic blob generator, PGM loader, splitting |
//! | [`reduce`] | spatial coarsening and K-means label reduction for masks |
//! | [`miest`] | discrete, histogram and Gaussian-KDE entropy / MI estimators |
//! | [`analysis`] | info planes, U-Plots, DPI checks, saturation, ablation |
//! | [`ufat`] | the UFAT binary tensor container |

pub mod analysis;
pub mod dataset;
mod error;
pub mod miest;
pub mod reduce;
pub mod tensorcore;
pub mod ufat;
pub mod unet;

pub use error::{Error, Result};
pub use tensorcore::Tensor;
