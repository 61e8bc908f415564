//! Restricted Boltzmann machines whose hidden units take `s + 1` evenly
//! spaced values in `[-1, +1]` (or the whole interval, `s = inf`).
//!
//! The crate covers exact small-scale inference, blocked Gibbs sampling,
//! contrastive-divergence training with Adam/AdaMax, the two-visible toy
//! model, a discriminative classifier built on the same hidden units, and the
//! experiment runners behind the `mvrbm` command-line tool.

pub mod data_io;
pub mod drbm;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod params;
pub mod plot;
pub mod rbm;
pub mod sampler;
pub mod special;
pub mod toy;
pub mod trainer;

pub use error::{Error, Result};
pub use params::ParamBlocks;
pub use rbm::{RbmGradient, RbmParams, SpinDataset};
pub use sampler::RngStream;
pub use special::HiddenLevels;
