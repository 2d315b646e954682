//! Continual learning for hybrid CTC/transducer sequence models.
//!
//! The crate bundles a small differentiable hybrid model, exact CTC and
//! transducer losses, the EWC/MAS/LwF regularizers, a synthetic multi-task
//! data generator, greedy decoders and the WER/AvgWER/BWT metrics.

pub mod checkpoint;
pub mod decoding;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod num;
pub mod strategies;
pub mod synth;

pub use error::{Error, Result};
pub use model::{HybridModel, ModelConfig, BLANK_ID};
