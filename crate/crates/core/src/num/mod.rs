//! Numeric substrate: tensors, parameter stores, log-space reductions, Adam,
//! finite-difference checking and seeded RNG streams.

mod adam;
mod gradcheck;
mod logspace;
mod params;
mod rng;
mod tensor;

pub use adam::{adam_step, AdamState, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPS};
pub use gradcheck::{finite_diff_gradient, max_relative_error, GradDiscrepancy};
pub use logspace::{is_log_zero, log_add, log_softmax, log_softmax_backward, log_sum_exp, LOG_ZERO};
pub use params::ModelParams;
pub use rng::SeedStreams;
pub use tensor::Tensor;
