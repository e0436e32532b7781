//! Tensor kernels with hand-derived gradients.

pub mod activation;
pub mod adam;
pub mod batchnorm;
pub mod conv;
pub mod dense;
pub(crate) mod gemm;
pub mod gradcheck;
pub mod lstm;
pub mod loss;
pub mod rng;
pub mod tensor;

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamSettings, Param};
pub use rng::RngStream;
pub use tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}
