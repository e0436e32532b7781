//! Intake gesture detection from skeleton keypoint sequences with a dilated
//! spatial-temporal graph convolutional network followed by a BiLSTM.

pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod numeric;
pub mod par;
pub mod pipeline;
pub mod run;
pub mod synth;

pub use error::{Error, Result};
