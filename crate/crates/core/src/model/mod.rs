//! The dilated ST-GCN-BiLSTM sequence labeler.

pub mod block;
pub mod config;
pub mod network;
pub mod params;

pub use config::{BlockConfig, ModelConfig, TcnMode};
pub use network::{
    compute_loss, model_forward, predict_frames, train_step, Batch, LossOutput, LossRecord,
};
pub use params::{init_params, ModelParams};
