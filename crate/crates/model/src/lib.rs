//! Windowed-attention encoder/decoder that restores occluded video windows
//! from the defective frames and synchronized WiFi CSI.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod kernels;
pub mod layers;
pub mod loss;
pub mod network;
pub mod params;
pub mod train;

pub use config::{Mode, ModelConfig, TrainConfig};
pub use error::{ModelError, Result};
pub use network::{Batch, InpaintNet};
pub use data::Sample;
pub use train::Trainer;
