//! Building blocks for CSI-guided visual occlusion removal.
//!
//! The crate covers everything that happens before and after the neural
//! network: synthetic scene and channel simulation, the on-disk dataset
//! layout, timestamp alignment of camera and CSI streams, CSI amplitude
//! preprocessing (subcarrier cleaning, PCA, normalization), occlusion masks,
//! and the PSNR/SSIM evaluation metrics.

pub mod dataset_io;
pub mod error;
pub mod masking;
pub mod metrics;
pub mod preprocess;
pub mod scene_sim;
pub mod seed;

pub use error::{Error, Result};
