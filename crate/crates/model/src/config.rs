use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

/// Hyper-parameters of the inpainting network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// (height, width) in pixels.
    pub image_size: (usize, usize),
    pub patch_size: usize,
    pub embed_dim: usize,
    pub n_heads: usize,
    /// Windowed-attention blocks; odd-numbered blocks use shifted windows.
    pub n_layers_img: usize,
    pub n_layers_csi: usize,
    /// Attention window side, in patches.
    pub attn_window: usize,
    /// Per-sensor feature width of one CSI frame.
    pub csi_feature_dim: usize,
    pub n_sensors: usize,
    pub l_img: usize,
    pub l_csi: usize,
    /// CSI frames per token.
    pub csi_patch_len: usize,
    /// Output channels of each upsampling stage.
    pub decoder_channels: Vec<usize>,
    pub reduced_img: usize,
    pub reduced_csi: usize,
    pub mlp_ratio: usize,
    /// Fill value of occluded pixels; rf-only mode feeds a frame of it.
    pub fill_value: f32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: (64, 64),
            patch_size: 8,
            embed_dim: 32,
            n_heads: 2,
            n_layers_img: 4,
            n_layers_csi: 2,
            attn_window: 4,
            csi_feature_dim: 10,
            n_sensors: 4,
            l_img: 8,
            l_csi: 20,
            csi_patch_len: 10,
            decoder_channels: vec![32, 24, 16, 8],
            reduced_img: 16,
            reduced_csi: 16,
            mlp_ratio: 2,
            fill_value: 0.0,
        }
    }
}

impl ModelConfig {
    /// The tiny configuration used for finite-difference gradient checks.
    pub fn micro() -> Self {
        ModelConfig {
            image_size: (8, 8),
            patch_size: 4,
            embed_dim: 8,
            n_heads: 2,
            n_layers_img: 1,
            n_layers_csi: 1,
            attn_window: 2,
            csi_feature_dim: 3,
            n_sensors: 2,
            l_img: 1,
            l_csi: 4,
            csi_patch_len: 2,
            decoder_channels: vec![4, 4, 4],
            reduced_img: 3,
            reduced_csi: 2,
            mlp_ratio: 2,
            fill_value: 0.0,
        }
    }

    pub fn patch_grid(&self) -> (usize, usize) {
        (
            self.image_size.0 / self.patch_size,
            self.image_size.1 / self.patch_size,
        )
    }

    /// Grid after the patch-merging stage.
    pub fn merged_grid(&self) -> (usize, usize) {
        let (gh, gw) = self.patch_grid();
        (gh / 2, gw / 2)
    }

    pub fn csi_tokens_per_sensor(&self) -> usize {
        self.l_csi / self.csi_patch_len
    }

    pub fn csi_token_dim(&self) -> usize {
        self.csi_patch_len * self.csi_feature_dim
    }

    /// Channels entering the decoder: reduced image features, reduced CSI
    /// features, the defective RGB frame and its mask.
    pub fn fused_channels(&self) -> usize {
        self.reduced_img + self.reduced_csi + 3 + 1
    }

    /// Weights and biases of the CSI input projection.
    pub fn csi_input_layer_params(&self) -> usize {
        self.csi_token_dim() * self.embed_dim + self.embed_dim
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        let (h, w) = self.image_size;
        let positive = [
            ("image height", h),
            ("image width", w),
            ("patch_size", self.patch_size),
            ("embed_dim", self.embed_dim),
            ("n_heads", self.n_heads),
            ("attn_window", self.attn_window),
            ("csi_feature_dim", self.csi_feature_dim),
            ("n_sensors", self.n_sensors),
            ("l_img", self.l_img),
            ("l_csi", self.l_csi),
            ("csi_patch_len", self.csi_patch_len),
            ("reduced_img", self.reduced_img),
            ("reduced_csi", self.reduced_csi),
            ("mlp_ratio", self.mlp_ratio),
        ];
        for (name, v) in positive {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if h % self.patch_size != 0 || w % self.patch_size != 0 {
            return bad(format!(
                "image size {h}x{w} is not divisible by patch size {}",
                self.patch_size
            ));
        }
        if self.embed_dim % self.n_heads != 0 {
            return bad(format!(
                "embed_dim {} is not divisible by n_heads {}",
                self.embed_dim, self.n_heads
            ));
        }
        let (gh, gw) = self.patch_grid();
        if gh % self.attn_window != 0 || gw % self.attn_window != 0 {
            return bad(format!(
                "attention window {} does not divide the {gh}x{gw} patch grid",
                self.attn_window
            ));
        }
        if gh % 2 != 0 || gw % 2 != 0 {
            return bad(format!("patch grid {gh}x{gw} must be even for patch merging"));
        }
        if self.l_csi % self.csi_patch_len != 0 {
            return bad(format!(
                "L_csi {} is not divisible by csi_patch_len {}",
                self.l_csi, self.csi_patch_len
            ));
        }
        // the decoder doubles resolution once per stage, from the merged grid
        let factor = 2 * self.patch_size;
        if !factor.is_power_of_two() || factor.trailing_zeros() as usize != self.decoder_channels.len() {
            return bad(format!(
                "decoder needs log2(2 * patch_size) = {} stages to restore full resolution, \
                 got {} (patch_size must be a power of two)",
                (factor as f64).log2(),
                self.decoder_channels.len()
            ));
        }
        if self.decoder_channels.contains(&0) {
            return bad("decoder channel counts must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.fill_value) {
            return bad("fill_value must be in [0, 1]".into());
        }
        Ok(())
    }
}

/// Which inputs the network may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Defective frames and CSI.
    Multimodal,
    /// Defective frames only; CSI tokens are replaced by zeros.
    ImageOnly,
    /// CSI only; every pixel is occluded.
    RfOnly,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Multimodal, Mode::ImageOnly, Mode::RfOnly];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Multimodal => "multimodal",
            Mode::ImageOnly => "image-only",
            Mode::RfOnly => "rf-only",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multimodal" => Ok(Mode::Multimodal),
            "image-only" => Ok(Mode::ImageOnly),
            "rf-only" => Ok(Mode::RfOnly),
            other => Err(ModelError::Config(format!(
                "unknown mode {other:?} (expected multimodal, image-only or rf-only)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Floor of the cosine schedule.
    pub min_learning_rate: f64,
    /// Weight λ of the `1 - SSIM` term.
    pub ssim_weight: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 8,
            learning_rate: 1e-3,
            min_learning_rate: 0.0,
            ssim_weight: 0.2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(ModelError::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.min_learning_rate >= 0.0) {
            return Err(ModelError::Config("learning rates must be positive".into()));
        }
        if !(self.ssim_weight >= 0.0) {
            return Err(ModelError::Config("ssim_weight must be non-negative".into()));
        }
        Ok(())
    }
}
