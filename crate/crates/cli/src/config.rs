//! JSON configuration files for every command.

use std::path::{Path, PathBuf};

use csi_inpaint_core::dataset_io::WindowConfig;
use csi_inpaint_core::masking::MaskSpec;
use csi_inpaint_core::preprocess::DEFAULT_VARIANCE_FLOOR;
use csi_inpaint_core::scene_sim::{ChannelParams, PedestrianTrajectory, RenderStyle, RoomConfig};
use csi_inpaint_model::{Mode, ModelConfig, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub room: RoomConfig,
    pub scenarios: Vec<PedestrianTrajectory>,
    #[serde(default)]
    pub channel: ChannelParams,
    #[serde(default)]
    pub render: RenderStyle,
    /// Seconds of simulated time.
    pub duration: f64,
}

/// How windows are cut from a dataset and split for training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default)]
    pub camera_id: u32,
    /// Sensors to use, in this order; all sensors when absent.
    #[serde(default)]
    pub sensor_ids: Option<Vec<u32>>,
    pub window: WindowConfig,
    pub mask: MaskSpec,
    /// PCA components per antenna pair; no PCA when absent.
    #[serde(default)]
    pub pca_components: Option<usize>,
    #[serde(default = "default_floor")]
    pub variance_floor: f64,
    /// Trailing fraction of windows (in time order) held out for testing.
    /// Zero evaluates on the training windows.
    #[serde(default)]
    pub test_fraction: f64,
}

fn default_floor() -> f64 {
    DEFAULT_VARIANCE_FLOOR
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        self.mask.validate()?;
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(CliError::config(format!(
                "data.test_fraction must be in [0, 1), got {}",
                self.test_fraction
            )));
        }
        if self.pca_components == Some(0) {
            return Err(CliError::config("data.pca_components must be positive"));
        }
        if let Some(ids) = &self.sensor_ids {
            if ids.is_empty() {
                return Err(CliError::config("data.sensor_ids must not be empty"));
            }
        }
        Ok(())
    }
}

/// Configuration of `train` and `eval`. Model fields that follow from the
/// data (image size, sensor count, window lengths, CSI feature width) are
/// overwritten when the data is prepared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
}

fn default_mode() -> Mode {
    Mode::Multimodal
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        check_schema(self.schema_version)?;
        self.data.validate()?;
        self.train.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    ModeComparison,
    WindowSweep,
    PcaAblation,
    SensorStudy,
}

/// A PCA setting in a sweep: a component count or `"none"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PcaChoice {
    Components(usize),
    None(NoPca),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoPca {
    None,
}

impl PcaChoice {
    pub fn components(&self) -> Option<usize> {
        match self {
            PcaChoice::Components(k) => Some(*k),
            PcaChoice::None(_) => None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            PcaChoice::Components(k) => k.to_string(),
            PcaChoice::None(_) => "none".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub name: String,
    pub kind: ExperimentKind,
    pub dataset: PathBuf,
    /// Where results.csv, per-run JSON and plots go.
    pub output: PathBuf,
    /// Base run settings each sweep point modifies.
    pub base: RunConfig,
    #[serde(default)]
    pub modes: Vec<Mode>,
    #[serde(default)]
    pub l_csi: Vec<usize>,
    #[serde(default)]
    pub pca_k: Vec<PcaChoice>,
    #[serde(default)]
    pub sensor_subsets: Vec<Vec<u32>>,
    /// Pedestrian whose footprint error the sensor study reports.
    #[serde(default)]
    pub focus_pedestrian: Option<u32>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        check_schema(self.schema_version)?;
        self.base.validate()?;
        let empty = match self.kind {
            ExperimentKind::ModeComparison => self.modes.is_empty(),
            ExperimentKind::WindowSweep => self.l_csi.is_empty(),
            ExperimentKind::PcaAblation => self.pca_k.is_empty(),
            ExperimentKind::SensorStudy => self.sensor_subsets.is_empty() || self.sensor_subsets.iter().any(|s| s.is_empty()),
        };
        if empty {
            let field = match self.kind {
                ExperimentKind::ModeComparison => "modes",
                ExperimentKind::WindowSweep => "l_csi",
                ExperimentKind::PcaAblation => "pca_k",
                ExperimentKind::SensorStudy => "sensor_subsets",
            };
            return Err(CliError::config(format!("{field} must be a non-empty list for this experiment")));
        }
        Ok(())
    }
}

fn check_schema(v: u32) -> Result<()> {
    if v != SCHEMA_VERSION {
        return Err(CliError::config(format!(
            "schema_version {v} is not supported (expected {SCHEMA_VERSION})"
        )));
    }
    Ok(())
}

/// Reads a JSON config; parse errors name the field and position.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

/// SHA-256 of the canonical (key-sorted, compact) JSON form.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let canonical = serde_json::to_value(value).expect("config serializes");
    let text = serde_json::to_string(&canonical).expect("value serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}
