//! Single-file checkpoints: safetensors with little-endian f32 weights and
//! Adam moments, plus one JSON metadata entry holding everything else.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use csi_inpaint_core::preprocess::CsiPreprocessor;
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;
use serde::{Deserialize, Serialize};

use crate::config::{Mode, ModelConfig, TrainConfig};
use crate::error::{ModelError, Result};
use crate::network::InpaintNet;
use crate::train::{AdamState, Trainer};

pub const CHECKPOINT_VERSION: u32 = 1;
const META_KEY: &str = "checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub mode: Mode,
    pub init_seed: u64,
    pub step: u64,
    pub loss_curve: Vec<f64>,
    pub preprocessor: Option<CsiPreprocessor>,
    /// Caller-defined context such as the dataset path and window settings.
    #[serde(default)]
    pub context: serde_json::Value,
}

#[derive(Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub trainer: Trainer,
}

fn f32_bytes(t: &Tensor) -> Result<Vec<u8>> {
    let values: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
    Ok(values.iter().flat_map(|v| v.to_le_bytes()).collect())
}

fn ckpt_err(path: &Path, reason: impl Into<String>) -> ModelError {
    ModelError::Checkpoint {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

pub fn save(
    path: &Path,
    trainer: &Trainer,
    init_seed: u64,
    preprocessor: Option<&CsiPreprocessor>,
    context: serde_json::Value,
) -> Result<()> {
    let net = trainer.net();
    let meta = CheckpointMeta {
        format_version: CHECKPOINT_VERSION,
        model: net.config().clone(),
        train: trainer.config().clone(),
        mode: trainer.mode(),
        init_seed,
        step: trainer.step(),
        loss_curve: trainer.loss_curve().to_vec(),
        preprocessor: preprocessor.cloned(),
        context,
    };
    let mut owned: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
    let adam = trainer.adam();
    for (i, (name, var)) in net.params().entries().iter().enumerate() {
        let shape = var.dims().to_vec();
        owned.push((format!("param.{name}"), shape.clone(), f32_bytes(var.as_tensor())?));
        owned.push((format!("adam_m.{name}"), shape.clone(), f32_bytes(&adam.m[i])?));
        owned.push((format!("adam_v.{name}"), shape, f32_bytes(&adam.v[i])?));
    }
    let views = owned
        .iter()
        .map(|(n, s, b)| {
            TensorView::new(Dtype::F32, s.clone(), b)
                .map(|v| (n.clone(), v))
                .map_err(|e| ckpt_err(path, e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    // a single metadata key keeps the header byte-stable
    let info: HashMap<String, String> = [(
        META_KEY.to_string(),
        serde_json::to_string(&meta).expect("metadata serializes"),
    )]
    .into();
    let bytes = safetensors::serialize(views, Some(info)).map_err(|e| ckpt_err(path, e.to_string()))?;
    std::fs::write(path, bytes).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn load_tensor(st: &SafeTensors, path: &Path, name: &str, shape: &[usize]) -> Result<Tensor> {
    let view = st
        .tensor(name)
        .map_err(|_| ModelError::CheckpointMismatch(format!("{}: missing tensor {name}", path.display())))?;
    if view.dtype() != Dtype::F32 || view.shape() != shape {
        return Err(ModelError::CheckpointMismatch(format!(
            "{}: tensor {name} is {:?}{:?}, model expects F32{shape:?}",
            path.display(),
            view.dtype(),
            view.shape()
        )));
    }
    let values: Vec<f32> = view
        .data()
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Tensor::from_vec(values, shape, &Device::Cpu)?)
}

pub fn read_meta(path: &Path) -> Result<CheckpointMeta> {
    let bytes = std::fs::read(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    meta_from_bytes(path, &bytes)
}

fn meta_from_bytes(path: &Path, bytes: &[u8]) -> Result<CheckpointMeta> {
    let (_, header) = SafeTensors::read_metadata(bytes).map_err(|e| ckpt_err(path, e.to_string()))?;
    let text = header
        .metadata()
        .as_ref()
        .and_then(|m| m.get(META_KEY))
        .ok_or_else(|| ckpt_err(path, "no checkpoint metadata"))?;
    let meta: CheckpointMeta =
        serde_json::from_str(text).map_err(|e| ckpt_err(path, format!("invalid metadata: {e}")))?;
    if meta.format_version != CHECKPOINT_VERSION {
        return Err(ModelError::CheckpointMismatch(format!(
            "{}: checkpoint format {} is not supported (expected {CHECKPOINT_VERSION})",
            path.display(),
            meta.format_version
        )));
    }
    Ok(meta)
}

/// Rebuilds the network, optimizer state and loss curve.
pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let meta = meta_from_bytes(path, &bytes)?;
    let st = SafeTensors::deserialize(&bytes).map_err(|e| ckpt_err(path, e.to_string()))?;
    let net = InpaintNet::new(meta.model.clone(), DType::F32, meta.init_seed)?;
    let mut adam = AdamState::zeros(net.params().entries())?;
    let expected = 3 * net.params().entries().len();
    if st.len() != expected {
        return Err(ModelError::CheckpointMismatch(format!(
            "{}: {} tensors stored, model has {expected}",
            path.display(),
            st.len()
        )));
    }
    for (i, (name, var)) in net.params().entries().iter().enumerate() {
        let shape = var.dims().to_vec();
        var.set(&load_tensor(&st, path, &format!("param.{name}"), &shape)?)?;
        adam.m[i] = load_tensor(&st, path, &format!("adam_m.{name}"), &shape)?;
        adam.v[i] = load_tensor(&st, path, &format!("adam_v.{name}"), &shape)?;
    }
    let trainer = Trainer::resume(net, meta.mode, meta.train.clone(), adam, meta.step, meta.loss_curve.clone())?;
    Ok(Checkpoint { meta, trainer })
}
