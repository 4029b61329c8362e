//! Host-side samples and their conversion to device batches.

use candle_core::{DType, Device, Tensor};
use csi_inpaint_core::dataset_io::SyncedSample;
use csi_inpaint_core::preprocess::CsiPreprocessor;
use ndarray::{Array2, Array3, Array4, Axis};

use crate::error::{ModelError, Result};
use crate::network::Batch;

/// One training or evaluation window with preprocessed CSI.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// (L_img, H, W, 3)
    pub truth: Array4<f32>,
    /// (L_img, H, W, 3)
    pub defective: Array4<f32>,
    /// (H, W), true = occluded
    pub mask: Array2<bool>,
    /// (n_sensors, L_csi, feature_dim)
    pub csi: Array3<f32>,
}

impl Sample {
    pub fn from_synced(s: &SyncedSample, pre: &CsiPreprocessor) -> Result<Self> {
        Ok(Sample {
            truth: s.gt_window.clone(),
            defective: s.defective_window.clone(),
            mask: s.mask_window.index_axis(Axis(0), 0).to_owned(),
            csi: pre.apply(&s.csi_windows)?,
        })
    }
}

fn stack<D: ndarray::Dimension>(parts: Vec<ndarray::ArrayView<'_, f32, D>>, dtype: DType) -> Result<Tensor> {
    let first = parts.first().ok_or_else(|| ModelError::Shape("empty batch".into()))?;
    let mut dims = vec![parts.len()];
    dims.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(dims.iter().product());
    for p in &parts {
        if p.shape() != first.shape() {
            return Err(ModelError::Shape(format!(
                "samples differ in shape: {:?} vs {:?}",
                p.shape(),
                first.shape()
            )));
        }
        data.extend(p.iter().copied());
    }
    Ok(Tensor::from_vec(data, dims, &Device::Cpu)?.to_dtype(dtype)?)
}

/// Stacks samples into a batch plus the (B, L, H, W, 3) ground truth.
pub fn make_batch(samples: &[&Sample], dtype: DType) -> Result<(Batch, Tensor)> {
    let masks: Vec<Array2<f32>> = samples
        .iter()
        .map(|s| s.mask.mapv(|m| if m { 1.0 } else { 0.0 }))
        .collect();
    let batch = Batch {
        defective: stack(samples.iter().map(|s| s.defective.view()).collect(), dtype)?,
        mask: stack(masks.iter().map(|m| m.view()).collect(), dtype)?,
        csi: stack(samples.iter().map(|s| s.csi.view()).collect(), dtype)?,
    };
    let truth = stack(samples.iter().map(|s| s.truth.view()).collect(), dtype)?;
    Ok((batch, truth))
}

/// Splits a (B, L, H, W, C) tensor into per-sample arrays.
pub fn unstack(t: &Tensor) -> Result<Vec<Array4<f32>>> {
    let (b, l, h, w, c) = t.dims5()?;
    let flat: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
    let all = ndarray::Array5::from_shape_vec((b, l, h, w, c), flat)
        .map_err(|e| ModelError::Shape(e.to_string()))?;
    Ok(all.outer_iter().map(|v| v.to_owned()).collect())
}
