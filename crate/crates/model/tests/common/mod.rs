#![allow(dead_code)]

use candle_core::{DType, Device, Tensor};
use csi_inpaint_model::{Batch, ModelConfig, Sample};
use ndarray::{Array2, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(shape: &[usize], seed: u64, scale: f64, dtype: DType) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * scale).collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap().to_dtype(dtype).unwrap()
}

pub fn random_sample(cfg: &ModelConfig, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = cfg.image_size;
    let truth = Array4::from_shape_fn((cfg.l_img, h, w, 3), |_| rng.random::<f32>());
    let mask = Array2::from_shape_fn((h, w), |(y, x)| y >= h / 4 && x >= w / 4);
    let mut defective = truth.clone();
    for ((_, y, x, _), v) in defective.indexed_iter_mut() {
        if mask[[y, x]] {
            *v = cfg.fill_value;
        }
    }
    let csi = Array3::from_shape_fn((cfg.n_sensors, cfg.l_csi, cfg.csi_feature_dim), |_| {
        rng.random::<f32>() * 2.0 - 1.0
    });
    Sample { truth, defective, mask, csi }
}

pub fn batch_of(cfg: &ModelConfig, seeds: &[u64], dtype: DType) -> (Batch, Tensor) {
    let samples: Vec<Sample> = seeds.iter().map(|s| random_sample(cfg, *s)).collect();
    let refs: Vec<&Sample> = samples.iter().collect();
    csi_inpaint_model::data::make_batch(&refs, dtype).unwrap()
}

pub fn values(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1().unwrap()
}
