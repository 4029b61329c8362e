//! Reconstruction loss: mean absolute error plus a weighted `1 - SSIM`.

use candle_core::Tensor;
use csi_inpaint_core::metrics::SsimParams;

use crate::error::{ModelError, Result};
use crate::kernels::BoxSum;

fn box_mean(x: &Tensor, n: usize) -> Result<Tensor> {
    Ok((x.contiguous()?.apply_op1(BoxSum { n })? / (n * n) as f64)?)
}

/// Mean SSIM over all frames of (N, H, W, C) tensors, with the same window,
/// constants and moment conventions as `csi_inpaint_core::metrics::ssim`.
pub fn ssim(a: &Tensor, b: &Tensor, params: &SsimParams) -> Result<Tensor> {
    let (_, h, w, _) = a.dims4()?;
    let n = params.window;
    if a.dims() != b.dims() || n == 0 || h < n || w < n {
        return Err(ModelError::Shape(format!(
            "SSIM inputs {:?} and {:?} with window {n}",
            a.dims(),
            b.dims()
        )));
    }
    let (c1, c2) = (params.c1(), params.c2());
    let mu_a = box_mean(a, n)?;
    let mu_b = box_mean(b, n)?;
    let mu_aa = mu_a.sqr()?;
    let mu_bb = mu_b.sqr()?;
    let mu_ab = (&mu_a * &mu_b)?;
    let var_a = (box_mean(&a.sqr()?, n)? - &mu_aa)?;
    let var_b = (box_mean(&b.sqr()?, n)? - &mu_bb)?;
    let cov = (box_mean(&(a * b)?, n)? - &mu_ab)?;
    let num = ((mu_ab.affine(2.0, c1))? * cov.affine(2.0, c2)?)?;
    let den = (((mu_aa + mu_bb)? + c1)? * ((var_a + var_b)? + c2)?)?;
    Ok((num / den)?.mean_all()?)
}

/// `MAE + weight * (1 - SSIM)` over (N, H, W, C) tensors; returns a scalar.
pub fn reconstruction_loss(pred: &Tensor, target: &Tensor, ssim_weight: f64, params: &SsimParams) -> Result<Tensor> {
    let mae = (pred - target)?.abs()?.mean_all()?;
    if ssim_weight == 0.0 {
        return Ok(mae);
    }
    let s = ssim(pred, target, params)?;
    Ok((mae + s.affine(-ssim_weight, ssim_weight)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};
    use csi_inpaint_core::metrics;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn image(seed: u64) -> Array3<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((16, 12, 3), |_| rng.random::<f32>())
    }

    fn tensor(a: &Array3<f32>) -> Tensor {
        let (h, w, c) = a.dim();
        Tensor::from_iter(a.iter().map(|v| *v as f64), &Device::Cpu)
            .unwrap()
            .reshape((1, h, w, c))
            .unwrap()
    }

    #[test]
    fn matches_metric_implementation() {
        let p = SsimParams::default();
        for seed in 0..5 {
            let a = image(seed);
            let mut b = image(seed + 100);
            b.zip_mut_with(&a, |x, y| *x = 0.7 * *y + 0.3 * *x);
            let want = metrics::ssim(&a.view(), &b.view(), &p).unwrap();
            let got: f64 = ssim(&tensor(&a), &tensor(&b), &p).unwrap().to_scalar().unwrap();
            assert!((want - got).abs() < 1e-9, "{want} vs {got}");
        }
    }

    #[test]
    fn zero_weight_is_pure_mae() {
        let a = tensor(&image(1)).to_dtype(DType::F32).unwrap();
        let b = tensor(&image(2)).to_dtype(DType::F32).unwrap();
        let l: f32 = reconstruction_loss(&a, &b, 0.0, &SsimParams::default()).unwrap().to_scalar().unwrap();
        let mae: f32 = (&a - &b).unwrap().abs().unwrap().mean_all().unwrap().to_scalar().unwrap();
        assert_eq!(l, mae);
    }

    #[test]
    fn identical_inputs_have_zero_loss() {
        let a = tensor(&image(4));
        let l: f64 = reconstruction_loss(&a, &a, 0.2, &SsimParams::default()).unwrap().to_scalar().unwrap();
        assert!(l.abs() < 1e-12);
    }
}
