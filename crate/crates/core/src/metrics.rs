//! PSNR and SSIM for images in [0, 1], plus per-run aggregation.
//!
//! SSIM uses a uniform square window over every fully-contained position
//! (no padding), population (1/N) moments, and is averaged per channel then
//! across channels. Window statistics come from summed-area tables.

use ndarray::{Array2, ArrayView3, ArrayView4, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PSNR_CAP_DB: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 7,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * 1.0).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * 1.0).powi(2)
    }
}

/// `10 log10(1 / MSE)` with data range 1; identical inputs give
/// [`PSNR_CAP_DB`].
pub fn psnr(a: &ArrayView3<f32>, b: &ArrayView3<f32>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "PSNR inputs differ in shape: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    if a.is_empty() {
        return Err(Error::Empty("PSNR input"));
    }
    let mse = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Inclusive-prefix summed-area table with a zero border row and column.
fn integral(img: &Array2<f64>) -> Array2<f64> {
    let (h, w) = img.dim();
    let mut s = Array2::<f64>::zeros((h + 1, w + 1));
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += img[[y, x]];
            s[[y + 1, x + 1]] = s[[y, x + 1]] + row;
        }
    }
    s
}

fn box_sum(s: &Array2<f64>, y: usize, x: usize, n: usize) -> f64 {
    s[[y + n, x + n]] - s[[y, x + n]] - s[[y + n, x]] + s[[y, x]]
}

fn ssim_channel(a: &Array2<f64>, b: &Array2<f64>, p: &SsimParams) -> f64 {
    let (h, w) = a.dim();
    let n = p.window;
    let sa = integral(a);
    let sb = integral(b);
    let saa = integral(&(a * a));
    let sbb = integral(&(b * b));
    let sab = integral(&(a * b));
    let count = (n * n) as f64;
    let (c1, c2) = (p.c1(), p.c2());
    let mut total = 0.0;
    let mut windows = 0usize;
    for y in 0..=h - n {
        for x in 0..=w - n {
            let mu_a = box_sum(&sa, y, x, n) / count;
            let mu_b = box_sum(&sb, y, x, n) / count;
            let var_a = box_sum(&saa, y, x, n) / count - mu_a * mu_a;
            let var_b = box_sum(&sbb, y, x, n) / count - mu_b * mu_b;
            let cov = box_sum(&sab, y, x, n) / count - mu_a * mu_b;
            total += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            windows += 1;
        }
    }
    total / windows as f64
}

/// Mean SSIM of two (H, W, C) images.
pub fn ssim(a: &ArrayView3<f32>, b: &ArrayView3<f32>, params: &SsimParams) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "SSIM inputs differ in shape: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let (h, w, c) = a.dim();
    if params.window == 0 || h < params.window || w < params.window {
        return Err(Error::Shape(format!(
            "image {h}x{w} is smaller than the {}x{} SSIM window",
            params.window, params.window
        )));
    }
    if c == 0 {
        return Err(Error::Empty("SSIM input channels"));
    }
    let mut acc = 0.0;
    for ch in 0..c {
        let pa = a.index_axis(Axis(2), ch).mapv(|v| v as f64);
        let pb = b.index_axis(Axis(2), ch).mapv(|v| v as f64);
        acc += ssim_channel(&pa, &pb, params);
    }
    Ok(acc / c as f64)
}

/// PSNR and SSIM of one sample, averaged over the frames of a
/// (L, H, W, C) window.
pub fn window_metrics(
    restored: &ArrayView4<f32>,
    truth: &ArrayView4<f32>,
    params: &SsimParams,
) -> Result<SampleMetrics> {
    if restored.dim() != truth.dim() {
        return Err(Error::Shape(format!(
            "window shapes differ: {:?} vs {:?}",
            restored.dim(),
            truth.dim()
        )));
    }
    let l = restored.len_of(Axis(0));
    if l == 0 {
        return Err(Error::Empty("window frames"));
    }
    let mut p = 0.0;
    let mut s = 0.0;
    for (r, t) in restored.outer_iter().zip(truth.outer_iter()) {
        p += psnr(&r, &t)?;
        s += ssim(&r, &t, params)?;
    }
    Ok(SampleMetrics {
        psnr: p / l as f64,
        ssim: s / l as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub mode: String,
    pub config: serde_json::Value,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub per_sample_psnr: Vec<f64>,
    pub per_sample_ssim: Vec<f64>,
    pub psnr_cap_db: f64,
    pub ssim_params: SsimParams,
}

/// Arithmetic means over `samples`; capped PSNR values count as
/// [`PSNR_CAP_DB`].
pub fn aggregate(
    run_id: impl Into<String>,
    mode: impl Into<String>,
    config: serde_json::Value,
    samples: &[SampleMetrics],
    ssim_params: SsimParams,
) -> Result<MetricsRecord> {
    if samples.is_empty() {
        return Err(Error::Empty("per-sample metrics"));
    }
    let n = samples.len() as f64;
    let per_sample_psnr: Vec<f64> = samples.iter().map(|s| s.psnr).collect();
    let per_sample_ssim: Vec<f64> = samples.iter().map(|s| s.ssim).collect();
    Ok(MetricsRecord {
        run_id: run_id.into(),
        mode: mode.into(),
        config,
        mean_psnr: per_sample_psnr.iter().sum::<f64>() / n,
        mean_ssim: per_sample_ssim.iter().sum::<f64>() / n,
        per_sample_psnr,
        per_sample_ssim,
        psnr_cap_db: PSNR_CAP_DB,
        ssim_params,
    })
}
