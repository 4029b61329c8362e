//! Implementations checked against independent brute-force oracles.

use csi_inpaint_core::dataset_io::isochronize;
use csi_inpaint_core::metrics::{psnr, ssim, SsimParams};
use csi_inpaint_core::preprocess::{fit_pca, AmplitudeTensor};
use ndarray::{Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn linear_scan(image_ts: &[f64], csi_ts: &[f64]) -> Vec<usize> {
    image_ts
        .iter()
        .map(|&t| {
            let mut best = 0;
            for j in 1..csi_ts.len() {
                if (csi_ts[j] - t).abs() < (csi_ts[best] - t).abs() {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[test]
fn isochronize_matches_scan_at_dataset_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut image: Vec<f64> = (0..300).map(|_| rng.random_range(0.0..30.0)).collect();
    image.sort_by(f64::total_cmp);
    image.dedup();
    let offset: f64 = rng.random_range(0.0..0.002);
    let csi: Vec<f64> = (0..15_000).map(|j| offset + j as f64 / 500.0).collect();
    assert_eq!(isochronize(&image, &csi), linear_scan(&image, &csi));
}

/// Window-by-window SSIM, summing the formula directly.
fn brute_ssim(a: &Array3<f32>, b: &Array3<f32>, win: usize) -> f64 {
    let (h, w, c) = a.dim();
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut per_channel = 0.0;
    for ch in 0..c {
        let mut total = 0.0;
        let mut count = 0;
        for y in 0..=h - win {
            for x in 0..=w - win {
                let mut xs = Vec::new();
                let mut ys = Vec::new();
                for dy in 0..win {
                    for dx in 0..win {
                        xs.push(a[[y + dy, x + dx, ch]] as f64);
                        ys.push(b[[y + dy, x + dx, ch]] as f64);
                    }
                }
                let n = xs.len() as f64;
                let mx = xs.iter().sum::<f64>() / n;
                let my = ys.iter().sum::<f64>() / n;
                let vx = xs.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / n;
                let vy = ys.iter().map(|v| (v - my).powi(2)).sum::<f64>() / n;
                let cov = xs.iter().zip(&ys).map(|(p, q)| (p - mx) * (q - my)).sum::<f64>() / n;
                total += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        per_channel += total / count as f64;
    }
    per_channel / c as f64
}

#[test]
fn ssim_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let a = Array3::from_shape_fn((16, 16, 3), |_| rng.random_range(0.0f32..1.0));
        let b = Array3::from_shape_fn((16, 16, 3), |(y, x, c)| {
            (a[[y, x, c]] * 0.6 + rng.random_range(0.0f32..0.4)).min(1.0)
        });
        let fast = ssim(&a.view(), &b.view(), &SsimParams::default()).unwrap();
        assert!((fast - brute_ssim(&a, &b, 7)).abs() < 1e-6);
        let p = psnr(&a.view(), &b.view()).unwrap();
        let mse = a.iter().zip(b.iter()).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>() / 768.0;
        assert!((p - 10.0 * (1.0 / mse).log10()).abs() < 1e-9);
    }
}

/// Dominant eigenpairs by power iteration with deflation.
fn power_eigen(cov: &[Vec<f64>], k: usize) -> Vec<f64> {
    let n = cov.len();
    let mut m = cov.to_vec();
    let mut values = Vec::new();
    for _ in 0..k {
        let mut v = vec![1.0 / (n as f64).sqrt(); n];
        let mut lambda = 0.0;
        for _ in 0..5000 {
            let mut next = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    next[i] += m[i][j] * v[j];
                }
            }
            let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
            lambda = norm;
            v = next.iter().map(|x| x / norm).collect();
        }
        values.push(lambda);
        for i in 0..n {
            for j in 0..n {
                m[i][j] -= lambda * v[i] * v[j];
            }
        }
    }
    values
}

#[test]
fn rank_three_data_is_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let f = 16;
    let basis: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..f).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let noise = Normal::new(0.0, 1e-3).unwrap();
    let t = 400;
    let data = Array4::from_shape_fn((t, 1, 1, f), |_| 0.0f32);
    let mut data = data;
    for i in 0..t {
        let coef: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        for k in 0..f {
            let v: f64 = 5.0 + (0..3).map(|r| coef[r] * basis[r][k]).sum::<f64>() + noise.sample(&mut rng);
            data[[i, 0, 0, k]] = v as f32;
        }
    }
    let amp = AmplitudeTensor::new(data.clone()).unwrap();
    let model = fit_pca(std::slice::from_ref(&amp), 3).unwrap();
    let captured: f64 = model.explained_variance_ratio.iter().sum();
    assert!(captured >= 0.99, "{captured}");

    // eigenvalues of the sample covariance via power iteration
    let rows: Vec<Vec<f64>> = (0..t).map(|i| (0..f).map(|k| data[[i, 0, 0, k]] as f64).collect()).collect();
    let mean: Vec<f64> = (0..f).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / t as f64).collect();
    let mut cov = vec![vec![0.0; f]; f];
    for r in &rows {
        for i in 0..f {
            for j in 0..f {
                cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]) / (t as f64 - 1.0);
            }
        }
    }
    let trace: f64 = (0..f).map(|i| cov[i][i]).sum();
    let oracle = power_eigen(&cov, 3);
    for (r, lambda) in model.explained_variance_ratio.iter().zip(oracle) {
        assert!((r - lambda / trace).abs() < 1e-6, "{r} vs {}", lambda / trace);
    }
}
