//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines always reach the output.
//! Pass a criterion number (or several) to run a subset.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use candle_core::{DType, Tensor};
use csi_inpaint::config::{ExperimentConfig, ExperimentKind, RunConfig, SimulateConfig};
use csi_inpaint::experiments::{self, RESULTS_FILE};
use csi_inpaint::{defaults, pipeline, results};
use csi_inpaint_core::dataset_io::{isochronize, WindowConfig};
use csi_inpaint_core::masking::MaskSpec;
use csi_inpaint_core::metrics::{self, SsimParams};
use csi_inpaint_core::preprocess::{fit_pca, pca_inverse, pca_transform, AmplitudeTensor};
use csi_inpaint_core::scene_sim::{self, PedestrianTrajectory, Point, RenderStyle};
use csi_inpaint_model::data::make_batch;
use csi_inpaint_model::train::batch_loss;
use csi_inpaint_model::{InpaintNet, Mode, ModelConfig, Sample, Trainer};
use ndarray::{Array2, Array3, Array4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// tolerances and budgets
const ISO_INSTANCES: usize = 1000;
const ISO_BUDGET: Duration = Duration::from_secs(10);
const METRIC_PAIRS: usize = 100;
const METRIC_BUDGET: Duration = Duration::from_secs(30);
const PSNR_TOL: f64 = 1e-9;
const SSIM_TOL: f64 = 1e-6;
const PCA_ROUNDTRIP_TOL: f64 = 1e-6;
const PCA_EXPLAINED_MIN: f64 = 0.99;
const PCA_ORTHO_TOL: f64 = 1e-6;
const GRAD_REL_TOL: f64 = 1e-3;
const GRAD_ABS_FLOOR: f64 = 1e-8;
const GRAD_STEP: f64 = 1e-6;
const GRAD_BUDGET: Duration = Duration::from_secs(5 * 60);
const OVERFIT_SAMPLES: usize = 32;
const OVERFIT_SSIM: f64 = 0.85;
const OVERFIT_MAX_EPOCHS: usize = 200;
const OVERFIT_BUDGET: Duration = Duration::from_secs(15 * 60);
const CENTROID_MAX_PX: f64 = 4.0;
const CENTROID_MIN_FRACTION: f64 = 0.8;
const PCA_PARAM_REDUCTION: f64 = 0.8;
const PCA_SSIM_DROP: f64 = 0.05;
const FUSION_SLACK: f64 = 0.02;

/// Epochs given to every fixture training (equal budgets for comparisons).
const FIXTURE_EPOCHS: usize = 150;
const FUSION_EPOCHS: usize = 100;
/// A pixel belongs to a pedestrian when some channel departs from the
/// background by more than this.
const BLOB_THRESHOLD: f32 = 0.25;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(u32, &str, fn(&mut Fixtures) -> Verdict); 10] = [
        (1, "isochronization oracle", c1_isochronize),
        (2, "metric oracles", c2_metrics),
        (3, "PCA correctness", c3_pca),
        (4, "gradient check", c4_gradients),
        (5, "overfit fixture", c5_overfit),
        (6, "rf-only localization", c6_rf_only),
        (7, "PCA ablation", c7_pca_ablation),
        (8, "sensor fusion", c8_fusion),
        (9, "mode isolation", c9_isolation),
        (10, "determinism and resume", c10_determinism),
    ];
    let mut fixtures = Fixtures::new();
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(|| run(&mut fixtures)))
            .unwrap_or_else(|e| {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                verdict(false, format!("panicked: {msg}"))
            });
        if !v.pass {
            failed += 1;
        }
        println!(
            "criterion {id:>2} {:<24} {} ({:.1} s) {}",
            name,
            if v.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            v.detail
        );
    }
    if selected.is_empty() || selected.contains(&8) {
        let v = catch_unwind(AssertUnwindSafe(|| sensor_adjacency(&mut fixtures)))
            .unwrap_or_else(|_| verdict(false, "panicked"));
        if !v.pass {
            failed += 1;
        }
        println!("example      {:<24} {} {}", "adjacent sensor", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    if failed > 0 {
        println!("{failed} acceptance checks failed");
        std::process::exit(1);
    }
}

// ---- 1 ----

fn linear_scan(image_ts: &[f64], csi_ts: &[f64]) -> Vec<usize> {
    image_ts
        .iter()
        .map(|t| {
            let mut best = 0;
            for (j, c) in csi_ts.iter().enumerate() {
                if (c - t).abs() < (csi_ts[best] - t).abs() {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn c1_isochronize(_: &mut Fixtures) -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    for i in 0..ISO_INSTANCES {
        let n_csi = rng.random_range(1..400);
        let mut t = rng.random_range(-1.0..1.0);
        let mut csi = Vec::with_capacity(n_csi);
        for _ in 0..n_csi {
            // every fifth instance snaps to a coarse grid to force ties
            t += if i % 5 == 0 { 0.25 } else { rng.random_range(0.001..0.05) };
            csi.push(t);
        }
        let n_img = rng.random_range(1..80);
        let span = (csi[0] - 0.5, csi[n_csi - 1] + 0.5);
        let imgs: Vec<f64> = (0..n_img)
            .map(|_| {
                if i % 5 == 0 {
                    csi[0] + 0.125 * rng.random_range(-2..(8 * n_csi as i64)) as f64
                } else {
                    rng.random_range(span.0..span.1)
                }
            })
            .collect();
        if isochronize(&imgs, &csi) != linear_scan(&imgs, &csi) {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        mismatches == 0 && elapsed < ISO_BUDGET,
        format!("{mismatches} mismatches over {ISO_INSTANCES} instances in {:.2} s", elapsed.as_secs_f64()),
    )
}

// ---- 2 ----

fn brute_psnr(a: &Array3<f32>, b: &Array3<f32>) -> f64 {
    let mut sum = 0.0;
    for (x, y) in a.iter().zip(b) {
        sum += (*x as f64 - *y as f64).powi(2);
    }
    let mse = sum / a.len() as f64;
    10.0 * (1.0 / mse).log10()
}

fn brute_ssim(a: &Array3<f32>, b: &Array3<f32>, win: usize) -> f64 {
    let (h, w, c) = a.dim();
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let n = (win * win) as f64;
    let mut total = 0.0;
    let mut count = 0;
    for ch in 0..c {
        for y in 0..=h - win {
            for x in 0..=w - win {
                let (mut ma, mut mb) = (0.0, 0.0);
                for dy in 0..win {
                    for dx in 0..win {
                        ma += a[[y + dy, x + dx, ch]] as f64;
                        mb += b[[y + dy, x + dx, ch]] as f64;
                    }
                }
                ma /= n;
                mb /= n;
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for dy in 0..win {
                    for dx in 0..win {
                        let da = a[[y + dy, x + dx, ch]] as f64 - ma;
                        let db = b[[y + dy, x + dx, ch]] as f64 - mb;
                        va += da * da;
                        vb += db * db;
                        cov += da * db;
                    }
                }
                va /= n;
                vb /= n;
                cov /= n;
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
    }
    total / count as f64
}

fn c2_metrics(_: &mut Fixtures) -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params = SsimParams::default();
    let (mut worst_psnr, mut worst_ssim) = (0.0f64, 0.0f64);
    for i in 0..METRIC_PAIRS {
        let a = Array3::from_shape_fn((16, 16, 3), |_| rng.random::<f32>());
        // mix of near copies and unrelated images
        let blend = (i % 4) as f32 / 3.0;
        let b = Array3::from_shape_fn((16, 16, 3), |(y, x, c)| {
            (blend * rng.random::<f32>() + (1.0 - blend) * a[[y, x, c]] + 0.01 * rng.random::<f32>()).clamp(0.0, 1.0)
        });
        let p = metrics::psnr(&a.view(), &b.view()).unwrap();
        let s = metrics::ssim(&a.view(), &b.view(), &params).unwrap();
        worst_psnr = worst_psnr.max((p - brute_psnr(&a, &b)).abs());
        worst_ssim = worst_ssim.max((s - brute_ssim(&a, &b, params.window)).abs());
    }
    let elapsed = start.elapsed();
    verdict(
        worst_psnr <= PSNR_TOL && worst_ssim <= SSIM_TOL && elapsed < METRIC_BUDGET,
        format!("max |dPSNR| {worst_psnr:.2e}, max |dSSIM| {worst_ssim:.2e} over {METRIC_PAIRS} pairs"),
    )
}

// ---- 3 ----

fn amplitude(values: Array4<f32>) -> AmplitudeTensor {
    AmplitudeTensor::new(values).unwrap()
}

fn c3_pca(_: &mut Fixtures) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let f = 12;
    // full rank: every direction has variance
    let full: Vec<AmplitudeTensor> = (0..4)
        .map(|_| amplitude(Array4::from_shape_fn((50, 1, 2, f), |_| rng.random::<f32>() * 4.0 + 1.0)))
        .collect();
    let model = fit_pca(&full, f).unwrap();
    let mut worst_rt = 0.0f64;
    for w in &full {
        let back = pca_inverse(&model, &pca_transform(&model, w).unwrap()).unwrap();
        let num: f64 = back.iter().zip(w.values()).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum();
        let den: f64 = w.values().iter().map(|v| (*v as f64).powi(2)).sum();
        worst_rt = worst_rt.max((num / den).sqrt());
    }

    // rank three plus a whisper of noise
    let basis: Vec<Vec<f64>> = (0..3).map(|_| (0..f).map(|_| rng.random::<f64>() - 0.5).collect()).collect();
    let low: Vec<AmplitudeTensor> = (0..4)
        .map(|_| {
            let mut vals = Array4::<f32>::zeros((60, 1, 1, f));
            for mut lane in vals.lanes_mut(Axis(3)) {
                let z: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                for (j, v) in lane.iter_mut().enumerate() {
                    let s: f64 = (0..3).map(|c| z[c] * basis[c][j]).sum();
                    *v = (5.0 + s + 1e-4 * (rng.random::<f64>() - 0.5)) as f32;
                }
            }
            amplitude(vals)
        })
        .collect();
    let m3 = fit_pca(&low, 3).unwrap();
    let explained: f64 = m3.explained_variance_ratio.iter().sum();
    let mut worst_ortho = 0.0f64;
    for (m, k) in [(&model, f), (&m3, 3)] {
        for i in 0..k {
            for j in 0..k {
                let dot: f64 = m.component(i).iter().zip(m.component(j)).map(|(a, b)| a * b).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst_ortho = worst_ortho.max((dot - target).abs());
            }
        }
    }
    verdict(
        worst_rt < PCA_ROUNDTRIP_TOL && explained >= PCA_EXPLAINED_MIN && worst_ortho <= PCA_ORTHO_TOL,
        format!(
            "round-trip rel. error {worst_rt:.2e}, rank-3 explained {explained:.6}, orthonormality {worst_ortho:.2e}"
        ),
    )
}

// ---- 4 ----

fn random_sample(cfg: &ModelConfig, seed: u64) -> Sample {
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
    let csi = Array3::from_shape_fn((cfg.n_sensors, cfg.l_csi, cfg.csi_feature_dim), |_| rng.random::<f32>() * 2.0 - 1.0);
    Sample { truth, defective, mask, csi }
}

fn values(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1().unwrap()
}

fn c4_gradients(_: &mut Fixtures) -> Verdict {
    let start = Instant::now();
    let cfg = ModelConfig::micro();
    let net = InpaintNet::new(cfg.clone(), DType::F64, 4).unwrap();
    let samples: Vec<Sample> = [10u64, 11].iter().map(|s| random_sample(&cfg, *s)).collect();
    let refs: Vec<&Sample> = samples.iter().collect();
    let loss_at = |net: &InpaintNet| -> f64 { batch_loss(net, &refs, Mode::Multimodal, 0.2).unwrap().to_scalar().unwrap() };
    let grads = batch_loss(&net, &refs, Mode::Multimodal, 0.2).unwrap().backward().unwrap();
    let (mut checked, mut bad, mut worst) = (0usize, 0usize, 0.0f64);
    for (_, var) in net.params().entries() {
        let analytic = grads.get(var.as_tensor()).map(values).unwrap_or_else(|| vec![0.0; var.elem_count()]);
        let base = values(var.as_tensor());
        let shape = var.dims().to_vec();
        let set = |v: Vec<f64>| var.set(&Tensor::from_vec(v, shape.as_slice(), var.device()).unwrap()).unwrap();
        for i in 0..base.len() {
            let mut probe = base.clone();
            probe[i] += GRAD_STEP;
            set(probe.clone());
            let up = loss_at(&net);
            probe[i] = base[i] - GRAD_STEP;
            set(probe);
            let down = loss_at(&net);
            set(base.clone());
            let numeric = (up - down) / (2.0 * GRAD_STEP);
            let err = (analytic[i] - numeric).abs();
            let scale = analytic[i].abs().max(numeric.abs());
            if err > GRAD_REL_TOL * scale + GRAD_ABS_FLOOR {
                bad += 1;
            }
            if scale > 1e-6 {
                worst = worst.max(err / scale);
            }
            checked += 1;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        bad == 0 && checked == net.count_parameters() && elapsed < GRAD_BUDGET,
        format!("{checked} parameters, {bad} outside tolerance, worst relative error {worst:.2e}"),
    )
}

// ---- shared fixtures ----

struct TrainedRun {
    ssim: f64,
    restored: Vec<Array4<f32>>,
    samples: Vec<Sample>,
    n_features: usize,
    csi_input_params: usize,
    first_pass_epoch: Option<usize>,
    seconds: f64,
}

struct Fixtures {
    root: tempfile::TempDir,
    desk: Option<PathBuf>,
    runs: BTreeMap<String, TrainedRun>,
    fusion: Option<experiments::ExperimentReport>,
}

fn desk_sim() -> SimulateConfig {
    let mut cfg = defaults::simulate();
    cfg.render.body_width = 0.8;
    cfg.scenarios = vec![PedestrianTrajectory::ellipse_loop(
        0,
        [0.95, 0.05, 0.05],
        Point::new(3.0, 1.6),
        (1.1, 0.5),
        3.2,
        false,
        32,
    )];
    cfg.duration = 3.4;
    cfg
}

fn fusion_sim() -> SimulateConfig {
    let mut cfg = desk_sim();
    cfg.room.camera_poses[0].image_size = (32, 32);
    cfg.scenarios = vec![
        PedestrianTrajectory::ellipse_loop(0, [0.95, 0.05, 0.05], Point::new(2.0, 1.6), (0.5, 0.4), 3.2, false, 32),
        PedestrianTrajectory::ellipse_loop(1, [0.05, 0.05, 0.95], Point::new(4.0, 2.4), (0.5, 0.4), 1.6, true, 32),
    ];
    cfg
}

fn fixture_run(mode: Mode, pca: Option<usize>) -> RunConfig {
    let mut run = defaults::run();
    run.data.window = WindowConfig {
        l_img: 1,
        l_csi: 20,
        stride: 1,
    };
    run.data.mask = MaskSpec::rectangle(0.9, 0);
    run.data.pca_components = pca;
    run.data.test_fraction = 0.0;
    run.model.l_img = 1;
    run.train.epochs = FIXTURE_EPOCHS;
    run.train.learning_rate = 2e-3;
    run.mode = mode;
    run
}

fn simulate(cfg: &SimulateConfig, dir: &Path) {
    scene_sim::generate_dataset(&cfg.room, &cfg.scenarios, &cfg.channel, &cfg.render, cfg.duration, dir).unwrap();
}

impl Fixtures {
    fn new() -> Self {
        Fixtures {
            root: tempfile::tempdir().unwrap(),
            desk: None,
            runs: BTreeMap::new(),
            fusion: None,
        }
    }

    fn desk(&mut self) -> PathBuf {
        if self.desk.is_none() {
            let dir = self.root.path().join("desk");
            simulate(&desk_sim(), &dir);
            self.desk = Some(dir);
        }
        self.desk.clone().unwrap()
    }

    /// Trains (once) on the desk fixture and evaluates on its training set.
    fn desk_run(&mut self, key: &str, run: RunConfig) -> &TrainedRun {
        if !self.runs.contains_key(key) {
            let ds = pipeline::load_dataset(&self.desk()).unwrap();
            let trained = train_and_score(&ds, &run);
            self.runs.insert(key.to_string(), trained);
        }
        &self.runs[key]
    }
}

fn train_and_score(ds: &csi_inpaint_core::dataset_io::Dataset, run: &RunConfig) -> TrainedRun {
    let prepared = pipeline::prepare(ds, run).unwrap();
    let mut trainer = pipeline::new_trainer(&prepared, run).unwrap();
    let mut first_pass_epoch = None;
    let seconds = pipeline::fit(&mut trainer, &prepared.train, |t, epoch, _| {
        if first_pass_epoch.is_none() && (epoch + 1) % 10 == 0 {
            let m = pipeline::sample_metrics(t.net(), &prepared.train, run.mode).unwrap();
            if pipeline::mean_ssim(&m) >= OVERFIT_SSIM {
                first_pass_epoch = Some(epoch + 1);
            }
        }
        false
    })
    .unwrap();
    let m = pipeline::sample_metrics(trainer.net(), &prepared.train, run.mode).unwrap();
    let restored = pipeline::restore(trainer.net(), &prepared.train, run.mode).unwrap();
    TrainedRun {
        ssim: pipeline::mean_ssim(&m),
        restored,
        n_features: prepared.model.csi_feature_dim,
        csi_input_params: prepared.model.csi_input_layer_params(),
        samples: prepared.train,
        first_pass_epoch,
        seconds,
    }
}

// ---- 5 ----

fn c5_overfit(fx: &mut Fixtures) -> Verdict {
    let run = fx.desk_run("multimodal-k10", fixture_run(Mode::Multimodal, Some(10)));
    let n = run.samples.len();
    let within = run.first_pass_epoch.is_some_and(|e| e <= OVERFIT_MAX_EPOCHS);
    let fast = Duration::from_secs_f64(run.seconds) < OVERFIT_BUDGET;
    verdict(
        n == OVERFIT_SAMPLES && within && fast,
        format!(
            "{n} samples, train SSIM {:.4} after {FIXTURE_EPOCHS} epochs, first >= {OVERFIT_SSIM} at epoch {}, {:.0} s",
            run.ssim,
            run.first_pass_epoch.map(|e| e.to_string()).unwrap_or_else(|| "never".into()),
            run.seconds
        ),
    )
}

// ---- 6 ----

fn blob_centroid(img: ndarray::ArrayView3<f32>, background: [f32; 3]) -> Option<(f64, f64)> {
    let (h, w, _) = img.dim();
    let (mut sy, mut sx, mut n) = (0.0, 0.0, 0usize);
    for y in 0..h {
        for x in 0..w {
            if (0..3).any(|c| (img[[y, x, c]] - background[c]).abs() > BLOB_THRESHOLD) {
                sy += y as f64;
                sx += x as f64;
                n += 1;
            }
        }
    }
    (n > 0).then(|| (sy / n as f64, sx / n as f64))
}

fn c6_rf_only(fx: &mut Fixtures) -> Verdict {
    let background = RenderStyle::default().background;
    let run = fx.desk_run("rf-only", fixture_run(Mode::RfOnly, Some(10)));
    let full_masks = run.samples.iter().all(|s| s.mask.iter().all(|m| *m));
    let mut errors = Vec::new();
    for (s, r) in run.samples.iter().zip(&run.restored) {
        let Some(truth) = blob_centroid(s.truth.index_axis(Axis(0), 0), background) else {
            continue;
        };
        let err = blob_centroid(r.index_axis(Axis(0), 0), background)
            .map(|p| ((p.0 - truth.0).powi(2) + (p.1 - truth.1).powi(2)).sqrt())
            .unwrap_or(f64::INFINITY);
        errors.push(err);
    }
    let good = errors.iter().filter(|e| **e <= CENTROID_MAX_PX).count();
    let frac = good as f64 / errors.len().max(1) as f64;
    let mut sorted = errors.clone();
    sorted.sort_by(f64::total_cmp);
    verdict(
        full_masks && !errors.is_empty() && frac >= CENTROID_MIN_FRACTION,
        format!(
            "{good}/{} samples within {CENTROID_MAX_PX} px (median error {:.2} px), rf-only train SSIM {:.4}",
            errors.len(),
            sorted.get(sorted.len() / 2).copied().unwrap_or(f64::NAN),
            run.ssim
        ),
    )
}

// ---- 7 ----

fn c7_pca_ablation(fx: &mut Fixtures) -> Verdict {
    // layer-size formula: p·F weights per output plus one bias each
    let formula = |f: usize| {
        let c = ModelConfig::default();
        c.csi_patch_len * f * c.embed_dim + c.embed_dim
    };
    let at = |f: usize| {
        ModelConfig {
            csi_feature_dim: f,
            ..ModelConfig::default()
        }
        .csi_input_layer_params()
    };
    let built = |f: usize| {
        let cfg = ModelConfig {
            csi_feature_dim: f,
            ..ModelConfig::default()
        };
        let net = InpaintNet::new(cfg, DType::F32, 0).unwrap();
        net.params()
            .entries()
            .iter()
            .filter(|(n, _)| n.starts_with("csi.proj"))
            .map(|(_, v)| v.elem_count())
            .sum::<usize>()
    };
    let (p64, p10) = (at(64), at(10));
    let formula_ok = p64 == formula(64) && p10 == formula(10) && p64 == built(64) && p10 == built(10);
    let reduction = 1.0 - p10 as f64 / p64 as f64;

    let k10 = fx.desk_run("multimodal-k10", fixture_run(Mode::Multimodal, Some(10)));
    let (ssim10, f10, n10) = (k10.ssim, k10.n_features, k10.csi_input_params);
    let none = fx.desk_run("multimodal-none", fixture_run(Mode::Multimodal, None));
    let (ssim64, f64_, n64) = (none.ssim, none.n_features, none.csi_input_params);
    let drop = ssim64 - ssim10;
    verdict(
        formula_ok && reduction >= PCA_PARAM_REDUCTION && f10 == 10 && f64_ == 64 && n10 == p10 && n64 == p64
            && drop <= PCA_SSIM_DROP,
        format!(
            "input layer {p64} -> {p10} params ({:.1}% fewer); SSIM {ssim64:.4} at F=64 vs {ssim10:.4} at F=10 (drop {drop:+.4})",
            100.0 * reduction
        ),
    )
}

// ---- 8 ----

impl Fixtures {
    /// Sensor study on the two-pedestrian fixture, run once.
    fn fusion(&mut self) -> &experiments::ExperimentReport {
        if self.fusion.is_none() {
            let dir = self.root.path().join("fusion");
            simulate(&fusion_sim(), &dir);
            let mut base = fixture_run(Mode::Multimodal, Some(10));
            base.train.epochs = FUSION_EPOCHS;
            let exp = ExperimentConfig {
                name: "fusion".into(),
                kind: ExperimentKind::SensorStudy,
                dataset: dir,
                output: self.root.path().join("fusion-out"),
                base,
                sensor_subsets: vec![vec![1, 2, 3, 4], vec![1], vec![2], vec![3], vec![4]],
                focus_pedestrian: Some(0),
                ..defaults::experiment()
            };
            self.fusion = Some(experiments::run_sensor_study(&exp).unwrap());
        }
        self.fusion.as_ref().unwrap()
    }
}

fn c8_fusion(fx: &mut Fixtures) -> Verdict {
    let report = fx.fusion();
    let rows: Vec<_> = report.outcomes.iter().map(|o| &o.row).collect();
    let all = rows.iter().find(|r| r.sensors == "1+2+3+4").map(|r| r.mean_ssim).unwrap_or(f64::NAN);
    let singles: Vec<(String, f64)> = rows.iter().filter(|r| !r.sensors.contains('+')).map(|r| (r.sensors.clone(), r.mean_ssim)).collect();
    let ok = report.failures.is_empty() && singles.len() == 4 && singles.iter().all(|(_, s)| all >= s - FUSION_SLACK);
    let footprint: Vec<String> = rows
        .iter()
        .map(|r| format!("{}={}", r.sensors, r.footprint_mse.map(|v| format!("{v:.4}")).unwrap_or("-".into())))
        .collect();
    verdict(
        ok,
        format!(
            "all-sensors SSIM {all:.4}; singles {}; pedestrian-0 footprint MSE {}",
            singles.iter().map(|(s, v)| format!("{s}={v:.4}")).collect::<Vec<_>>().join(" "),
            footprint.join(" ")
        ),
    )
}

// ---- 9 ----

fn c9_isolation(_: &mut Fixtures) -> Verdict {
    let cfg = ModelConfig {
        l_img: 2,
        ..ModelConfig::default()
    };
    let net = InpaintNet::new(cfg.clone(), DType::F32, 9).unwrap();
    let a = random_sample(&cfg, 1);
    let forward = |s: &Sample, mode| {
        let (batch, _) = make_batch(&[s], DType::F32).unwrap();
        values(&net.forward(&batch, mode).unwrap())
    };
    let mut csi_perturbed = a.clone();
    csi_perturbed.csi.mapv_inplace(|v| v * -3.0 + 0.7);
    let image_only_same = forward(&a, Mode::ImageOnly) == forward(&csi_perturbed, Mode::ImageOnly);
    let multimodal_differs = forward(&a, Mode::Multimodal) != forward(&csi_perturbed, Mode::Multimodal);

    let mut pixels_perturbed = a.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for ((_, y, x, _), v) in pixels_perturbed.defective.indexed_iter_mut() {
        if a.mask[[y, x]] {
            *v = rng.random();
        }
    }
    let rf_only_same = forward(&a, Mode::RfOnly) == forward(&pixels_perturbed, Mode::RfOnly);
    // rf-only also ignores visible pixels: the whole frame is treated as masked
    let mut visible_perturbed = a.clone();
    visible_perturbed.defective.mapv_inplace(|v| 1.0 - v);
    let rf_only_blind = forward(&a, Mode::RfOnly) == forward(&visible_perturbed, Mode::RfOnly);
    verdict(
        image_only_same && rf_only_same && rf_only_blind && multimodal_differs,
        format!(
            "image-only invariant to CSI: {image_only_same}; rf-only invariant to masked pixels: {rf_only_same}, to all pixels: {rf_only_blind}; multimodal sees CSI: {multimodal_differs}"
        ),
    )
}

// ---- 10 ----

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect()
}

fn c10_determinism(fx: &mut Fixtures) -> Verdict {
    let root = fx.root.path().join("determinism");
    let (a, b) = (root.join("a"), root.join("b"));
    simulate(&desk_sim(), &a);
    simulate(&desk_sim(), &b);
    let datasets_equal = dir_bytes(&a) == dir_bytes(&b);

    let ds = pipeline::load_dataset(&a).unwrap();
    let run = fixture_run(Mode::Multimodal, Some(10));
    let first_epoch = || {
        let prepared = pipeline::prepare(&ds, &run).unwrap();
        let mut t: Trainer = pipeline::new_trainer(&prepared, &run).unwrap();
        t.train_epoch(&prepared.train).unwrap().to_bits()
    };
    let losses_equal = first_epoch() == first_epoch();

    // sweep resume on a small window sweep
    let mut sim = desk_sim();
    sim.room.camera_poses[0].image_size = (16, 16);
    let small = root.join("small");
    simulate(&sim, &small);
    let mut base = fixture_run(Mode::Multimodal, Some(4));
    base.model = ModelConfig {
        patch_size: 4,
        embed_dim: 8,
        n_layers_img: 1,
        n_layers_csi: 1,
        attn_window: 2,
        decoder_channels: vec![8, 8, 8],
        reduced_img: 4,
        reduced_csi: 4,
        ..base.model
    };
    base.data.window.stride = 4;
    base.train.epochs = 2;
    let exp = ExperimentConfig {
        name: "resume".into(),
        kind: ExperimentKind::WindowSweep,
        dataset: small,
        output: root.join("sweep"),
        base,
        l_csi: vec![10, 20],
        ..defaults::experiment()
    };
    let first = experiments::run_window_sweep(&exp).unwrap();
    let rows_before = results::read(&exp.output.join(RESULTS_FILE)).unwrap();
    let second = experiments::run_window_sweep(&exp).unwrap();
    let rows_after = results::read(&exp.output.join(RESULTS_FILE)).unwrap();
    let reran = second.outcomes.iter().filter(|o| !o.skipped).count();
    let resume_ok = first.outcomes.len() == 2
        && first.outcomes.iter().all(|o| !o.skipped)
        && reran == 0
        && second.outcomes.len() == 2
        && rows_before == rows_after;
    verdict(
        datasets_equal && losses_equal && resume_ok,
        format!(
            "datasets bit-identical: {datasets_equal}; first-epoch losses bit-identical: {losses_equal}; resumed sweep reran {reran} of {} points",
            second.outcomes.len()
        ),
    )
}

/// Sensor 1 sits next to pedestrian 0's loop, sensor 4 in the far corner:
/// the near sensor should reconstruct that pedestrian's footprint better.
fn sensor_adjacency(fx: &mut Fixtures) -> Verdict {
    let report = fx.fusion();
    let mse = |label: &str| {
        report
            .outcomes
            .iter()
            .find(|o| o.row.sensors == label)
            .and_then(|o| o.row.footprint_mse)
            .unwrap_or(f64::NAN)
    };
    let (near, far) = (mse("1"), mse("4"));
    verdict(near < far, format!("pedestrian-0 footprint MSE {near:.5} with sensor 1 vs {far:.5} with sensor 4"))
}
