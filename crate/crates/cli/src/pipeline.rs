//! Dataset windows to trained models and metrics.

use std::path::Path;
use std::time::Instant;

use csi_inpaint_core::dataset_io::{self, Dataset, DatasetManifest, SyncedSample, WindowIndex};
use csi_inpaint_core::masking::MaskSpec;
use csi_inpaint_core::metrics::{self, MetricsRecord, SampleMetrics, SsimParams};
use csi_inpaint_core::preprocess::CsiPreprocessor;
use csi_inpaint_core::scene_sim;
use csi_inpaint_core::seed;
use csi_inpaint_model::train::{evaluate, predict};
use csi_inpaint_model::{InpaintNet, Mode, ModelConfig, Sample, TrainConfig, Trainer};
use candle_core::DType;
use log::{info, warn};
use ndarray::{Array2, Array4};

use crate::config::{DataConfig, RunConfig};
use crate::error::{CliError, Result};

/// Evaluation batch size; does not affect results.
pub const EVAL_BATCH: usize = 8;

#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub train_index: Vec<WindowIndex>,
    pub test_index: Vec<WindowIndex>,
    pub preprocessor: CsiPreprocessor,
    /// Model configuration with data-derived fields filled in.
    pub model: ModelConfig,
    pub sensor_ids: Vec<u32>,
    /// Mask actually applied (rf-only forces a full mask).
    pub mask: MaskSpec,
}

impl Prepared {
    /// The held-out split, or the training split when nothing is held out.
    pub fn eval_split(&self) -> (&[Sample], &[WindowIndex]) {
        if self.test.is_empty() {
            (&self.train, &self.train_index)
        } else {
            (&self.test, &self.test_index)
        }
    }
}

/// Seeds of the independent random streams of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSeeds {
    pub init: u64,
    pub train: u64,
    pub mask: u64,
}

impl RunSeeds {
    pub fn from_root(root: u64) -> Self {
        RunSeeds {
            init: seed::derive(root, "init-weights", &[]),
            train: seed::derive(root, "train-order", &[]),
            mask: seed::derive(root, "occlusion-mask", &[]),
        }
    }
}

pub fn effective_mask(data: &DataConfig, mode: Mode, root_seed: u64) -> MaskSpec {
    let mut mask = if mode == Mode::RfOnly {
        if data.mask != MaskSpec::full() {
            info!("rf-only mode: ignoring the configured mask and occluding every pixel");
        }
        MaskSpec {
            fill_value: data.mask.fill_value,
            ..MaskSpec::full()
        }
    } else {
        data.mask.clone()
    };
    mask.seed = seed::derive(RunSeeds::from_root(root_seed).mask, "mask", &[data.mask.seed]);
    mask
}

fn select_sensors(ds: &Dataset, data: &DataConfig) -> Result<Vec<u32>> {
    let all: Vec<u32> = ds.csi.iter().map(|c| c.sensor_id).collect();
    let ids = data.sensor_ids.clone().unwrap_or(all);
    for id in &ids {
        if ds.sensor(*id).is_none() {
            return Err(CliError::config(format!("data.sensor_ids: sensor {id} is not in the dataset")));
        }
    }
    Ok(ids)
}

/// Cuts windows, splits them in time order, fits CSI preprocessing on the
/// training windows and converts everything to model samples.
pub fn prepare(ds: &Dataset, run: &RunConfig) -> Result<Prepared> {
    prepare_with(ds, run, None)
}

/// Like [`prepare`], reusing a fitted preprocessor when one is given.
pub fn prepare_with(ds: &Dataset, run: &RunConfig, fitted: Option<CsiPreprocessor>) -> Result<Prepared> {
    let data = &run.data;
    data.validate()?;
    let images = ds
        .camera(data.camera_id)
        .ok_or_else(|| CliError::config(format!("data.camera_id: camera {} is not in the dataset", data.camera_id)))?;
    let sensor_ids = select_sensors(ds, data)?;
    let csi: Vec<_> = sensor_ids.iter().map(|id| ds.sensor(*id).expect("checked").clone()).collect();
    let mask = effective_mask(data, run.mode, run.seed);

    let synced: Vec<SyncedSample> = dataset_io::window_samples(images, &csi, data.window, &mask)?
        .collect::<csi_inpaint_core::Result<_>>()?;
    if synced.is_empty() {
        return Err(CliError::config("data.window: no complete window fits the dataset"));
    }
    let n_test = (synced.len() as f64 * data.test_fraction).floor() as usize;
    let n_train = synced.len() - n_test;
    if n_train == 0 {
        return Err(CliError::config("data.test_fraction leaves no training windows"));
    }
    let (train_raw, test_raw) = synced.split_at(n_train);
    let train_csi: Vec<_> = train_raw.iter().map(|s| s.csi_windows.clone()).collect();
    let reused = fitted.is_some();
    let preprocessor = match fitted {
        Some(p) => p,
        None => CsiPreprocessor::fit(&train_csi, data.variance_floor, data.pca_components)?,
    };
    if reused && preprocessor.n_sensors() != sensor_ids.len() {
        return Err(CliError::Checkpoint(format!(
            "preprocessor was fitted for {} sensors, the data has {}",
            preprocessor.n_sensors(),
            sensor_ids.len()
        )));
    }

    let convert = |raw: &[SyncedSample]| -> Result<Vec<Sample>> {
        raw.iter()
            .map(|s| {
                Sample::from_synced(s, &preprocessor).map_err(|e| match e {
                    // a reused preprocessor that cannot digest this data
                    csi_inpaint_model::ModelError::Data(inner) if reused => {
                        CliError::Checkpoint(format!("stored preprocessor does not fit the data: {inner}"))
                    }
                    other => other.into(),
                })
            })
            .collect()
    };
    let train = convert(train_raw)?;
    let test = convert(test_raw)?;

    let (_, h, w, _) = images.frames.dim();
    let model = ModelConfig {
        image_size: (h, w),
        n_sensors: sensor_ids.len(),
        l_img: data.window.l_img,
        l_csi: data.window.l_csi,
        csi_feature_dim: preprocessor.feature_dim(),
        fill_value: mask.fill_value,
        ..run.model.clone()
    };
    model.validate()?;
    info!(
        "{} training and {} test windows, CSI feature width {}, sensors {:?}",
        train.len(),
        test.len(),
        model.csi_feature_dim,
        sensor_ids
    );
    Ok(Prepared {
        train,
        test,
        train_index: train_raw.iter().map(|s| s.index.clone()).collect(),
        test_index: test_raw.iter().map(|s| s.index.clone()).collect(),
        preprocessor,
        model,
        sensor_ids,
        mask,
    })
}

pub fn new_trainer(prepared: &Prepared, run: &RunConfig) -> Result<Trainer> {
    let seeds = RunSeeds::from_root(run.seed);
    let net = InpaintNet::new(prepared.model.clone(), DType::F32, seeds.init)?;
    let train = TrainConfig {
        seed: seeds.train,
        ..run.train.clone()
    };
    Ok(Trainer::new(net, run.mode, train)?)
}

/// Trains until the configured epoch count or until `stop` returns true
/// after an epoch. Returns the wall-clock seconds spent.
pub fn fit(
    trainer: &mut Trainer,
    samples: &[Sample],
    mut stop: impl FnMut(&Trainer, usize, f64) -> bool,
) -> Result<f64> {
    let start = Instant::now();
    while trainer.epochs_done() < trainer.config().epochs {
        let loss = trainer.train_epoch(samples)?;
        let epoch = trainer.epochs_done() - 1;
        log::debug!("epoch {epoch}: loss {loss:.6}");
        if stop(trainer, epoch, loss) {
            info!("stopping after epoch {epoch}");
            break;
        }
    }
    Ok(start.elapsed().as_secs_f64())
}

pub fn sample_metrics(net: &InpaintNet, samples: &[Sample], mode: Mode) -> Result<Vec<SampleMetrics>> {
    Ok(evaluate(net, samples, mode, EVAL_BATCH)?)
}

pub fn restore(net: &InpaintNet, samples: &[Sample], mode: Mode) -> Result<Vec<Array4<f32>>> {
    Ok(predict(net, samples, mode, EVAL_BATCH)?)
}

pub fn record(
    run_id: &str,
    mode: Mode,
    config: serde_json::Value,
    samples: &[SampleMetrics],
) -> Result<MetricsRecord> {
    Ok(metrics::aggregate(run_id, mode.as_str(), config, samples, SsimParams::default())?)
}

pub fn mean_ssim(samples: &[SampleMetrics]) -> f64 {
    samples.iter().map(|s| s.ssim).sum::<f64>() / samples.len().max(1) as f64
}

/// Per-frame screen footprint of one pedestrian for each window.
pub fn pedestrian_footprints(
    manifest: &DatasetManifest,
    images_ts: &[f64],
    camera_id: u32,
    pedestrian_id: u32,
    index: &[WindowIndex],
    l_img: usize,
) -> Result<Vec<Vec<Array2<bool>>>> {
    let camera = manifest
        .room
        .camera_poses
        .get(camera_id as usize)
        .ok_or_else(|| CliError::config(format!("camera {camera_id} is not in the room")))?;
    let ped = manifest
        .scenarios
        .iter()
        .find(|p| p.pedestrian_id == pedestrian_id)
        .ok_or_else(|| CliError::config(format!("focus_pedestrian {pedestrian_id} is not in the dataset")))?;
    Ok(index
        .iter()
        .map(|w| {
            (w.image_start..w.image_start + l_img)
                .map(|i| scene_sim::footprint(camera, ped.position_at(images_ts[i]), &manifest.render))
                .collect()
        })
        .collect())
}

/// Mean squared error over pixels that are both occluded and inside the
/// footprint; `None` when no such pixel exists in any sample.
pub fn footprint_mse(
    restored: &[Array4<f32>],
    samples: &[Sample],
    footprints: &[Vec<Array2<bool>>],
) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((r, s), fps) in restored.iter().zip(samples).zip(footprints) {
        for (t, fp) in fps.iter().enumerate() {
            for ((y, x), inside) in fp.indexed_iter() {
                if *inside && s.mask[[y, x]] {
                    for c in 0..3 {
                        sum += (r[[t, y, x, c]] as f64 - s.truth[[t, y, x, c]] as f64).powi(2);
                        n += 1;
                    }
                }
            }
        }
    }
    (n > 0).then(|| sum / n as f64)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let ds = dataset_io::load_dataset(path)?;
    if ds.csi.is_empty() || ds.images.is_empty() {
        warn!("{}: dataset has no CSI or no image streams", path.display());
    }
    Ok(ds)
}
