//! Command bodies, callable in-process as well as from the binary.

use std::path::{Path, PathBuf};

use csi_inpaint_core::dataset_io::DatasetManifest;
use csi_inpaint_core::metrics::MetricsRecord;
use csi_inpaint_core::scene_sim;
use csi_inpaint_model::{checkpoint, Mode, ModelError};
use log::{info, warn};
use ndarray::Axis;
use serde::{Deserialize, Serialize};

use crate::config::{self, config_hash, ExperimentConfig, RunConfig, SimulateConfig};
use crate::error::{CliError, Result};
use crate::experiments::{self, ExperimentReport};
use crate::manifest::RunManifest;
use crate::pipeline::{self, RunSeeds};
use crate::plots::{self, GridRow};
use crate::results;

pub const RUN_MANIFEST: &str = "run_manifest.json";

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{name}.{suffix}"))
}

/// Manifest path for a checkpoint file.
pub fn train_manifest_path(checkpoint: &Path) -> PathBuf {
    sibling(checkpoint, "manifest.json")
}

/// Loss-curve CSV path for a checkpoint file.
pub fn loss_csv_path(checkpoint: &Path) -> PathBuf {
    sibling(checkpoint, "loss.csv")
}

/// Renders a synthetic dataset into `out`. `seed` overrides the room seed.
pub fn simulate(config_path: &Path, out: &Path, seed: Option<u64>) -> Result<DatasetManifest> {
    let mut cfg: SimulateConfig = config::load(config_path)?;
    if cfg.schema_version != config::SCHEMA_VERSION {
        return Err(CliError::config(format!(
            "schema_version {} is not supported (expected {})",
            cfg.schema_version,
            config::SCHEMA_VERSION
        )));
    }
    if let Some(s) = seed {
        cfg.room.seed = s;
    }
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let manifest_path = out.join(RUN_MANIFEST);
    let mut run = RunManifest::begin(
        &manifest_path,
        "simulate",
        Some(config_path),
        config_hash(&cfg),
        cfg.room.seed,
        vec![out.to_path_buf()],
    )?;
    let result = scene_sim::generate_dataset(&cfg.room, &cfg.scenarios, &cfg.channel, &cfg.render, cfg.duration, out);
    match result {
        Ok(m) => {
            run.finish(&manifest_path, "ok")?;
            Ok(m)
        }
        Err(e) => {
            run.finish(&manifest_path, "failed")?;
            Err(e.into())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrainContext {
    dataset: PathBuf,
    run: RunConfig,
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub dataset: PathBuf,
    pub config: PathBuf,
    pub mode: Option<Mode>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    /// Checkpoint to continue from; the run config's epoch count is the
    /// new total.
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub epochs: usize,
    pub loss_curve: Vec<f64>,
    pub train_seconds: f64,
}

pub fn train(args: &TrainArgs) -> Result<TrainSummary> {
    let mut run: RunConfig = config::load(&args.config)?;
    if let Some(m) = args.mode {
        run.mode = m;
    }
    if let Some(s) = args.seed {
        run.seed = s;
    }
    run.validate()?;
    let manifest_path = train_manifest_path(&args.out);
    let mut manifest = RunManifest::begin(
        &manifest_path,
        "train",
        Some(&args.config),
        config_hash(&run),
        run.seed,
        vec![args.out.clone(), loss_csv_path(&args.out)],
    )?;
    let result = train_inner(args, &run);
    let status = match &result {
        Ok(_) => "ok",
        Err(CliError::Diverged(_)) => "diverged",
        Err(_) => "failed",
    };
    manifest.finish(&manifest_path, status)?;
    result
}

fn train_inner(args: &TrainArgs, run: &RunConfig) -> Result<TrainSummary> {
    let ds = pipeline::load_dataset(&args.dataset)?;
    let seeds = RunSeeds::from_root(run.seed);
    let (prepared, mut trainer) = match &args.resume {
        None => {
            let prepared = pipeline::prepare(&ds, run)?;
            let trainer = pipeline::new_trainer(&prepared, run)?;
            (prepared, trainer)
        }
        Some(path) => {
            let ck = checkpoint::load(path)?;
            let prepared = pipeline::prepare_with(&ds, run, ck.meta.preprocessor.clone())?;
            if ck.meta.model != prepared.model {
                return Err(CliError::Checkpoint(format!(
                    "{}: model configuration differs from the one the run config and dataset produce",
                    path.display()
                )));
            }
            if ck.meta.mode != run.mode {
                return Err(CliError::Checkpoint(format!(
                    "{}: trained in {} mode, asked to resume in {}",
                    path.display(),
                    ck.meta.mode,
                    run.mode
                )));
            }
            let mut trainer = ck.trainer;
            trainer.set_epochs(run.train.epochs);
            info!("resuming after {} epochs", trainer.epochs_done());
            (prepared, trainer)
        }
    };
    let seconds = pipeline::fit(&mut trainer, &prepared.train, |t, epoch, loss| {
        info!("epoch {epoch}: loss {loss:.6} (lr {:.2e})", t.learning_rate(t.step(), prepared.train.len()));
        false
    })?;
    let context = serde_json::to_value(TrainContext {
        dataset: args.dataset.clone(),
        run: run.clone(),
    })
    .expect("context serializes");
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    checkpoint::save(&args.out, &trainer, seeds.init, Some(&prepared.preprocessor), context)?;
    write_loss_csv(&loss_csv_path(&args.out), trainer.loss_curve())?;
    Ok(TrainSummary {
        epochs: trainer.epochs_done(),
        loss_curve: trainer.loss_curve().to_vec(),
        train_seconds: seconds,
    })
}

fn write_loss_csv(path: &Path, curve: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["epoch", "loss"]).map_err(|e| csv_err(path, e))?;
    for (i, l) in curve.iter().enumerate() {
        w.write_record([i.to_string(), format!("{l:?}")]).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    CliError::io(path, std::io::Error::other(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (expected train or test)")),
        }
    }
}

/// Per-sample metrics as written next to the aggregate record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub ordinal: usize,
    pub image_start: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub record: MetricsRecord,
    pub samples: Vec<SampleRow>,
    pub dir: PathBuf,
}

/// Evaluates a checkpoint; writes `metrics.json`, `samples.csv` and
/// `grid.png` into `out` (default: next to the checkpoint).
pub fn eval(dataset: &Path, checkpoint_path: &Path, split: Split, out: Option<&Path>) -> Result<EvalOutput> {
    let meta = checkpoint::read_meta(checkpoint_path)?;
    let ctx: TrainContext = serde_json::from_value(meta.context.clone()).map_err(|e| {
        CliError::Checkpoint(format!("{}: missing run context: {e}", checkpoint_path.display()))
    })?;
    let dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| sibling(checkpoint_path, &format!("eval-{}", split_name(split))));
    let manifest_path = dir.join(RUN_MANIFEST);
    let mut manifest = RunManifest::begin(
        &manifest_path,
        "eval",
        Some(checkpoint_path),
        config_hash(&ctx.run),
        ctx.run.seed,
        vec![dir.join("metrics.json"), dir.join("samples.csv"), dir.join("grid.png")],
    )?;
    let result = eval_inner(dataset, checkpoint_path, &ctx.run, split, &dir);
    manifest.finish(&manifest_path, if result.is_ok() { "ok" } else { "failed" })?;
    result
}

fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Test => "test",
    }
}

fn eval_inner(dataset: &Path, checkpoint_path: &Path, run: &RunConfig, split: Split, dir: &Path) -> Result<EvalOutput> {
    let ds = pipeline::load_dataset(dataset)?;
    let ck = checkpoint::load(checkpoint_path)?;
    let prepared = pipeline::prepare_with(&ds, run, ck.meta.preprocessor.clone())?;
    if prepared.model != ck.meta.model {
        return Err(ModelError::CheckpointMismatch(format!(
            "{}: dataset and run config give a model configuration that differs from the checkpoint",
            checkpoint_path.display()
        ))
        .into());
    }
    let (samples, index) = match split {
        Split::Train => (&prepared.train[..], &prepared.train_index[..]),
        Split::Test => (&prepared.test[..], &prepared.test_index[..]),
    };
    if samples.is_empty() {
        return Err(CliError::config(format!("the {} split is empty", split_name(split))));
    }
    let net = ck.trainer.net();
    let mode = ck.meta.mode;
    let metrics = pipeline::sample_metrics(net, samples, mode)?;
    let restored = pipeline::restore(net, samples, mode)?;
    let run_id = format!("eval-{}", &config_hash(run)[..12]);
    let record = pipeline::record(&run_id, mode, serde_json::to_value(run).expect("serializes"), &metrics)?;
    let rows: Vec<SampleRow> = index
        .iter()
        .zip(&metrics)
        .map(|(i, m)| SampleRow {
            ordinal: i.ordinal,
            image_start: i.image_start,
            psnr: m.psnr,
            ssim: m.ssim,
        })
        .collect();

    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let json = dir.join("metrics.json");
    std::fs::write(&json, serde_json::to_string_pretty(&record).expect("serializes"))
        .map_err(|e| CliError::io(&json, e))?;
    let csv_path = dir.join("samples.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| csv_err(&csv_path, e))?;
    for r in &rows {
        w.serialize(r).map_err(|e| csv_err(&csv_path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&csv_path, e))?;
    let grid: Vec<GridRow> = samples
        .iter()
        .zip(&restored)
        .map(|(s, r)| GridRow {
            truth: s.truth.index_axis(Axis(0), 0),
            defective: s.defective.index_axis(Axis(0), 0),
            restored: r.index_axis(Axis(0), 0),
            mask: &s.mask,
        })
        .collect();
    plots::sample_grid(&dir.join("grid.png"), &grid)?;
    info!("mean PSNR {:.3} dB, mean SSIM {:.4}", record.mean_psnr, record.mean_ssim);
    Ok(EvalOutput {
        record,
        samples: rows,
        dir: dir.to_path_buf(),
    })
}

/// Runs an experiment config; any failed point turns into `PartialSweep`.
pub fn sweep(experiment_path: &Path) -> Result<ExperimentReport> {
    let cfg: ExperimentConfig = config::load(experiment_path)?;
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output).map_err(|e| CliError::io(&cfg.output, e))?;
    let manifest_path = cfg.output.join(RUN_MANIFEST);
    let mut manifest = RunManifest::begin(
        &manifest_path,
        "sweep",
        Some(experiment_path),
        config_hash(&cfg),
        cfg.base.seed,
        vec![cfg.output.join(experiments::RESULTS_FILE)],
    )?;
    let result = experiments::run_experiment(&cfg);
    let report = match result {
        Ok(r) => r,
        Err(e) => {
            manifest.finish(&manifest_path, "failed")?;
            return Err(e);
        }
    };
    if report.failures.is_empty() {
        manifest.finish(&manifest_path, "ok")?;
        Ok(report)
    } else {
        manifest.finish(&manifest_path, "partial")?;
        let summary = report
            .failures
            .iter()
            .map(|(label, err)| format!("[{label}] {err}"))
            .collect::<Vec<_>>()
            .join("; ");
        for (label, err) in &report.failures {
            warn!("{label}: {err}");
        }
        Err(CliError::PartialSweep {
            failed: report.failures.len(),
            total: report.total(),
            summary,
        })
    }
}

/// Markdown table of a results CSV.
pub fn report(results_path: &Path) -> Result<String> {
    let rows = results::read(results_path)?;
    let mut out = String::from(
        "| experiment | mode | L | k | sensors | params | epochs | seconds | PSNR (dB) | SSIM | footprint MSE |\n\
         |---|---|---|---|---|---|---|---|---|---|---|\n",
    );
    for r in rows {
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} | {:.1} | {:.3} | {:.4} | {} |\n",
            r.experiment,
            r.mode,
            r.l_csi,
            r.pca_k,
            r.sensors,
            r.n_params,
            r.epochs,
            r.train_seconds,
            r.mean_psnr,
            r.mean_ssim,
            r.footprint_mse.map(|v| format!("{v:.5}")).unwrap_or_else(|| "-".into()),
        ));
    }
    Ok(out)
}
