//! Sweep runners: operating modes, CSI window length, PCA width and sensor
//! subsets. Every point is trained from scratch with the same epoch budget,
//! keyed by a config hash, and skipped when its row already exists.

use std::path::{Path, PathBuf};

use csi_inpaint_core::dataset_io::Dataset;
use csi_inpaint_core::metrics::MetricsRecord;
use csi_inpaint_model::Mode;
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::{config_hash, ExperimentConfig, ExperimentKind, PcaChoice, RunConfig};
use crate::error::{CliError, Result};
use crate::pipeline;
use crate::plots::{self, GridRow};
use crate::results::{self, sensors_label, ResultRow};

pub const RESULTS_FILE: &str = "results.csv";
const GRID_SAMPLES: usize = 4;

/// One sweep point: the base run with one axis changed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointSpec {
    pub run: RunConfig,
    pub pca: PcaChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointOutcome {
    pub row: ResultRow,
    pub record: MetricsRecord,
    #[serde(skip)]
    pub skipped: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentReport {
    pub outcomes: Vec<PointOutcome>,
    /// (point label, error message) of points that failed.
    pub failures: Vec<(String, String)>,
    /// Points left out because they cannot run on this dataset.
    pub infeasible: Vec<String>,
}

impl ExperimentReport {
    pub fn total(&self) -> usize {
        self.outcomes.len() + self.failures.len()
    }
}

fn pca_of(run: &RunConfig) -> PcaChoice {
    match run.data.pca_components {
        Some(k) => PcaChoice::Components(k),
        None => PcaChoice::None(crate::config::NoPca::None),
    }
}

/// Expands the sweep axis of `cfg` into points, in list order.
pub fn points(cfg: &ExperimentConfig) -> Vec<PointSpec> {
    let base = &cfg.base;
    let with = |f: &dyn Fn(&mut RunConfig)| {
        let mut run = base.clone();
        f(&mut run);
        PointSpec { pca: pca_of(&run), run }
    };
    match cfg.kind {
        ExperimentKind::ModeComparison => cfg.modes.iter().map(|m| with(&|r| r.mode = *m)).collect(),
        ExperimentKind::WindowSweep => cfg
            .l_csi
            .iter()
            .map(|l| {
                with(&|r| {
                    r.data.window.l_csi = *l;
                    r.model.csi_patch_len = r.model.csi_patch_len.min(*l);
                    while *l % r.model.csi_patch_len != 0 {
                        r.model.csi_patch_len -= 1;
                    }
                })
            })
            .collect(),
        ExperimentKind::PcaAblation => cfg
            .pca_k
            .iter()
            .map(|k| with(&|r| r.data.pca_components = k.components()))
            .collect(),
        ExperimentKind::SensorStudy => cfg
            .sensor_subsets
            .iter()
            .map(|s| with(&|r| r.data.sensor_ids = Some(s.clone())))
            .collect(),
    }
}

fn point_label(p: &PointSpec) -> String {
    format!(
        "mode={} L={} k={} sensors={}",
        p.run.mode,
        p.run.data.window.l_csi,
        p.pca.label(),
        p.run.data.sensor_ids.as_deref().map(sensors_label).unwrap_or_else(|| "all".into())
    )
}

/// Hash identifying a point's result row.
pub fn point_hash(cfg: &ExperimentConfig, p: &PointSpec) -> String {
    config_hash(&serde_json::json!({
        "experiment": cfg.name,
        "kind": cfg.kind,
        "dataset": cfg.dataset,
        "run": p.run,
        "focus_pedestrian": cfg.focus_pedestrian,
    }))
}

fn run_json(output: &Path, run_id: &str) -> PathBuf {
    output.join("runs").join(format!("{run_id}.json"))
}

fn infeasible_reason(ds: &Dataset, cfg: &ExperimentConfig, p: &PointSpec) -> Option<String> {
    let min_csi = ds.csi.iter().map(|c| c.len()).min().unwrap_or(0);
    if p.run.data.window.l_csi > min_csi {
        return Some(format!("L_csi {} exceeds the {min_csi} CSI frames available", p.run.data.window.l_csi));
    }
    if let Some(k) = p.run.data.pca_components {
        let n_sc = ds.manifest.channel.n_subcarriers;
        if k > n_sc {
            return Some(format!("PCA k={k} exceeds the {n_sc} subcarriers"));
        }
    }
    let _ = cfg;
    None
}

fn run_point(ds: &Dataset, cfg: &ExperimentConfig, p: &PointSpec, hash: &str) -> Result<PointOutcome> {
    let run_id = hash[..12].to_string();
    let prepared = pipeline::prepare(ds, &p.run)?;
    let mut trainer = pipeline::new_trainer(&prepared, &p.run)?;
    let seconds = pipeline::fit(&mut trainer, &prepared.train, |_, _, _| false)?;
    let net = trainer.net();
    let (eval, eval_index) = prepared.eval_split();
    let metrics = pipeline::sample_metrics(net, eval, p.run.mode)?;
    let restored = pipeline::restore(net, eval, p.run.mode)?;

    let footprint_mse = match cfg.focus_pedestrian {
        Some(ped) if cfg.kind == ExperimentKind::SensorStudy => {
            let images = ds.camera(p.run.data.camera_id).expect("validated by prepare");
            let fps = pipeline::pedestrian_footprints(
                &ds.manifest,
                &images.timestamps,
                p.run.data.camera_id,
                ped,
                eval_index,
                prepared.model.l_img,
            )?;
            pipeline::footprint_mse(&restored, eval, &fps)
        }
        _ => None,
    };

    let config_json = serde_json::to_value(&p.run).expect("run config serializes");
    let record = pipeline::record(&run_id, p.run.mode, config_json, &metrics)?;
    let row = ResultRow {
        experiment: cfg.name.clone(),
        kind: serde_json::to_value(cfg.kind).unwrap().as_str().unwrap_or_default().to_string(),
        run_id: run_id.clone(),
        mode: p.run.mode.to_string(),
        l_csi: p.run.data.window.l_csi,
        pca_k: p.pca.label(),
        sensors: sensors_label(&prepared.sensor_ids),
        n_params: net.count_parameters(),
        csi_input_params: prepared.model.csi_input_layer_params(),
        epochs: trainer.epochs_done(),
        train_seconds: seconds,
        mean_psnr: record.mean_psnr,
        mean_ssim: record.mean_ssim,
        footprint_mse,
        config_hash: hash.to_string(),
        seed: p.run.seed,
    };
    let outcome = PointOutcome {
        row,
        record,
        skipped: false,
    };

    let rows: Vec<GridRow> = eval
        .iter()
        .zip(&restored)
        .take(GRID_SAMPLES)
        .map(|(s, r)| GridRow {
            truth: s.truth.index_axis(ndarray::Axis(0), 0),
            defective: s.defective.index_axis(ndarray::Axis(0), 0),
            restored: r.index_axis(ndarray::Axis(0), 0),
            mask: &s.mask,
        })
        .collect();
    plots::sample_grid(&cfg.output.join("runs").join(format!("{run_id}_grid.png")), &rows)?;
    let json_path = run_json(&cfg.output, &run_id);
    let text = serde_json::to_string_pretty(&outcome).expect("outcome serializes");
    std::fs::write(&json_path, text).map_err(|e| CliError::io(&json_path, e))?;
    // the row goes last: its presence marks the point complete
    results::append(&cfg.output.join(RESULTS_FILE), &outcome.row)?;
    Ok(outcome)
}

fn load_outcome(output: &Path, hash: &str) -> Result<PointOutcome> {
    let path = run_json(output, &hash[..12]);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let mut o: PointOutcome =
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    o.skipped = true;
    Ok(o)
}

/// Runs every point of `cfg` not yet present in the results table.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let ds = pipeline::load_dataset(&cfg.dataset)?;
    for subset in &cfg.sensor_subsets {
        for id in subset {
            if ds.sensor(*id).is_none() {
                return Err(CliError::config(format!("sensor_subsets: sensor {id} is not in the dataset")));
            }
        }
    }
    std::fs::create_dir_all(cfg.output.join("runs")).map_err(|e| CliError::io(&cfg.output, e))?;
    let done = results::completed_hashes(&cfg.output.join(RESULTS_FILE))?;
    let mut report = ExperimentReport::default();
    for p in points(cfg) {
        let label = point_label(&p);
        if let Some(reason) = infeasible_reason(&ds, cfg, &p) {
            warn!("skipping {label}: {reason}");
            report.infeasible.push(label);
            continue;
        }
        let hash = point_hash(cfg, &p);
        if done.contains(&hash) {
            info!("{label}: already in the results table, skipping");
            match load_outcome(&cfg.output, &hash) {
                Ok(o) => report.outcomes.push(o),
                Err(e) => report.failures.push((label, e.to_string())),
            }
            continue;
        }
        info!("{label}: training");
        match run_point(&ds, cfg, &p, &hash) {
            Ok(o) => {
                info!(
                    "{label}: PSNR {:.3} dB, SSIM {:.4}",
                    o.record.mean_psnr, o.record.mean_ssim
                );
                report.outcomes.push(o);
            }
            Err(e) => {
                warn!("{label}: failed: {e}");
                report.failures.push((label, e.to_string()));
            }
        }
    }
    write_figures(cfg, &report)?;
    Ok(report)
}

fn write_figures(cfg: &ExperimentConfig, report: &ExperimentReport) -> Result<()> {
    let rows: Vec<&ResultRow> = report.outcomes.iter().map(|o| &o.row).collect();
    if rows.is_empty() {
        return Ok(());
    }
    let ssim: Vec<f64> = rows.iter().map(|r| r.mean_ssim).collect();
    match cfg.kind {
        ExperimentKind::WindowSweep => {
            let xs: Vec<f64> = rows.iter().map(|r| r.l_csi as f64).collect();
            let psnr: Vec<f64> = rows.iter().map(|r| r.mean_psnr).collect();
            plots::metric_curve(&cfg.output.join("metric_vs_l.png"), &xs, &psnr, &ssim)?;
            let curve: Vec<_> = rows
                .iter()
                .map(|r| serde_json::json!({"l_csi": r.l_csi, "mean_psnr": r.mean_psnr, "mean_ssim": r.mean_ssim}))
                .collect();
            write_json(&cfg.output.join("window_curve.json"), &curve)?;
        }
        ExperimentKind::ModeComparison => {
            plots::bar_chart(&cfg.output.join("modes_ssim.png"), &ssim)?;
            let mut ranked: Vec<&ResultRow> = rows.clone();
            ranked.sort_by(|a, b| b.mean_ssim.total_cmp(&a.mean_ssim));
            let ranking: Vec<_> = ranked
                .iter()
                .enumerate()
                .map(|(i, r)| serde_json::json!({"rank": i + 1, "mode": r.mode, "mean_ssim": r.mean_ssim, "mean_psnr": r.mean_psnr}))
                .collect();
            write_json(&cfg.output.join("mode_ranking.json"), &ranking)?;
        }
        ExperimentKind::PcaAblation => {
            plots::bar_chart(&cfg.output.join("pca_ssim.png"), &ssim)?;
            let table: Vec<_> = rows
                .iter()
                .map(|r| serde_json::json!({
                    "k": r.pca_k, "params": r.n_params, "csi_input_params": r.csi_input_params,
                    "train_seconds": r.train_seconds, "mean_psnr": r.mean_psnr, "mean_ssim": r.mean_ssim,
                }))
                .collect();
            write_json(&cfg.output.join("pca_table.json"), &table)?;
        }
        ExperimentKind::SensorStudy => {
            plots::bar_chart(&cfg.output.join("sensors_ssim.png"), &ssim)?;
            let table: Vec<_> = rows
                .iter()
                .map(|r| serde_json::json!({
                    "sensors": r.sensors, "mean_psnr": r.mean_psnr, "mean_ssim": r.mean_ssim,
                    "footprint_mse": r.footprint_mse,
                }))
                .collect();
            write_json(&cfg.output.join("sensor_table.json"), &table)?;
        }
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializes");
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn expect_kind(cfg: &ExperimentConfig, kind: ExperimentKind) -> Result<()> {
    if cfg.kind != kind {
        return Err(CliError::config(format!(
            "kind: expected {kind:?} for this runner, found {:?}",
            cfg.kind
        )));
    }
    Ok(())
}

/// Trains each mode under the same seed and windows.
pub fn run_mode_comparison(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    expect_kind(cfg, ExperimentKind::ModeComparison)?;
    run_experiment(cfg)
}

pub fn run_window_sweep(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    expect_kind(cfg, ExperimentKind::WindowSweep)?;
    run_experiment(cfg)
}

pub fn run_pca_ablation(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    expect_kind(cfg, ExperimentKind::PcaAblation)?;
    run_experiment(cfg)
}

pub fn run_sensor_study(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    expect_kind(cfg, ExperimentKind::SensorStudy)?;
    run_experiment(cfg)
}

/// Outcome of `mode` in a mode comparison, if it ran.
pub fn outcome_for_mode(report: &ExperimentReport, mode: Mode) -> Option<&PointOutcome> {
    report.outcomes.iter().find(|o| o.row.mode == mode.as_str())
}
