#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use csi_inpaint::config::{ExperimentConfig, ExperimentKind, RunConfig, SimulateConfig};
use csi_inpaint::defaults;
use csi_inpaint_core::dataset_io::WindowConfig;
use csi_inpaint_core::masking::MaskSpec;
use csi_inpaint_core::scene_sim::{PedestrianTrajectory, Point};
use csi_inpaint_model::{Mode, ModelConfig, TrainConfig};

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_csi-inpaint"));
    c.env("RUST_LOG", "info");
    c
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn write_json<T: serde::Serialize>(path: &Path, v: &T) {
    std::fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

/// 16×16 camera, two sensors, 3 s of one walking loop.
pub fn tiny_sim() -> SimulateConfig {
    let mut cfg = defaults::simulate();
    cfg.room.camera_poses[0].image_size = (16, 16);
    cfg.room.sensor_poses.truncate(2);
    cfg.channel.n_subcarriers = 16;
    cfg.scenarios = vec![PedestrianTrajectory::ellipse_loop(
        0,
        [0.9, 0.1, 0.1],
        Point::new(3.0, 1.8),
        (1.0, 0.5),
        2.0,
        false,
        16,
    )];
    cfg.duration = 3.0;
    cfg
}

pub fn tiny_run(epochs: usize) -> RunConfig {
    let mut run = defaults::run();
    run.data.window = WindowConfig {
        l_img: 1,
        l_csi: 10,
        stride: 2,
    };
    run.data.mask = MaskSpec::rectangle(0.5, 3);
    run.data.pca_components = Some(3);
    run.data.test_fraction = 0.25;
    run.model = ModelConfig {
        patch_size: 4,
        embed_dim: 8,
        n_heads: 2,
        n_layers_img: 2,
        n_layers_csi: 1,
        attn_window: 2,
        csi_patch_len: 5,
        decoder_channels: vec![8, 8, 8],
        reduced_img: 4,
        reduced_csi: 4,
        ..ModelConfig::default()
    };
    run.train = TrainConfig {
        epochs,
        batch_size: 4,
        learning_rate: 3e-3,
        ..TrainConfig::default()
    };
    run.mode = Mode::Multimodal;
    run.seed = 11;
    run
}

pub fn tiny_experiment(dataset: &Path, output: &Path, kind: ExperimentKind) -> ExperimentConfig {
    ExperimentConfig {
        name: "tiny".into(),
        kind,
        dataset: dataset.to_path_buf(),
        output: output.to_path_buf(),
        base: tiny_run(2),
        ..defaults::experiment()
    }
}

/// Simulates the tiny dataset into `dir/ds` and returns its path.
pub fn tiny_dataset(dir: &Path, seed: u64) -> PathBuf {
    let cfg = dir.join(format!("sim{seed}.json"));
    write_json(&cfg, &tiny_sim());
    let out = dir.join(format!("ds{seed}"));
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", &seed.to_string()]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
