//! Starting-point configs printed by `--print-config`.

use std::f64::consts::PI;
use std::path::PathBuf;

use csi_inpaint_core::dataset_io::WindowConfig;
use csi_inpaint_core::masking::MaskSpec;
use csi_inpaint_core::preprocess::DEFAULT_VARIANCE_FLOOR;
use csi_inpaint_core::scene_sim::{
    CameraPose, ChannelParams, PedestrianTrajectory, Point, RenderStyle, RoomConfig, SensorPose,
};
use csi_inpaint_model::{Mode, ModelConfig, TrainConfig};

use crate::config::{
    DataConfig, ExperimentConfig, ExperimentKind, RunConfig, SimulateConfig, SCHEMA_VERSION,
};

/// A 6 m × 4 m room with one 64×64 camera on the near wall and a CSI
/// sensor in each corner.
pub fn desk_room(seed: u64) -> RoomConfig {
    RoomConfig {
        width: 6.0,
        depth: 4.0,
        camera_poses: vec![CameraPose {
            position: Point::new(3.0, 0.0),
            view_direction: Point::new(0.0, 1.0),
            field_of_view: PI / 2.0,
            image_size: (64, 64),
        }],
        sensor_poses: vec![
            SensorPose { sensor_id: 1, position: Point::new(0.2, 0.2) },
            SensorPose { sensor_id: 2, position: Point::new(5.8, 0.2) },
            SensorPose { sensor_id: 3, position: Point::new(0.2, 3.8) },
            SensorPose { sensor_id: 4, position: Point::new(5.8, 3.8) },
        ],
        tx_pose: Point::new(3.0, 3.9),
        seed,
    }
}

pub fn simulate() -> SimulateConfig {
    SimulateConfig {
        schema_version: SCHEMA_VERSION,
        room: desk_room(0),
        scenarios: vec![PedestrianTrajectory::ellipse_loop(
            0,
            [0.9, 0.1, 0.1],
            Point::new(3.0, 2.3),
            (1.5, 0.8),
            4.0,
            false,
            32,
        )],
        channel: ChannelParams::default(),
        render: RenderStyle::default(),
        duration: 12.0,
    }
}

pub fn run() -> RunConfig {
    let model = ModelConfig::default();
    RunConfig {
        schema_version: SCHEMA_VERSION,
        data: DataConfig {
            camera_id: 0,
            sensor_ids: None,
            window: WindowConfig {
                l_img: model.l_img,
                l_csi: model.l_csi,
                stride: model.l_img,
            },
            mask: MaskSpec::rectangle(0.9, 0),
            pca_components: Some(model.csi_feature_dim),
            variance_floor: DEFAULT_VARIANCE_FLOOR,
            test_fraction: 0.2,
        },
        model,
        train: TrainConfig::default(),
        mode: Mode::Multimodal,
        seed: 0,
    }
}

pub fn experiment() -> ExperimentConfig {
    ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        name: "window-sweep".into(),
        kind: ExperimentKind::WindowSweep,
        dataset: PathBuf::from("data/desk"),
        output: PathBuf::from("results/window-sweep"),
        base: run(),
        modes: Vec::new(),
        l_csi: vec![10, 50, 100, 150],
        pca_k: Vec::new(),
        sensor_subsets: Vec::new(),
        focus_pedestrian: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        simulate().room.validate().unwrap();
        run().validate().unwrap();
        experiment().validate().unwrap();
    }
}
