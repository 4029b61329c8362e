//! Synthetic scenes: pedestrians walking in a rectangular room, seen by
//! pinhole cameras and sensed by WiFi receivers.
//!
//! The channel model is a two-bounce multipath sum. Every (tx antenna,
//! rx antenna, subcarrier) entry is a line-of-sight term plus one reflection
//! per pedestrian with free-space `1/d` attenuation on each leg:
//!
//! ```text
//! H_k = a0 * exp(-j 2π d0 / λ_k)
//!     + Σ_p g_p * exp(-j 2π (d_tx→p + d_p→rx) / λ_k) / (d_tx→p * d_p→rx)
//!     + n,   n ~ CN(0, σ²)
//! ```
//!
//! Leg lengths are clamped to `min_path_length` so trajectories that graze
//! an antenna stay finite.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, Array3};
use num_complex::Complex32;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset_io::{self, DatasetManifest, StreamEntry, MANIFEST_VERSION};
use crate::error::{Error, Result};
use crate::seed;

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    fn sub(self, other: Point) -> Point {
        Point::new(self.x - other.x, self.y - other.y)
    }

    fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    fn lerp(self, other: Point, s: f64) -> Point {
        Point::new(
            self.x + (other.x - self.x) * s,
            self.y + (other.y - self.y) * s,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: Point,
    /// Unit vector along the optical axis, in the floor plane.
    pub view_direction: Point,
    /// Horizontal field of view in radians.
    pub field_of_view: f64,
    /// (height, width) in pixels.
    pub image_size: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorPose {
    pub sensor_id: u32,
    pub position: Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomConfig {
    pub width: f64,
    pub depth: f64,
    pub camera_poses: Vec<CameraPose>,
    pub sensor_poses: Vec<SensorPose>,
    pub tx_pose: Point,
    pub seed: u64,
}

impl RoomConfig {
    pub fn contains(&self, p: Point) -> bool {
        p.x >= 0.0 && p.x <= self.width && p.y >= 0.0 && p.y <= self.depth
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.depth > 0.0) {
            return Err(Error::config(format!(
                "room dimensions must be positive, got {}x{}",
                self.width, self.depth
            )));
        }
        if self.camera_poses.is_empty() {
            return Err(Error::config("room needs at least one camera"));
        }
        if self.sensor_poses.is_empty() {
            return Err(Error::config("room needs at least one CSI sensor"));
        }
        if !self.contains(self.tx_pose) {
            return Err(Error::config(format!(
                "transmitter at ({}, {}) lies outside the room",
                self.tx_pose.x, self.tx_pose.y
            )));
        }
        for (i, cam) in self.camera_poses.iter().enumerate() {
            if !self.contains(cam.position) {
                return Err(Error::config(format!("camera {i} lies outside the room")));
            }
            if !(cam.field_of_view > 0.0 && cam.field_of_view < PI) {
                return Err(Error::config(format!(
                    "camera {i}: field_of_view must be in (0, pi), got {}",
                    cam.field_of_view
                )));
            }
            if cam.image_size.0 == 0 || cam.image_size.1 == 0 {
                return Err(Error::config(format!("camera {i}: image size must be positive")));
            }
            let n = cam.view_direction.x.hypot(cam.view_direction.y);
            if (n - 1.0).abs() > 1e-6 {
                return Err(Error::config(format!(
                    "camera {i}: view_direction must be a unit vector (norm {n})"
                )));
            }
        }
        let mut ids: Vec<u32> = self.sensor_poses.iter().map(|s| s.sensor_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("sensor ids must be unique"));
        }
        for s in &self.sensor_poses {
            if !self.contains(s.position) {
                return Err(Error::config(format!(
                    "sensor {} lies outside the room",
                    s.sensor_id
                )));
            }
        }
        Ok(())
    }

    pub fn sensor(&self, sensor_id: u32) -> Option<&SensorPose> {
        self.sensor_poses.iter().find(|s| s.sensor_id == sensor_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Motion {
    ClockwiseLoop,
    CounterclockwiseLoop,
    StraightLine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub time: f64,
    pub position: Point,
}

/// A pedestrian's path. Straight-line motion holds the end positions outside
/// the waypoint time span; loop motions repeat forever, closing the polygon
/// back to the first waypoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PedestrianTrajectory {
    pub pedestrian_id: u32,
    pub color: [f32; 3],
    pub waypoints: Vec<Waypoint>,
    pub motion: Motion,
    /// Overrides [`ChannelParams::reflection_gain`] for this pedestrian.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reflection_gain: Option<f64>,
}

impl PedestrianTrajectory {
    /// A loop approximated by `n_vertices` points on an axis-aligned ellipse,
    /// traversed at constant angular rate once per `period`.
    pub fn ellipse_loop(
        pedestrian_id: u32,
        color: [f32; 3],
        center: Point,
        radii: (f64, f64),
        period: f64,
        clockwise: bool,
        n_vertices: usize,
    ) -> Self {
        let n = n_vertices.max(3);
        let sign = if clockwise { -1.0 } else { 1.0 };
        let waypoints = (0..n)
            .map(|i| {
                let theta = sign * 2.0 * PI * i as f64 / n as f64;
                Waypoint {
                    time: period * i as f64 / n as f64,
                    position: Point::new(
                        center.x + radii.0 * theta.cos(),
                        center.y + radii.1 * theta.sin(),
                    ),
                }
            })
            .collect();
        PedestrianTrajectory {
            pedestrian_id,
            color,
            waypoints,
            motion: if clockwise {
                Motion::ClockwiseLoop
            } else {
                Motion::CounterclockwiseLoop
            },
            reflection_gain: None,
        }
    }

    /// Loop along the corners of an axis-aligned rectangle, one side per
    /// quarter period.
    pub fn rectangle_loop(
        pedestrian_id: u32,
        color: [f32; 3],
        min: Point,
        max: Point,
        period: f64,
        clockwise: bool,
    ) -> Self {
        let mut corners = vec![
            min,
            Point::new(max.x, min.y),
            max,
            Point::new(min.x, max.y),
        ];
        if clockwise {
            corners[1..].reverse();
        }
        let waypoints = corners
            .into_iter()
            .enumerate()
            .map(|(i, position)| Waypoint {
                time: period * i as f64 / 4.0,
                position,
            })
            .collect();
        PedestrianTrajectory {
            pedestrian_id,
            color,
            waypoints,
            motion: if clockwise {
                Motion::ClockwiseLoop
            } else {
                Motion::CounterclockwiseLoop
            },
            reflection_gain: None,
        }
    }

    pub fn straight_line(pedestrian_id: u32, color: [f32; 3], waypoints: Vec<Waypoint>) -> Self {
        PedestrianTrajectory {
            pedestrian_id,
            color,
            waypoints,
            motion: Motion::StraightLine,
            reflection_gain: None,
        }
    }

    pub fn validate(&self, room: &RoomConfig) -> Result<()> {
        let id = self.pedestrian_id;
        if self.waypoints.is_empty() {
            return Err(Error::config(format!("pedestrian {id}: no waypoints")));
        }
        if self.waypoints.windows(2).any(|w| w[1].time <= w[0].time) {
            return Err(Error::config(format!(
                "pedestrian {id}: waypoint times must be strictly increasing"
            )));
        }
        for (i, w) in self.waypoints.iter().enumerate() {
            if !w.time.is_finite() || !room.contains(w.position) {
                return Err(Error::config(format!(
                    "pedestrian {id}: waypoint {i} at ({}, {}) lies outside the {}x{} room",
                    w.position.x, w.position.y, room.width, room.depth
                )));
            }
        }
        if self.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::config(format!(
                "pedestrian {id}: color channels must be in [0, 1]"
            )));
        }
        let area = signed_area(&self.waypoints);
        let contradicts = match self.motion {
            Motion::ClockwiseLoop => area > 0.0,
            Motion::CounterclockwiseLoop => area < 0.0,
            Motion::StraightLine => false,
        };
        if contradicts {
            return Err(Error::config(format!(
                "pedestrian {id}: waypoint orientation contradicts {:?}",
                self.motion
            )));
        }
        Ok(())
    }

    /// Loop period in seconds, `None` for straight-line motion.
    pub fn period(&self) -> Option<f64> {
        match self.motion {
            Motion::StraightLine => None,
            _ => Some(self.closed_path().1),
        }
    }

    /// Waypoints of the closed polygon (first vertex repeated at the end) and
    /// the loop period.
    fn closed_path(&self) -> (Vec<Waypoint>, f64) {
        let first = self.waypoints[0];
        let last = *self.waypoints.last().expect("validated non-empty");
        let n = self.waypoints.len();
        let mut path = self.waypoints.clone();
        if n == 1 {
            return (path, 0.0);
        }
        if last.position.distance(first.position) > 1e-12 {
            // closing leg takes the mean leg duration
            let closing = (last.time - first.time) / (n - 1) as f64;
            path.push(Waypoint {
                time: last.time + closing,
                position: first.position,
            });
        }
        let period = path.last().unwrap().time - first.time;
        (path, period)
    }

    /// Position at time `t`, seconds.
    pub fn position_at(&self, t: f64) -> Point {
        match self.motion {
            Motion::StraightLine => interpolate(&self.waypoints, t),
            Motion::ClockwiseLoop | Motion::CounterclockwiseLoop => {
                let (path, period) = self.closed_path();
                if period <= 0.0 {
                    return path[0].position;
                }
                let t0 = path[0].time;
                let tau = t0 + (t - t0).rem_euclid(period);
                interpolate(&path, tau)
            }
        }
    }
}

fn signed_area(waypoints: &[Waypoint]) -> f64 {
    let n = waypoints.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let a = waypoints[i].position;
        let b = waypoints[(i + 1) % n].position;
        acc += a.x * b.y - b.x * a.y;
    }
    acc / 2.0
}

fn interpolate(path: &[Waypoint], t: f64) -> Point {
    let first = path[0];
    let last = path[path.len() - 1];
    if t <= first.time {
        return first.position;
    }
    if t >= last.time {
        return last.position;
    }
    let i = path.partition_point(|w| w.time <= t);
    let (a, b) = (path[i - 1], path[i]);
    a.position
        .lerp(b.position, (t - a.time) / (b.time - a.time))
}

/// Samples `trajectory` at `rate` Hz for `duration` seconds: one position per
/// tick `k / rate`, `k = 0..round(duration * rate)`.
pub fn generate_trajectory(
    trajectory: &PedestrianTrajectory,
    room: &RoomConfig,
    duration: f64,
    rate: f64,
) -> Result<Vec<Point>> {
    if !(duration > 0.0) {
        return Err(Error::config(format!("duration must be positive, got {duration}")));
    }
    if !(rate > 0.0) {
        return Err(Error::config(format!("rate must be positive, got {rate}")));
    }
    trajectory.validate(room)?;
    let n = (duration * rate).round() as usize;
    Ok((0..n)
        .map(|k| trajectory.position_at(k as f64 / rate))
        .collect())
}

/// Pedestrian snapshot fed to the renderer and the channel model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PedestrianState {
    pub position: Point,
    pub color: [f32; 3],
    pub reflection_gain: f64,
}

/// States of every pedestrian at time `t`.
pub fn pedestrian_states(
    scenarios: &[PedestrianTrajectory],
    params: &ChannelParams,
    t: f64,
) -> Vec<PedestrianState> {
    scenarios
        .iter()
        .map(|s| PedestrianState {
            position: s.position_at(t),
            color: s.color,
            reflection_gain: s.reflection_gain.unwrap_or(params.reflection_gain),
        })
        .collect()
}

/// Appearance constants for the rasterizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderStyle {
    pub background: [f32; 3],
    /// Shoulder width of a pedestrian, meters.
    pub body_width: f64,
    pub body_height: f64,
    /// Height of every camera above the floor, meters.
    pub camera_height: f64,
    /// Pedestrians closer than this along the optical axis are not drawn.
    pub near_clip: f64,
}

impl Default for RenderStyle {
    fn default() -> Self {
        RenderStyle {
            background: [0.5, 0.5, 0.5],
            body_width: 0.5,
            body_height: 1.7,
            camera_height: 1.0,
            near_clip: 0.2,
        }
    }
}

/// Screen-space rectangle of a pedestrian; half-open pixel ranges, not yet
/// clipped to the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScreenRect {
    pub left: i64,
    pub right: i64,
    pub top: i64,
    pub bottom: i64,
    /// Distance along the optical axis, meters.
    pub depth: f64,
    /// Continuous horizontal image coordinate of the body center.
    pub center_u: f64,
}

impl ScreenRect {
    fn clipped(&self, height: usize, width: usize) -> (usize, usize, usize, usize) {
        let c = |v: i64, hi: usize| v.clamp(0, hi as i64) as usize;
        (
            c(self.top, height),
            c(self.bottom, height),
            c(self.left, width),
            c(self.right, width),
        )
    }
}

/// Pinhole projection of a pedestrian standing at `position`. Returns `None`
/// when the body center is behind the near clip or outside the horizontal
/// field of view.
pub fn project(camera: &CameraPose, position: Point, style: &RenderStyle) -> Option<ScreenRect> {
    let (height, width) = camera.image_size;
    let forward = camera.view_direction;
    let right = Point::new(forward.y, -forward.x);
    let rel = position.sub(camera.position);
    let depth = rel.dot(forward);
    if depth <= style.near_clip {
        return None;
    }
    let lateral = rel.dot(right);
    let half_fov_tan = (camera.field_of_view / 2.0).tan();
    if lateral.abs() > depth * half_fov_tan {
        return None;
    }
    let focal = (width as f64 / 2.0) / half_fov_tan;
    let center_u = width as f64 / 2.0 + focal * lateral / depth;
    let half_w = focal * style.body_width / depth / 2.0;
    let horizon = height as f64 / 2.0;
    let top = horizon - focal * (style.body_height - style.camera_height) / depth;
    let bottom = horizon + focal * style.camera_height / depth;
    Some(ScreenRect {
        left: (center_u - half_w).round() as i64,
        right: (center_u + half_w).round() as i64,
        top: top.round() as i64,
        bottom: bottom.round() as i64,
        depth,
        center_u,
    })
}

/// Pixels covered by a pedestrian at `position`, ignoring other pedestrians.
pub fn footprint(camera: &CameraPose, position: Point, style: &RenderStyle) -> Array2<bool> {
    let (height, width) = camera.image_size;
    let mut mask = Array2::from_elem((height, width), false);
    if let Some(rect) = project(camera, position, style) {
        let (t, b, l, r) = rect.clipped(height, width);
        mask.slice_mut(ndarray::s![t..b, l..r]).fill(true);
    }
    mask
}

/// Rasterizes one camera view as an (H, W, 3) image in [0, 1]: a uniform
/// background with one filled rectangle per visible pedestrian, far
/// pedestrians painted first.
pub fn render_frame(
    room: &RoomConfig,
    camera_index: usize,
    pedestrians: &[PedestrianState],
    style: &RenderStyle,
) -> Result<Array3<f32>> {
    let camera = room.camera_poses.get(camera_index).ok_or_else(|| {
        Error::config(format!(
            "camera index {camera_index} out of range ({} cameras)",
            room.camera_poses.len()
        ))
    })?;
    let (height, width) = camera.image_size;
    let mut frame = Array3::<f32>::zeros((height, width, 3));
    for (c, v) in style.background.iter().enumerate() {
        frame.slice_mut(ndarray::s![.., .., c]).fill(*v);
    }
    let mut visible: Vec<(ScreenRect, [f32; 3])> = pedestrians
        .iter()
        .filter_map(|p| project(camera, p.position, style).map(|r| (r, p.color)))
        .collect();
    visible.sort_by(|a, b| b.0.depth.total_cmp(&a.0.depth));
    for (rect, color) in visible {
        let (t, b, l, r) = rect.clipped(height, width);
        for y in t..b {
            for x in l..r {
                for c in 0..3 {
                    frame[[y, x, c]] = color[c];
                }
            }
        }
    }
    Ok(frame)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_subcarriers: usize,
    pub center_frequency_hz: f64,
    pub bandwidth_hz: f64,
    /// Amplitude of the line-of-sight term.
    pub los_amplitude: f64,
    /// Default pedestrian reflection coefficient. A free knob: nothing
    /// pins it to a physical value.
    pub reflection_gain: f64,
    pub noise_std: f64,
    pub csi_rate: f64,
    pub camera_rate: f64,
    pub min_path_length: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            n_tx: 1,
            n_rx: 1,
            n_subcarriers: 64,
            center_frequency_hz: 5.18e9,
            bandwidth_hz: 80e6,
            los_amplitude: 1.0,
            reflection_gain: 1.0,
            noise_std: 0.01,
            csi_rate: 100.0,
            camera_rate: 10.0,
            min_path_length: 0.1,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_tx == 0 || self.n_rx == 0 || self.n_subcarriers == 0 {
            return Err(Error::config(
                "n_tx, n_rx and n_subcarriers must all be at least 1",
            ));
        }
        if !(self.camera_rate > 0.0) || !(self.csi_rate > self.camera_rate) {
            return Err(Error::config(format!(
                "need csi_rate > camera_rate > 0, got csi_rate={} camera_rate={}",
                self.csi_rate, self.camera_rate
            )));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::config("noise_std must be non-negative"));
        }
        if !(self.center_frequency_hz > self.bandwidth_hz / 2.0) || !(self.bandwidth_hz >= 0.0) {
            return Err(Error::config("invalid carrier frequency / bandwidth"));
        }
        if !(self.min_path_length > 0.0) {
            return Err(Error::config("min_path_length must be positive"));
        }
        Ok(())
    }

    /// Subcarrier center frequencies: `n` equal bins spanning the band.
    pub fn subcarrier_frequencies(&self) -> Vec<f64> {
        let n = self.n_subcarriers as f64;
        let lo = self.center_frequency_hz - self.bandwidth_hz / 2.0;
        (0..self.n_subcarriers)
            .map(|k| lo + self.bandwidth_hz * (k as f64 + 0.5) / n)
            .collect()
    }

    pub fn carrier_wavelengths(&self) -> Vec<f64> {
        self.subcarrier_frequencies()
            .into_iter()
            .map(|f| SPEED_OF_LIGHT / f)
            .collect()
    }

    /// Half-wavelength antenna spacing at the center frequency.
    pub fn antenna_spacing(&self) -> f64 {
        SPEED_OF_LIGHT / self.center_frequency_hz / 2.0
    }
}

/// Antenna `index` of an array centered on `base`, laid out along x.
fn antenna_position(base: Point, index: usize, count: usize, spacing: f64) -> Point {
    let offset = (index as f64 - (count as f64 - 1.0) / 2.0) * spacing;
    Point::new(base.x + offset, base.y)
}

/// One CSI snapshot of shape (n_tx, n_rx, n_subcarriers) at sensor
/// `sensor_id`.
pub fn synth_csi_frame<R: Rng + ?Sized>(
    room: &RoomConfig,
    sensor_id: u32,
    pedestrians: &[PedestrianState],
    params: &ChannelParams,
    rng: &mut R,
) -> Result<Array3<Complex32>> {
    let sensor = room
        .sensor(sensor_id)
        .ok_or_else(|| Error::config(format!("unknown sensor id {sensor_id}")))?;
    let wavelengths = params.carrier_wavelengths();
    let spacing = params.antenna_spacing();
    let clamp = |d: f64| d.max(params.min_path_length);
    let noise = if params.noise_std > 0.0 {
        Some(Normal::new(0.0, params.noise_std / 2f64.sqrt()).expect("finite std"))
    } else {
        None
    };

    let mut out = Array3::<Complex32>::zeros((params.n_tx, params.n_rx, params.n_subcarriers));
    for a in 0..params.n_tx {
        let tx = antenna_position(room.tx_pose, a, params.n_tx, spacing);
        for b in 0..params.n_rx {
            let rx = antenna_position(sensor.position, b, params.n_rx, spacing);
            let d0 = clamp(tx.distance(rx));
            let legs: Vec<(f64, f64)> = pedestrians
                .iter()
                .map(|p| {
                    let d1 = clamp(tx.distance(p.position));
                    let d2 = clamp(p.position.distance(rx));
                    (d1 + d2, p.reflection_gain / (d1 * d2))
                })
                .collect();
            for (k, &lambda) in wavelengths.iter().enumerate() {
                let phase = |d: f64| num_complex::Complex64::from_polar(1.0, -2.0 * PI * d / lambda);
                let mut h = phase(d0) * params.los_amplitude;
                for &(path, amp) in &legs {
                    h += phase(path) * amp;
                }
                if let Some(dist) = &noise {
                    h.re += dist.sample(rng);
                    h.im += dist.sample(rng);
                }
                out[[a, b, k]] = Complex32::new(h.re as f32, h.im as f32);
            }
        }
    }
    Ok(out)
}

/// Renders every camera stream and synthesizes every sensor stream for
/// `duration` seconds, writing the dataset layout into `out_dir`.
///
/// Camera frames are stamped at `i / camera_rate`. Each sensor's CSI clock is
/// offset by a uniform draw in `[0, 1 / csi_rate)`, so the two streams are
/// never phase-aligned. CSI noise for frame `j` of sensor `s` comes from the
/// sub-seed `(seed, "csi-noise", s, j)`.
pub fn generate_dataset(
    room: &RoomConfig,
    scenarios: &[PedestrianTrajectory],
    params: &ChannelParams,
    style: &RenderStyle,
    duration: f64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    room.validate()?;
    params.validate()?;
    for s in scenarios {
        s.validate(room)?;
    }
    if !(duration > 0.0) {
        return Err(Error::config(format!("duration must be positive, got {duration}")));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let n_img = (duration * params.camera_rate).round() as usize;
    let n_csi = (duration * params.csi_rate).round() as usize;
    if n_img == 0 || n_csi == 0 {
        return Err(Error::config("duration too short for a single frame"));
    }

    let mut image_streams = Vec::new();
    for (k, camera) in room.camera_poses.iter().enumerate() {
        let (h, w) = camera.image_size;
        let data_file = format!("camera{k}.img");
        let ts_file = format!("camera{k}.ts");
        let mut data = Writer::create(&out_dir.join(&data_file))?;
        let mut ts = Writer::create(&out_dir.join(&ts_file))?;
        for i in 0..n_img {
            let t = i as f64 / params.camera_rate;
            let frame = render_frame(room, k, &pedestrian_states(scenarios, params, t), style)?;
            for v in frame.iter() {
                data.put(&v.to_le_bytes())?;
            }
            ts.put(&t.to_le_bytes())?;
        }
        data.finish()?;
        ts.finish()?;
        image_streams.push(StreamEntry {
            id: k as u32,
            data_file,
            timestamp_file: ts_file,
            shape: vec![n_img, h, w, 3],
            element_type: dataset_io::ELEMENT_F32.to_string(),
            timestamp_type: dataset_io::TIMESTAMP_F64.to_string(),
            byte_order: dataset_io::LITTLE_ENDIAN.to_string(),
            clock_offset: 0.0,
        });
    }

    let mut csi_streams = Vec::new();
    for sensor in &room.sensor_poses {
        let id = sensor.sensor_id;
        let mut offset_rng = seed::rng(room.seed, "csi-clock-offset", &[id as u64]);
        let offset = offset_rng.random_range(0.0..1.0) / params.csi_rate;
        let data_file = format!("sensor{id}.csi");
        let ts_file = format!("sensor{id}.ts");
        let mut data = Writer::create(&out_dir.join(&data_file))?;
        let mut ts = Writer::create(&out_dir.join(&ts_file))?;
        for j in 0..n_csi {
            let t = offset + j as f64 / params.csi_rate;
            let mut noise_rng = seed::rng(room.seed, "csi-noise", &[id as u64, j as u64]);
            let states = pedestrian_states(scenarios, params, t);
            let frame = synth_csi_frame(room, id, &states, params, &mut noise_rng)?;
            for z in frame.iter() {
                data.put(&z.re.to_le_bytes())?;
                data.put(&z.im.to_le_bytes())?;
            }
            ts.put(&t.to_le_bytes())?;
        }
        data.finish()?;
        ts.finish()?;
        csi_streams.push(StreamEntry {
            id,
            data_file,
            timestamp_file: ts_file,
            shape: vec![n_csi, params.n_tx, params.n_rx, params.n_subcarriers],
            element_type: dataset_io::ELEMENT_C64_INTERLEAVED.to_string(),
            timestamp_type: dataset_io::TIMESTAMP_F64.to_string(),
            byte_order: dataset_io::LITTLE_ENDIAN.to_string(),
            clock_offset: offset,
        });
    }

    let manifest = DatasetManifest {
        format_version: MANIFEST_VERSION,
        duration,
        seed: room.seed,
        room: room.clone(),
        scenarios: scenarios.to_vec(),
        channel: params.clone(),
        render: style.clone(),
        image_streams,
        csi_streams,
    };
    dataset_io::write_manifest(out_dir, &manifest)?;
    Ok(manifest)
}

struct Writer {
    path: std::path::PathBuf,
    inner: BufWriter<File>,
}

impl Writer {
    fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Writer {
            path: path.to_path_buf(),
            inner: BufWriter::new(file),
        })
    }

    fn put(&mut self, bytes: &[u8]) -> Result<()> {
        self.inner
            .write_all(bytes)
            .map_err(|e| Error::io(&self.path, e))
    }

    fn finish(mut self) -> Result<()> {
        self.inner.flush().map_err(|e| Error::io(&self.path, e))
    }
}
