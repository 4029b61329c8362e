//! Dataset persistence, timestamp alignment and windowing.
//!
//! A dataset directory holds `manifest.json` plus headerless little-endian
//! binaries, one pair per stream:
//!
//! | file             | contents                                             |
//! |------------------|------------------------------------------------------|
//! | `camera<k>.img`  | float32 frames, shape `(T, H, W, 3)`                 |
//! | `camera<k>.ts`   | float64 timestamps, seconds from session start       |
//! | `sensor<id>.csi` | float32 (re, im) pairs, shape `(T, n_tx, n_rx, n_sc)`|
//! | `sensor<id>.ts`  | float64 timestamps                                   |
//!
//! Shapes live only in the manifest; loaders check byte counts against them.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2, Array4, ArrayView4, Axis};
use num_complex::Complex32;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masking::{self, MaskSpec};
use crate::scene_sim::{ChannelParams, PedestrianTrajectory, RenderStyle, RoomConfig};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const ELEMENT_F32: &str = "float32";
pub const ELEMENT_C64_INTERLEAVED: &str = "complex64-interleaved-float32";
pub const TIMESTAMP_F64: &str = "float64";
pub const LITTLE_ENDIAN: &str = "little";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEntry {
    pub id: u32,
    pub data_file: String,
    pub timestamp_file: String,
    pub shape: Vec<usize>,
    pub element_type: String,
    pub timestamp_type: String,
    pub byte_order: String,
    /// Clock offset of the stream relative to the session start, seconds.
    pub clock_offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub duration: f64,
    pub seed: u64,
    pub room: RoomConfig,
    pub scenarios: Vec<PedestrianTrajectory>,
    pub channel: ChannelParams,
    pub render: RenderStyle,
    pub image_streams: Vec<StreamEntry>,
    pub csi_streams: Vec<StreamEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsiSequence {
    pub sensor_id: u32,
    pub timestamps: Vec<f64>,
    /// (T, n_tx, n_rx, n_subcarriers)
    pub values: Array4<Complex32>,
}

impl CsiSequence {
    pub fn new(sensor_id: u32, timestamps: Vec<f64>, values: Array4<Complex32>) -> Result<Self> {
        check_timestamps(&timestamps, "CSI")?;
        if values.len_of(Axis(0)) != timestamps.len() {
            return Err(Error::Shape(format!(
                "sensor {sensor_id}: {} timestamps for {} CSI frames",
                timestamps.len(),
                values.len_of(Axis(0))
            )));
        }
        Ok(CsiSequence {
            sensor_id,
            timestamps,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSequence {
    pub camera_id: u32,
    pub timestamps: Vec<f64>,
    /// (T, H, W, 3), values in [0, 1]
    pub frames: Array4<f32>,
}

impl ImageSequence {
    pub fn new(camera_id: u32, timestamps: Vec<f64>, frames: Array4<f32>) -> Result<Self> {
        check_timestamps(&timestamps, "image")?;
        if frames.len_of(Axis(0)) != timestamps.len() {
            return Err(Error::Shape(format!(
                "camera {camera_id}: {} timestamps for {} frames",
                timestamps.len(),
                frames.len_of(Axis(0))
            )));
        }
        if frames.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Shape(format!(
                "camera {camera_id}: pixel values must lie in [0, 1]"
            )));
        }
        Ok(ImageSequence {
            camera_id,
            timestamps,
            frames,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }
}

fn check_timestamps(ts: &[f64], what: &str) -> Result<()> {
    if ts.iter().any(|t| !t.is_finite()) || ts.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Shape(format!(
            "{what} timestamps must be finite and strictly increasing"
        )));
    }
    Ok(())
}

/// Everything a dataset directory contains.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub images: Vec<ImageSequence>,
    pub csi: Vec<CsiSequence>,
}

impl Dataset {
    pub fn camera(&self, camera_id: u32) -> Option<&ImageSequence> {
        self.images.iter().find(|s| s.camera_id == camera_id)
    }

    pub fn sensor(&self, sensor_id: u32) -> Option<&CsiSequence> {
        self.csi.iter().find(|s| s.sensor_id == sensor_id)
    }
}

pub fn write_manifest(dir: &Path, manifest: &DatasetManifest) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    let version = raw
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Corrupt {
            path: path.clone(),
            reason: "missing format_version".into(),
        })?;
    if version != MANIFEST_VERSION as u64 {
        return Err(Error::ManifestVersion {
            found: version as u32,
            expected: MANIFEST_VERSION,
        });
    }
    serde_json::from_value(raw).map_err(|source| Error::Json { path, source })
}

fn read_exact_len(path: &Path, expected: usize) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            reason: format!("expected {expected} bytes, found {}", bytes.len()),
        });
    }
    Ok(bytes)
}

fn check_entry(entry: &StreamEntry, element_type: &str, rank: usize, path: &Path) -> Result<()> {
    let bad = |reason: String| Error::Corrupt {
        path: path.to_path_buf(),
        reason,
    };
    if entry.element_type != element_type {
        return Err(bad(format!(
            "element type {:?}, expected {element_type:?}",
            entry.element_type
        )));
    }
    if entry.byte_order != LITTLE_ENDIAN || entry.timestamp_type != TIMESTAMP_F64 {
        return Err(bad("only little-endian streams with float64 timestamps are supported".into()));
    }
    if entry.shape.len() != rank {
        return Err(bad(format!("shape {:?} is not rank {rank}", entry.shape)));
    }
    Ok(())
}

fn read_timestamps(path: &Path, count: usize) -> Result<Vec<f64>> {
    let bytes = read_exact_len(path, count * 8)?;
    let ts: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    check_timestamps(&ts, "stream").map_err(|e| Error::Corrupt {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(ts)
}

fn read_f32s(path: &Path, count: usize) -> Result<Vec<f32>> {
    let bytes = read_exact_len(path, count * 4)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn load_image_stream(dir: &Path, entry: &StreamEntry) -> Result<ImageSequence> {
    let data_path = dir.join(&entry.data_file);
    check_entry(entry, ELEMENT_F32, 4, &data_path)?;
    let shape = (entry.shape[0], entry.shape[1], entry.shape[2], entry.shape[3]);
    if shape.3 != 3 {
        return Err(Error::Corrupt {
            path: data_path,
            reason: format!("image channel count {} != 3", shape.3),
        });
    }
    let values = read_f32s(&data_path, entry.shape.iter().product())?;
    let ts = read_timestamps(&dir.join(&entry.timestamp_file), shape.0)?;
    let frames = Array4::from_shape_vec(shape, values).expect("length checked");
    ImageSequence::new(entry.id, ts, frames).map_err(|e| Error::Corrupt {
        path: data_path,
        reason: e.to_string(),
    })
}

pub fn load_csi_stream(dir: &Path, entry: &StreamEntry) -> Result<CsiSequence> {
    let data_path = dir.join(&entry.data_file);
    check_entry(entry, ELEMENT_C64_INTERLEAVED, 4, &data_path)?;
    let shape = (entry.shape[0], entry.shape[1], entry.shape[2], entry.shape[3]);
    let n: usize = entry.shape.iter().product();
    let raw = read_f32s(&data_path, 2 * n)?;
    let values: Vec<Complex32> = raw
        .chunks_exact(2)
        .map(|c| Complex32::new(c[0], c[1]))
        .collect();
    let ts = read_timestamps(&dir.join(&entry.timestamp_file), shape.0)?;
    let values = Array4::from_shape_vec(shape, values).expect("length checked");
    CsiSequence::new(entry.id, ts, values)
}

/// Loads every stream listed in `dir/manifest.json`.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let images = manifest
        .image_streams
        .iter()
        .map(|e| load_image_stream(dir, e))
        .collect::<Result<Vec<_>>>()?;
    let csi = manifest
        .csi_streams
        .iter()
        .map(|e| load_csi_stream(dir, e))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        manifest,
        images,
        csi,
    })
}

/// Imports CSI captured elsewhere: one CSV row per frame, the timestamp in
/// seconds followed by `2 * n_tx * n_rx * n_subcarriers` floats holding
/// interleaved (re, im) values in (tx, rx, subcarrier) row-major order. No
/// header row.
pub fn import_csi_csv(
    path: &Path,
    sensor_id: u32,
    n_tx: usize,
    n_rx: usize,
    n_subcarriers: usize,
) -> Result<CsiSequence> {
    let per_frame = n_tx * n_rx * n_subcarriers;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != 1 + 2 * per_frame {
            return Err(Error::Corrupt {
                path: path.to_path_buf(),
                reason: format!(
                    "row {}: expected {} columns, found {}",
                    row + 1,
                    1 + 2 * per_frame,
                    record.len()
                ),
            });
        }
        let parse = |i: usize| -> Result<f64> {
            record[i].parse::<f64>().map_err(|e| Error::Corrupt {
                path: path.to_path_buf(),
                reason: format!("row {}, column {}: {e}", row + 1, i + 1),
            })
        };
        timestamps.push(parse(0)?);
        for k in 0..per_frame {
            values.push(Complex32::new(parse(1 + 2 * k)? as f32, parse(2 + 2 * k)? as f32));
        }
    }
    if timestamps.is_empty() {
        return Err(Error::Empty("CSI CSV contains no rows"));
    }
    let values = Array4::from_shape_vec((timestamps.len(), n_tx, n_rx, n_subcarriers), values)
        .expect("row width checked");
    CsiSequence::new(sensor_id, timestamps, values).map_err(|e| Error::Corrupt {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Corrupt {
            path: path.to_path_buf(),
            reason: format!("{other:?}"),
        },
    }
}

/// For each image timestamp, the index of the nearest CSI timestamp, found by
/// binary search. Ties go to the earlier CSI frame; images outside the CSI
/// span clamp to the first or last CSI frame.
pub fn isochronize(image_ts: &[f64], csi_ts: &[f64]) -> Vec<usize> {
    if csi_ts.is_empty() {
        return Vec::new();
    }
    image_ts
        .iter()
        .map(|&t| {
            // first CSI index with timestamp >= t
            let hi = csi_ts.partition_point(|&c| c < t);
            if hi == 0 {
                0
            } else if hi == csi_ts.len() {
                hi - 1
            } else if t - csi_ts[hi - 1] <= csi_ts[hi] - t {
                hi - 1
            } else {
                hi
            }
        })
        .collect()
}

/// Window geometry for [`window_samples`]; lengths and stride in frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub l_img: usize,
    pub l_csi: usize,
    pub stride: usize,
}

/// Index bookkeeping of one window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowIndex {
    /// Position of the window in the stream of emitted samples.
    pub ordinal: usize,
    /// First image frame.
    pub image_start: usize,
    /// Per sensor: (image index, CSI index) for each image in the window.
    pub alignments: Vec<Vec<(usize, usize)>>,
    /// Per sensor: first CSI frame of the CSI window (inclusive).
    pub csi_starts: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SyncedSample {
    pub index: WindowIndex,
    /// (L_img, H, W, 3)
    pub gt_window: Array4<f32>,
    /// (L_img, H, W, 3)
    pub defective_window: Array4<f32>,
    /// (L_img, H, W), true = occluded
    pub mask_window: ndarray::Array3<bool>,
    /// Per sensor, (L_csi, n_tx, n_rx, n_subcarriers)
    pub csi_windows: Vec<Array4<Complex32>>,
}

/// Plans windows over `images` and `csi` without copying data. Windows start
/// every `stride` images; each CSI window holds the `l_csi` frames ending at
/// the CSI index aligned to the window's last image. Windows whose CSI span
/// would start before the first CSI frame are skipped.
pub fn plan_windows(
    images: &ImageSequence,
    csi: &[CsiSequence],
    cfg: WindowConfig,
) -> Result<Vec<WindowIndex>> {
    if cfg.l_img == 0 || cfg.l_csi == 0 || cfg.stride == 0 {
        return Err(Error::config("L_img, L_csi and stride must all be at least 1"));
    }
    if csi.is_empty() {
        return Err(Error::config("at least one CSI sequence is required"));
    }
    for seq in csi {
        if cfg.l_csi > seq.len() {
            return Err(Error::config(format!(
                "L_csi = {} exceeds the {} frames of sensor {}",
                cfg.l_csi,
                seq.len(),
                seq.sensor_id
            )));
        }
    }
    let maps: Vec<Vec<usize>> = csi
        .iter()
        .map(|seq| isochronize(&images.timestamps, &seq.timestamps))
        .collect();
    let mut out = Vec::new();
    let mut start = 0;
    while start + cfg.l_img <= images.len() {
        let last = start + cfg.l_img - 1;
        let fits = maps.iter().all(|m| m[last] + 1 >= cfg.l_csi);
        if fits {
            out.push(WindowIndex {
                ordinal: out.len(),
                image_start: start,
                alignments: maps
                    .iter()
                    .map(|m| (start..=last).map(|i| (i, m[i])).collect())
                    .collect(),
                csi_starts: maps.iter().map(|m| m[last] + 1 - cfg.l_csi).collect(),
            });
        }
        start += cfg.stride;
    }
    Ok(out)
}

/// Cuts a planned window out of the streams and applies the occlusion mask
/// for that window (one static mask per window, drawn from
/// `(mask.seed, ordinal)`).
pub fn assemble_sample(
    images: &ImageSequence,
    csi: &[CsiSequence],
    cfg: WindowConfig,
    mask: &MaskSpec,
    index: &WindowIndex,
) -> Result<SyncedSample> {
    let gt: ArrayView4<f32> = images
        .frames
        .slice(s![index.image_start..index.image_start + cfg.l_img, .., .., ..]);
    let (_, h, w, _) = gt.dim();
    let m: Array2<bool> = masking::build_mask_indexed(mask, (h, w), index.ordinal as u64);
    let defective = masking::apply_mask(&gt, &m, mask.fill_value)?;
    let mask_window = m
        .insert_axis(Axis(0))
        .broadcast((cfg.l_img, h, w))
        .expect("broadcast over frames")
        .to_owned();
    let csi_windows = csi
        .iter()
        .zip(&index.csi_starts)
        .map(|(seq, &s0)| seq.values.slice(s![s0..s0 + cfg.l_csi, .., .., ..]).to_owned())
        .collect();
    Ok(SyncedSample {
        index: index.clone(),
        gt_window: gt.to_owned(),
        defective_window: defective,
        mask_window,
        csi_windows,
    })
}

/// Lazily yields [`SyncedSample`]s for every window of [`plan_windows`].
pub fn window_samples<'a>(
    images: &'a ImageSequence,
    csi: &'a [CsiSequence],
    cfg: WindowConfig,
    mask: &'a MaskSpec,
) -> Result<impl Iterator<Item = Result<SyncedSample>> + 'a> {
    let plan = plan_windows(images, csi, cfg)?;
    Ok(plan
        .into_iter()
        .map(move |idx| assemble_sample(images, csi, cfg, mask, &idx)))
}

/// Path of a stream's data file inside a dataset directory.
pub fn stream_path(dir: &Path, entry: &StreamEntry) -> PathBuf {
    dir.join(&entry.data_file)
}
