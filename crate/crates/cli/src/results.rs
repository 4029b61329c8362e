//! Append-only results table shared by every sweep runner.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub kind: String,
    pub run_id: String,
    pub mode: String,
    pub l_csi: usize,
    pub pca_k: String,
    /// Sensor ids joined with '+'.
    pub sensors: String,
    pub n_params: usize,
    pub csi_input_params: usize,
    pub epochs: usize,
    pub train_seconds: f64,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    /// Masked-footprint MSE of the focus pedestrian; empty when not measured.
    pub footprint_mse: Option<f64>,
    pub config_hash: String,
    pub seed: u64,
}

pub fn sensors_label(ids: &[u32]) -> String {
    ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("+")
}

/// Appends one row under an exclusive lock, writing the header first when
/// the file is new.
pub fn append(path: &Path, row: &ResultRow) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut file = OpenOptions::new()
        .create(true)
        .read(true)
        .append(true)
        .open(path)
        .map_err(|e| CliError::io(path, e))?;
    file.lock().map_err(|e| CliError::io(path, e))?;
    let empty = file.seek(SeekFrom::End(0)).map_err(|e| CliError::io(path, e))? == 0;
    let mut buf = Vec::new();
    {
        let mut w = csv::WriterBuilder::new().has_headers(empty).from_writer(&mut buf);
        w.serialize(row).map_err(|e| CliError::Other(e.to_string()))?;
        w.flush().map_err(|e| CliError::io(path, e))?;
    }
    file.write_all(&buf).map_err(|e| CliError::io(path, e))?;
    file.sync_data().map_err(|e| CliError::io(path, e))?;
    file.unlock().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Vec<ResultRow>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(CliError::io(path, e)),
    };
    file.lock_shared().map_err(|e| CliError::io(path, e))?;
    let rows = csv::Reader::from_reader(&file)
        .deserialize()
        .collect::<std::result::Result<Vec<ResultRow>, _>>()
        .map_err(|e| CliError::io(path, std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string())));
    file.unlock().map_err(|e| CliError::io(path, e))?;
    rows
}

pub fn completed_hashes(path: &Path) -> Result<HashSet<String>> {
    Ok(read(path)?.into_iter().map(|r| r.config_hash).collect())
}
