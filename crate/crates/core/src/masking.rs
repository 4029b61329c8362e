//! Occlusion masks and defective frames.

use ndarray::{Array2, Array4, ArrayView4, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskKind {
    Rectangle,
    Full,
    RandomBlocks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub kind: MaskKind,
    /// Occluded fraction in [0, 1]; ignored for [`MaskKind::Full`].
    pub coverage: f64,
    #[serde(default)]
    pub fill_value: f32,
    #[serde(default)]
    pub seed: u64,
}

impl MaskSpec {
    pub fn full() -> Self {
        MaskSpec {
            kind: MaskKind::Full,
            coverage: 1.0,
            fill_value: 0.0,
            seed: 0,
        }
    }

    pub fn rectangle(coverage: f64, seed: u64) -> Self {
        MaskSpec {
            kind: MaskKind::Rectangle,
            coverage,
            fill_value: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.coverage) {
            return Err(Error::config(format!(
                "mask coverage must be in [0, 1], got {}",
                self.coverage
            )));
        }
        if !(0.0..=1.0).contains(&self.fill_value) {
            return Err(Error::config("mask fill_value must be in [0, 1]"));
        }
        Ok(())
    }

    pub fn effective_coverage(&self) -> f64 {
        match self.kind {
            MaskKind::Full => 1.0,
            _ => self.coverage.clamp(0.0, 1.0),
        }
    }
}

/// Mask of shape `(h, w)` for `spec`, true = occluded.
pub fn build_mask(spec: &MaskSpec, shape: (usize, usize)) -> Array2<bool> {
    build_mask_indexed(spec, shape, 0)
}

/// As [`build_mask`], with the random placement drawn from
/// `(spec.seed, index)` so consecutive windows get different masks.
pub fn build_mask_indexed(spec: &MaskSpec, shape: (usize, usize), index: u64) -> Array2<bool> {
    let (h, w) = shape;
    let coverage = spec.effective_coverage();
    let mut mask = Array2::from_elem((h, w), false);
    if h == 0 || w == 0 {
        return mask;
    }
    if spec.kind == MaskKind::Full {
        mask.fill(true);
        return mask;
    }
    let target = (coverage * (h * w) as f64).round() as usize;
    if target == 0 {
        return mask;
    }
    let mut rng = seed::rng(spec.seed, "mask", &[index]);
    match spec.kind {
        MaskKind::Rectangle => {
            let (rh, rw) = rectangle_size(h, w, target);
            let top = rng.random_range(0..=h - rh);
            let left = rng.random_range(0..=w - rw);
            mask.slice_mut(ndarray::s![top..top + rh, left..left + rw])
                .fill(true);
        }
        MaskKind::RandomBlocks => {
            let block = (h.min(w) / 8).max(1);
            let mut cells: Vec<(usize, usize)> = (0..h.div_ceil(block))
                .flat_map(|by| (0..w.div_ceil(block)).map(move |bx| (by, bx)))
                .collect();
            cells.shuffle(&mut rng);
            let mut count = 0;
            for (by, bx) in cells {
                let ys = by * block..((by + 1) * block).min(h);
                let xs = bx * block..((bx + 1) * block).min(w);
                let size = ys.len() * xs.len();
                if count + size > target {
                    continue;
                }
                mask.slice_mut(ndarray::s![ys, xs]).fill(true);
                count += size;
            }
            // top up to the exact count with single pixels
            let mut free: Vec<(usize, usize)> = mask
                .indexed_iter()
                .filter(|(_, v)| !**v)
                .map(|(i, _)| i)
                .collect();
            free.shuffle(&mut rng);
            for idx in free.into_iter().take(target - count) {
                mask[idx] = true;
            }
        }
        MaskKind::Full => unreachable!(),
    }
    mask
}

/// Rectangle dimensions with area within 1% of the image size from `target`
/// pixels, as close to the image aspect ratio as possible. Falls back to the
/// smallest area error when no size meets the 1% band.
fn rectangle_size(h: usize, w: usize, target: usize) -> (usize, usize) {
    let tolerance = 0.01 * (h * w) as f64;
    let mut best: Option<((usize, usize), bool, f64, usize)> = None;
    for rh in 1..=h {
        let rw = ((target as f64 / rh as f64).round() as usize).clamp(1, w);
        let err = (rh * rw).abs_diff(target);
        let within = err as f64 <= tolerance;
        let aspect = (rh as f64 / h as f64 - rw as f64 / w as f64).abs();
        let better = match best {
            None => true,
            Some((_, b_within, b_aspect, b_err)) => match (within, b_within) {
                (true, false) => true,
                (false, true) => false,
                (true, true) => aspect < b_aspect,
                (false, false) => err < b_err,
            },
        };
        if better {
            best = Some(((rh, rw), within, aspect, err));
        }
    }
    best.expect("h >= 1").0
}

/// Sets occluded pixels of every frame to `fill` in all channels; other
/// pixels are copied unchanged. `frames` is (T, H, W, C).
pub fn apply_mask(frames: &ArrayView4<f32>, mask: &Array2<bool>, fill: f32) -> Result<Array4<f32>> {
    let (_, h, w, _) = frames.dim();
    if mask.dim() != (h, w) {
        return Err(Error::Shape(format!(
            "mask {:?} does not match frame size ({h}, {w})",
            mask.dim()
        )));
    }
    let mut out = frames.to_owned();
    for mut frame in out.axis_iter_mut(Axis(0)) {
        for ((y, x), &occluded) in mask.indexed_iter() {
            if occluded {
                frame.slice_mut(ndarray::s![y, x, ..]).fill(fill);
            }
        }
    }
    Ok(out)
}

pub fn occluded_fraction(mask: &Array2<bool>) -> f64 {
    mask.iter().filter(|v| **v).count() as f64 / mask.len().max(1) as f64
}
