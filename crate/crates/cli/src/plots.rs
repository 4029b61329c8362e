//! PNG figures: metric curves, bar charts and before/after sample grids.

use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::{Array2, ArrayView3};

use crate::error::{CliError, Result};

const BG: Rgb<u8> = Rgb([255, 255, 255]);
const AXIS: Rgb<u8> = Rgb([60, 60, 60]);
const PSNR_COLOR: Rgb<u8> = Rgb([31, 119, 180]);
const SSIM_COLOR: Rgb<u8> = Rgb([214, 39, 40]);

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    img.save(path)
        .map_err(|e| CliError::io(path, std::io::Error::other(e.to_string())))
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
    for s in 0..=steps {
        let x = x0 + (x1 - x0) * s / steps;
        let y = y0 + (y1 - y0) * s / steps;
        put(img, x, y, c);
    }
}

fn dot(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    for dy in -2..=2 {
        for dx in -2..=2 {
            put(img, x + dx, y + dy, c);
        }
    }
}

fn range(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if (hi - lo).abs() < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Two stacked panels (PSNR on top, SSIM below) against a shared x axis.
/// Each panel is scaled to its own value range.
pub fn metric_curve(path: &Path, xs: &[f64], psnr: &[f64], ssim: &[f64]) -> Result<()> {
    let (w, panel, pad) = (480i64, 160i64, 24i64);
    let mut img = RgbImage::from_pixel(w as u32, (2 * panel) as u32, BG);
    let (x_lo, x_hi) = range(xs);
    for (p, (values, color)) in [(psnr, PSNR_COLOR), (ssim, SSIM_COLOR)].into_iter().enumerate() {
        let top = p as i64 * panel;
        let (v_lo, v_hi) = range(values);
        line(&mut img, (pad, top + panel - pad), (w - pad, top + panel - pad), AXIS);
        line(&mut img, (pad, top + pad), (pad, top + panel - pad), AXIS);
        let to_px = |x: f64, v: f64| {
            let px = pad + ((x - x_lo) / (x_hi - x_lo) * (w - 2 * pad) as f64).round() as i64;
            let py = top + panel - pad - ((v - v_lo) / (v_hi - v_lo) * (panel - 2 * pad) as f64).round() as i64;
            (px, py)
        };
        let pts: Vec<_> = xs.iter().zip(values).map(|(x, v)| to_px(*x, *v)).collect();
        for pair in pts.windows(2) {
            line(&mut img, pair[0], pair[1], color);
        }
        for (x, y) in pts {
            dot(&mut img, x, y, color);
        }
    }
    save(&img, path)
}

/// One bar per value, scaled so the tallest bar fills the plot.
pub fn bar_chart(path: &Path, values: &[f64]) -> Result<()> {
    let (w, h, pad) = (80 + 60 * values.len() as u32, 240u32, 20u32);
    let mut img = RgbImage::from_pixel(w, h, BG);
    let hi = values.iter().copied().fold(0.0f64, f64::max).max(1e-12);
    line(&mut img, (pad as i64, (h - pad) as i64), ((w - pad) as i64, (h - pad) as i64), AXIS);
    for (i, v) in values.iter().enumerate() {
        let bar = ((v.max(0.0) / hi) * (h - 2 * pad) as f64).round() as u32;
        let x0 = pad + 20 + 60 * i as u32;
        for x in x0..x0 + 40 {
            for y in (h - pad - bar)..(h - pad) {
                img.put_pixel(x, y, PSNR_COLOR);
            }
        }
    }
    save(&img, path)
}

fn to_rgb(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// One row of the sample grid.
pub struct GridRow<'a> {
    pub truth: ArrayView3<'a, f32>,
    pub defective: ArrayView3<'a, f32>,
    pub restored: ArrayView3<'a, f32>,
    pub mask: &'a Array2<bool>,
}

pub const GRID_COLUMNS: usize = 4;

/// Columns: before (ground truth with the occluded area tinted), defective
/// input, restored output, ground truth.
pub fn sample_grid(path: &Path, rows: &[GridRow]) -> Result<()> {
    let Some(first) = rows.first() else {
        return Err(CliError::Other("no samples to draw".into()));
    };
    let (h, w, _) = first.truth.dim();
    let gap = 2u32;
    let cols = GRID_COLUMNS as u32;
    let mut img = RgbImage::from_pixel(
        cols * (w as u32 + gap) + gap,
        rows.len() as u32 * (h as u32 + gap) + gap,
        BG,
    );
    for (r, row) in rows.iter().enumerate() {
        let panels = [&row.truth, &row.defective, &row.restored, &row.truth];
        for (c, panel) in panels.iter().enumerate() {
            let ox = gap + c as u32 * (w as u32 + gap);
            let oy = gap + r as u32 * (h as u32 + gap);
            for y in 0..h {
                for x in 0..w {
                    let mut px = [0u8; 3];
                    for (k, p) in px.iter_mut().enumerate() {
                        let mut v = panel[[y, x, k]];
                        if c == 0 && row.mask[[y, x]] {
                            v = 0.6 * v + if k == 0 { 0.4 } else { 0.0 };
                        }
                        *p = to_rgb(v);
                    }
                    img.put_pixel(ox + x as u32, oy + y as u32, Rgb(px));
                }
            }
        }
    }
    save(&img, path)
}
