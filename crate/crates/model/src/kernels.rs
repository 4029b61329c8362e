//! Hand-written CPU kernels where composing generic tensor ops is too slow.

use std::ops::AddAssign;

use candle_core::{CpuStorage, CustomOp1, Layout, Shape, Tensor};

fn contiguous<'a, T>(data: &'a [T], layout: &Layout) -> candle_core::Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((start, end)) => Ok(&data[start..end]),
        None => candle_core::bail!("kernel input must be contiguous"),
    }
}

/// Gathers the 3x3 zero-padded neighbourhood of every pixel of a
/// (N, H, W, C) tensor into rows of a (N*H*W, 9*C) matrix, taps row-major.
pub struct Im2Col3x3;

/// Adjoint of [`Im2Col3x3`]: scatters (N*H*W, 9*C) rows back onto
/// (N, H, W, C), summing overlaps.
struct Col2Im3x3 {
    dims: (usize, usize, usize, usize),
}

fn im2col<T: Copy + Default>(src: &[T], (n, h, w, c): (usize, usize, usize, usize)) -> Vec<T> {
    let mut out = vec![T::default(); n * h * w * 9 * c];
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let row = ((b * h + y) * w + x) * 9 * c;
                for dy in 0..3 {
                    let yy = y + dy;
                    if yy < 1 || yy > h {
                        continue;
                    }
                    for dx in 0..3 {
                        let xx = x + dx;
                        if xx < 1 || xx > w {
                            continue;
                        }
                        let from = ((b * h + yy - 1) * w + xx - 1) * c;
                        let to = row + (dy * 3 + dx) * c;
                        out[to..to + c].copy_from_slice(&src[from..from + c]);
                    }
                }
            }
        }
    }
    out
}

fn col2im<T: Copy + Default + AddAssign>(src: &[T], (n, h, w, c): (usize, usize, usize, usize)) -> Vec<T> {
    let mut out = vec![T::default(); n * h * w * c];
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let row = ((b * h + y) * w + x) * 9 * c;
                for dy in 0..3 {
                    let yy = y + dy;
                    if yy < 1 || yy > h {
                        continue;
                    }
                    for dx in 0..3 {
                        let xx = x + dx;
                        if xx < 1 || xx > w {
                            continue;
                        }
                        let to = ((b * h + yy - 1) * w + xx - 1) * c;
                        let from = row + (dy * 3 + dx) * c;
                        for k in 0..c {
                            out[to + k] += src[from + k];
                        }
                    }
                }
            }
        }
    }
    out
}

impl CustomOp1 for Im2Col3x3 {
    fn name(&self) -> &'static str {
        "im2col3x3"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let dims = layout.shape().dims4()?;
        let (n, h, w, c) = dims;
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(im2col(contiguous(v, layout)?, dims)),
            CpuStorage::F64(v) => CpuStorage::F64(im2col(contiguous(v, layout)?, dims)),
            _ => candle_core::bail!("im2col3x3 supports f32 and f64 only"),
        };
        Ok((out, Shape::from((n * h * w, 9 * c))))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let op = Col2Im3x3 { dims: arg.dims4()? };
        Ok(Some(grad_res.contiguous()?.apply_op1_no_bwd(&op)?))
    }
}

impl CustomOp1 for Col2Im3x3 {
    fn name(&self) -> &'static str {
        "col2im3x3"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(col2im(contiguous(v, layout)?, self.dims)),
            CpuStorage::F64(v) => CpuStorage::F64(col2im(contiguous(v, layout)?, self.dims)),
            _ => candle_core::bail!("col2im3x3 supports f32 and f64 only"),
        };
        Ok((out, Shape::from(self.dims)))
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044715;

/// Tanh-approximated GELU with a fused derivative.
pub struct Gelu;

struct GeluDerivative;

macro_rules! gelu_fns {
    ($value:ident, $slope:ident, $t:ty) => {
        fn $value(x: $t) -> $t {
            let (c, a) = (GELU_C as $t, GELU_A as $t);
            0.5 * x * (1.0 + (c * (x + a * x * x * x)).tanh())
        }

        fn $slope(x: $t) -> $t {
            let (c, a) = (GELU_C as $t, GELU_A as $t);
            let t = (c * (x + a * x * x * x)).tanh();
            0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * a * x * x)
        }
    };
}

gelu_fns!(gelu_value, gelu_slope, f64);
gelu_fns!(gelu_value_f32, gelu_slope_f32, f32);

fn map_storage(
    storage: &CpuStorage,
    layout: &Layout,
    name: &str,
    f32_fn: fn(f32) -> f32,
    f64_fn: fn(f64) -> f64,
) -> candle_core::Result<(CpuStorage, Shape)> {
    let out = match storage {
        CpuStorage::F32(v) => CpuStorage::F32(contiguous(v, layout)?.iter().map(|x| f32_fn(*x)).collect()),
        CpuStorage::F64(v) => CpuStorage::F64(contiguous(v, layout)?.iter().map(|x| f64_fn(*x)).collect()),
        _ => candle_core::bail!("{name} supports f32 and f64 only"),
    };
    Ok((out, layout.shape().clone()))
}

impl CustomOp1 for Gelu {
    fn name(&self) -> &'static str {
        "gelu-tanh"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        map_storage(storage, layout, self.name(), gelu_value_f32, gelu_value)
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let slope = arg.contiguous()?.apply_op1_no_bwd(&GeluDerivative)?;
        Ok(Some(slope.mul(grad_res)?))
    }
}

impl CustomOp1 for GeluDerivative {
    fn name(&self) -> &'static str {
        "gelu-tanh-derivative"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        map_storage(storage, layout, self.name(), gelu_slope_f32, gelu_slope)
    }
}

/// Sum over every fully contained `n x n` window of (N, H, W, C), giving
/// (N, H-n+1, W-n+1, C).
pub struct BoxSum {
    pub n: usize,
}

/// Adjoint of [`BoxSum`]: spreads each window value back over its window.
struct BoxSpread {
    n: usize,
    dims: (usize, usize, usize, usize),
}

fn box_sum<T: Copy + Default + AddAssign + std::ops::Sub<Output = T>>(
    src: &[T],
    (b, h, w, c): (usize, usize, usize, usize),
    n: usize,
) -> Vec<T> {
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    // rows first: (b, oh, w, c)
    let mut rows = vec![T::default(); b * oh * w * c];
    for i in 0..b {
        for x in 0..w {
            for k in 0..c {
                let at = |y: usize| ((i * h + y) * w + x) * c + k;
                let mut acc = T::default();
                for y in 0..n {
                    acc += src[at(y)];
                }
                rows[((i * oh) * w + x) * c + k] = acc;
                for y in 1..oh {
                    acc += src[at(y + n - 1)];
                    acc = acc - src[at(y - 1)];
                    rows[((i * oh + y) * w + x) * c + k] = acc;
                }
            }
        }
    }
    let mut out = vec![T::default(); b * oh * ow * c];
    for i in 0..b {
        for y in 0..oh {
            for k in 0..c {
                let at = |x: usize| ((i * oh + y) * w + x) * c + k;
                let mut acc = T::default();
                for x in 0..n {
                    acc += rows[at(x)];
                }
                out[((i * oh + y) * ow) * c + k] = acc;
                for x in 1..ow {
                    acc += rows[at(x + n - 1)];
                    acc = acc - rows[at(x - 1)];
                    out[((i * oh + y) * ow + x) * c + k] = acc;
                }
            }
        }
    }
    out
}

fn box_spread<T: Copy + Default + AddAssign>(
    src: &[T],
    (b, h, w, c): (usize, usize, usize, usize),
    n: usize,
) -> Vec<T> {
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    // columns first: (b, oh, w, c)
    let mut cols = vec![T::default(); b * oh * w * c];
    for i in 0..b {
        for y in 0..oh {
            for x in 0..ow {
                let from = ((i * oh + y) * ow + x) * c;
                for dx in 0..n {
                    let to = ((i * oh + y) * w + x + dx) * c;
                    for k in 0..c {
                        cols[to + k] += src[from + k];
                    }
                }
            }
        }
    }
    let mut out = vec![T::default(); b * h * w * c];
    for i in 0..b {
        for y in 0..oh {
            for dy in 0..n {
                let from = ((i * oh + y) * w) * c;
                let to = ((i * h + y + dy) * w) * c;
                for j in 0..w * c {
                    out[to + j] += cols[from + j];
                }
            }
        }
    }
    out
}

impl CustomOp1 for BoxSum {
    fn name(&self) -> &'static str {
        "box-sum"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let dims = layout.shape().dims4()?;
        let (b, h, w, c) = dims;
        if self.n == 0 || h < self.n || w < self.n {
            candle_core::bail!("box window {} does not fit {h}x{w}", self.n);
        }
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(box_sum(contiguous(v, layout)?, dims, self.n)),
            CpuStorage::F64(v) => CpuStorage::F64(box_sum(contiguous(v, layout)?, dims, self.n)),
            _ => candle_core::bail!("box-sum supports f32 and f64 only"),
        };
        Ok((out, Shape::from((b, h + 1 - self.n, w + 1 - self.n, c))))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let op = BoxSpread {
            n: self.n,
            dims: arg.dims4()?,
        };
        Ok(Some(grad_res.contiguous()?.apply_op1_no_bwd(&op)?))
    }
}

impl CustomOp1 for BoxSpread {
    fn name(&self) -> &'static str {
        "box-spread"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(box_spread(contiguous(v, layout)?, self.dims, self.n)),
            CpuStorage::F64(v) => CpuStorage::F64(box_spread(contiguous(v, layout)?, self.dims, self.n)),
            _ => candle_core::bail!("box-spread supports f32 and f64 only"),
        };
        Ok((out, Shape::from(self.dims)))
    }
}
