//! Building blocks over candle tensors. Image tensors are channels-last.

use candle_core::{Tensor, Var, D};

use crate::error::Result;
use crate::kernels::{Gelu, Im2Col3x3};
use crate::params::{Init, ParamStore};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct Linear {
    /// (in, out)
    weight: Var,
    bias: Option<Var>,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, name: &str, d_in: usize, d_out: usize, bias: bool) -> Result<Self> {
        let weight = ps.add(format!("{name}.weight"), &[d_in, d_out], Init::Uniform { fan_in: d_in })?;
        let bias = if bias {
            Some(ps.add(format!("{name}.bias"), &[d_out], Init::Const(0.0))?)
        } else {
            None
        };
        Ok(Linear { weight, bias })
    }

    pub fn weight(&self) -> &Var {
        &self.weight
    }

    pub fn bias(&self) -> Option<&Var> {
        self.bias.as_ref()
    }

    /// Applies to the last axis of `x`, any rank.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let d_in = *dims.last().expect("rank >= 1");
        let rows = x.elem_count() / d_in.max(1);
        let y = x.reshape((rows, d_in))?.matmul(self.weight.as_tensor())?;
        let y = match &self.bias {
            Some(b) => y.broadcast_add(b.as_tensor())?,
            None => y,
        };
        let mut out_dims = dims;
        *out_dims.last_mut().unwrap() = self.weight.dim(1)?;
        Ok(y.reshape(out_dims)?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: Var,
    beta: Var,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: ps.add(format!("{name}.gamma"), &[dim], Init::Const(1.0))?,
            beta: ps.add(format!("{name}.beta"), &[dim], Init::Const(0.0))?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + LN_EPS)?.sqrt()?)?;
        Ok(normed
            .broadcast_mul(self.gamma.as_tensor())?
            .broadcast_add(self.beta.as_tensor())?)
    }
}

pub fn gelu(x: &Tensor) -> Result<Tensor> {
    Ok(x.contiguous()?.apply_op1(Gelu)?)
}

pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    let s = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&s)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    // 0.5 * (1 + tanh(x / 2)) stays finite for any input
    Ok(((x * 0.5)?.tanh()? + 1.0)?.affine(0.5, 0.0)?)
}

/// Multi-head self-attention over `x` of shape (B, T, E). `mask`, if given,
/// is (G, T, T) and is added to the scores; batch row `b` uses mask `b % G`.
#[derive(Debug, Clone)]
pub struct Attention {
    qkv: Linear,
    proj: Linear,
    n_heads: usize,
}

impl Attention {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize, n_heads: usize) -> Result<Self> {
        Ok(Attention {
            qkv: Linear::new(ps, &format!("{name}.qkv"), dim, 3 * dim, true)?,
            proj: Linear::new(ps, &format!("{name}.proj"), dim, dim, true)?,
            n_heads,
        })
    }

    pub fn forward(&self, x: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        let (b, t, e) = x.dims3()?;
        let h = self.n_heads;
        let d = e / h;
        let qkv = self
            .qkv
            .forward(x)?
            .reshape((b, t, 3, h, d))?
            .permute((2, 0, 3, 1, 4))?;
        let q = qkv.get(0)?.contiguous()?;
        let k = qkv.get(1)?.contiguous()?;
        let v = qkv.get(2)?.contiguous()?;
        let scores = (q.matmul(&k.t()?.contiguous()?)? * (1.0 / (d as f64).sqrt()))?;
        let scores = match mask {
            Some(m) => {
                let g = m.dim(0)?;
                scores
                    .reshape((b / g, g, h, t, t))?
                    .broadcast_add(&m.unsqueeze(1)?)?
                    .reshape((b, h, t, t))?
            }
            None => scores,
        };
        let attn = softmax_last(&scores)?;
        let out = attn
            .matmul(&v)?
            .permute((0, 2, 1, 3))?
            .contiguous()?
            .reshape((b, t, e))?;
        self.proj.forward(&out)
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    fc1: Linear,
    fc2: Linear,
}

impl Mlp {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize, hidden: usize) -> Result<Self> {
        Ok(Mlp {
            fc1: Linear::new(ps, &format!("{name}.fc1"), dim, hidden, true)?,
            fc2: Linear::new(ps, &format!("{name}.fc2"), hidden, dim, true)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.fc2.forward(&gelu(&self.fc1.forward(x)?)?)
    }
}

/// Pre-norm block: `x + attn(ln(x))`, then `x + mlp(ln(x))`.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    norm1: LayerNorm,
    attn: Attention,
    norm2: LayerNorm,
    mlp: Mlp,
}

impl TransformerBlock {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize, n_heads: usize, mlp_ratio: usize) -> Result<Self> {
        Ok(TransformerBlock {
            norm1: LayerNorm::new(ps, &format!("{name}.norm1"), dim)?,
            attn: Attention::new(ps, &format!("{name}.attn"), dim, n_heads)?,
            norm2: LayerNorm::new(ps, &format!("{name}.norm2"), dim)?,
            mlp: Mlp::new(ps, &format!("{name}.mlp"), dim, dim * mlp_ratio)?,
        })
    }

    /// `x` is (B, T, E).
    pub fn forward(&self, x: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        let x = (x + self.attn.forward(&self.norm1.forward(x)?, mask)?)?;
        Ok((&x + self.mlp.forward(&self.norm2.forward(&x)?)?)?)
    }
}

/// 3x3 convolution with zero padding on (N, H, W, C): im2col then one matmul.
#[derive(Debug, Clone)]
pub struct Conv3x3 {
    /// (9 * c_in, c_out), taps ordered row-major then by input channel.
    weight: Var,
    bias: Var,
}

impl Conv3x3 {
    pub fn new(ps: &mut ParamStore, name: &str, c_in: usize, c_out: usize) -> Result<Self> {
        Ok(Conv3x3 {
            weight: ps.add(format!("{name}.weight"), &[9 * c_in, c_out], Init::Uniform { fan_in: 9 * c_in })?,
            bias: ps.add(format!("{name}.bias"), &[c_out], Init::Const(0.0))?,
        })
    }

    pub fn weight(&self) -> &Var {
        &self.weight
    }

    pub fn bias(&self) -> &Var {
        &self.bias
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, h, w, _) = x.dims4()?;
        let cols = x.contiguous()?.apply_op1(Im2Col3x3)?;
        let y = cols
            .matmul(self.weight.as_tensor())?
            .broadcast_add(self.bias.as_tensor())?;
        let c_out = self.weight.dim(1)?;
        Ok(y.reshape((n, h, w, c_out))?)
    }
}

/// Nearest-neighbour 2x upsampling of (N, H, W, C).
pub fn upsample2x(x: &Tensor) -> Result<Tensor> {
    let (n, h, w, c) = x.dims4()?;
    Ok(x
        .reshape((n, h, 1, w, 1, c))?
        .broadcast_as((n, h, 2, w, 2, c))?
        .reshape((n, 2 * h, 2 * w, c))?)
}

/// Mean over non-overlapping `f x f` blocks of (N, H, W, C).
pub fn avg_pool(x: &Tensor, f: usize) -> Result<Tensor> {
    let (n, h, w, c) = x.dims4()?;
    Ok(x
        .reshape((n, h / f, f, w / f, f, c))?
        .mean(4)?
        .mean(2)?)
}

/// Rearranges (N, H, W, C) into (N, H/p, W/p, p*p*C) non-overlapping
/// patches, each flattened row-major.
pub fn patchify(x: &Tensor, p: usize) -> Result<Tensor> {
    let (n, h, w, c) = x.dims4()?;
    Ok(x
        .reshape((n, h / p, p, w / p, p, c))?
        .permute((0, 1, 3, 2, 4, 5))?
        .contiguous()?
        .reshape((n, h / p, w / p, p * p * c))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device, IndexOp};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store() -> ParamStore {
        ParamStore::new(DType::F64, ChaCha8Rng::seed_from_u64(3))
    }

    #[test]
    fn linear_parameter_count() {
        let mut ps = store();
        Linear::new(&mut ps, "l", 4, 3, true).unwrap();
        assert_eq!(ps.count(), 15);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut ps = store();
        let conv = Conv3x3::new(&mut ps, "c", 2, 3).unwrap();
        let x = Tensor::from_vec(
            (0..2 * 5 * 4 * 2).map(|i| ((i * 37 % 11) as f64) / 11.0).collect::<Vec<_>>(),
            (2, 5, 4, 2),
            &Device::Cpu,
        )
        .unwrap();
        let y = conv.forward(&x).unwrap();
        let w = conv.weight.as_tensor().to_vec2::<f64>().unwrap();
        let xs: Vec<Vec<Vec<Vec<f64>>>> = (0..2)
            .map(|n| x.i(n).unwrap().to_vec3::<f64>().unwrap())
            .collect();
        for n in 0..2 {
            for i in 0..5i64 {
                for j in 0..4i64 {
                    for o in 0..3 {
                        let mut acc = 0.0;
                        for dy in 0..3i64 {
                            for dx in 0..3i64 {
                                let (yy, xx) = (i + dy - 1, j + dx - 1);
                                if !(0..5).contains(&yy) || !(0..4).contains(&xx) {
                                    continue;
                                }
                                for c in 0..2 {
                                    let tap = ((dy * 3 + dx) as usize) * 2 + c;
                                    acc += w[tap][o] * xs[n][yy as usize][xx as usize][c];
                                }
                            }
                        }
                        let got = y.i((n, i as usize, j as usize, o)).unwrap().to_scalar::<f64>().unwrap();
                        assert!((got - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn upsample_and_pool_are_inverse() {
        let x = Tensor::arange(0f64, 24.0, &Device::Cpu).unwrap().reshape((1, 2, 3, 4)).unwrap();
        let up = upsample2x(&x).unwrap();
        assert_eq!(up.dims(), &[1, 4, 6, 4]);
        assert_eq!(up.i((0, 3, 5)).unwrap().to_vec1::<f64>().unwrap(), x.i((0, 1, 2)).unwrap().to_vec1::<f64>().unwrap());
        let back = avg_pool(&up, 2).unwrap();
        assert_eq!(back.flatten_all().unwrap().to_vec1::<f64>().unwrap(), x.flatten_all().unwrap().to_vec1::<f64>().unwrap());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::new(&[[1f64, 2.0, 3.0], [1000.0, 0.0, -1000.0]], &Device::Cpu).unwrap();
        let s = softmax_last(&x).unwrap().sum(1).unwrap().to_vec1::<f64>().unwrap();
        for v in s {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_standardizes() {
        let mut ps = store();
        let ln = LayerNorm::new(&mut ps, "ln", 4).unwrap();
        let x = Tensor::new(&[[1f64, 2.0, 3.0, 10.0]], &Device::Cpu).unwrap();
        let y = ln.forward(&x).unwrap().to_vec2::<f64>().unwrap();
        let mean: f64 = y[0].iter().sum::<f64>() / 4.0;
        let var: f64 = y[0].iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
    }
}
