//! The inpainting network: patch encoding, windowed-attention image
//! encoder, CSI encoder, aggregation and convolutional decoder.

use candle_core::{DType, Device, Tensor, Var};
use csi_inpaint_core::seed;

use crate::config::{Mode, ModelConfig};
use crate::error::{ModelError, Result};
use crate::layers::{avg_pool, gelu, patchify, sigmoid, upsample2x, Conv3x3, LayerNorm, Linear, TransformerBlock};
use crate::params::{Init, ParamStore};

const MASKED_SCORE: f64 = -1e9;

/// Device-side batch. Image tensors are channels-last.
#[derive(Debug, Clone)]
pub struct Batch {
    /// (B, L_img, H, W, 3)
    pub defective: Tensor,
    /// (B, H, W), 1 where occluded.
    pub mask: Tensor,
    /// (B, n_sensors, L_csi, csi_feature_dim)
    pub csi: Tensor,
}

impl Batch {
    pub fn batch_size(&self) -> Result<usize> {
        Ok(self.defective.dim(0)?)
    }
}

/// One block of windowed attention, optionally on a half-window-shifted grid.
#[derive(Debug, Clone)]
struct SwinBlock {
    block: TransformerBlock,
    shift: usize,
    /// (n_windows, ws*ws, ws*ws) additive mask for shifted windows.
    mask: Option<Tensor>,
}

fn roll_left(x: &Tensor, s: usize, dim: usize) -> Result<Tensor> {
    let n = x.dim(dim)?;
    if s % n == 0 {
        return Ok(x.clone());
    }
    let s = s % n;
    Ok(Tensor::cat(&[x.narrow(dim, s, n - s)?, x.narrow(dim, 0, s)?], dim)?)
}

fn roll_right(x: &Tensor, s: usize, dim: usize) -> Result<Tensor> {
    let n = x.dim(dim)?;
    roll_left(x, n - s % n, dim)
}

/// (N, gh, gw, E) -> (N * nW, ws*ws, E)
fn partition_windows(x: &Tensor, ws: usize) -> Result<Tensor> {
    let (n, gh, gw, e) = x.dims4()?;
    Ok(x.reshape((n, gh / ws, ws, gw / ws, ws, e))?
        .permute((0, 1, 3, 2, 4, 5))?
        .contiguous()?
        .reshape((n * (gh / ws) * (gw / ws), ws * ws, e))?)
}

fn merge_windows(x: &Tensor, ws: usize, n: usize, gh: usize, gw: usize) -> Result<Tensor> {
    let e = x.dim(2)?;
    Ok(x.reshape((n, gh / ws, gw / ws, ws, ws, e))?
        .permute((0, 1, 3, 2, 4, 5))?
        .contiguous()?
        .reshape((n, gh, gw, e))?)
}

/// Additive mask that stops tokens wrapped around by the cyclic shift from
/// attending to tokens they were not adjacent to.
fn shifted_window_mask(gh: usize, gw: usize, ws: usize, shift: usize, dtype: DType) -> Result<Tensor> {
    let region = |i: usize, n: usize| -> usize {
        if i < n - ws {
            0
        } else if i < n - shift {
            1
        } else {
            2
        }
    };
    let (nh, nw) = (gh / ws, gw / ws);
    let t = ws * ws;
    let mut data = Vec::with_capacity(nh * nw * t * t);
    for wy in 0..nh {
        for wx in 0..nw {
            let labels: Vec<usize> = (0..t)
                .map(|k| {
                    let (y, x) = (wy * ws + k / ws, wx * ws + k % ws);
                    region(y, gh) * 3 + region(x, gw)
                })
                .collect();
            for a in &labels {
                for b in &labels {
                    data.push(if a == b { 0.0 } else { MASKED_SCORE });
                }
            }
        }
    }
    Ok(Tensor::from_vec(data, (nh * nw, t, t), &Device::Cpu)?.to_dtype(dtype)?)
}

impl SwinBlock {
    fn forward(&self, x: &Tensor, ws: usize) -> Result<Tensor> {
        let (n, gh, gw, _) = x.dims4()?;
        let shifted = if self.shift > 0 {
            roll_left(&roll_left(x, self.shift, 1)?, self.shift, 2)?
        } else {
            x.clone()
        };
        let windows = partition_windows(&shifted, ws)?;
        let out = self.block.forward(&windows, self.mask.as_ref())?;
        let out = merge_windows(&out, ws, n, gh, gw)?;
        if self.shift > 0 {
            roll_right(&roll_right(&out, self.shift, 1)?, self.shift, 2)
        } else {
            Ok(out)
        }
    }
}

#[derive(Debug)]
pub struct InpaintNet {
    config: ModelConfig,
    params: ParamStore,
    patch_proj: Linear,
    positional: Var,
    img_blocks: Vec<SwinBlock>,
    merge_norm: LayerNorm,
    merge_proj: Linear,
    csi_proj: Linear,
    csi_blocks: Vec<TransformerBlock>,
    csi_norm: LayerNorm,
    img_reduce: Linear,
    csi_reduce: Linear,
    decoder: Vec<Conv3x3>,
    head: Conv3x3,
    skip: Linear,
}

impl InpaintNet {
    /// Builds a network with weights drawn from `(seed, "init")`.
    pub fn new(config: ModelConfig, dtype: DType, init_seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut ps = ParamStore::new(dtype, seed::rng(init_seed, "init", &[]));
        let e = c.embed_dim;
        let p = c.patch_size;
        let (gh, gw) = c.patch_grid();
        let (mh, mw) = c.merged_grid();

        let patch_proj = Linear::new(&mut ps, "patch_embed", p * p * 4, e, true)?;
        let positional = ps.add("pos_embed", &[c.l_img * gh * gw, e], Init::Normal { std: 0.02 })?;
        let mut img_blocks = Vec::with_capacity(c.n_layers_img);
        for i in 0..c.n_layers_img {
            let shift = if i % 2 == 1 { c.attn_window / 2 } else { 0 };
            let mask = if shift > 0 {
                Some(shifted_window_mask(gh, gw, c.attn_window, shift, dtype)?)
            } else {
                None
            };
            img_blocks.push(SwinBlock {
                block: TransformerBlock::new(&mut ps, &format!("img.{i}"), e, c.n_heads, c.mlp_ratio)?,
                shift,
                mask,
            });
        }
        let merge_norm = LayerNorm::new(&mut ps, "merge.norm", 4 * e)?;
        let merge_proj = Linear::new(&mut ps, "merge.proj", 4 * e, 2 * e, false)?;

        let csi_proj = Linear::new(&mut ps, "csi.proj", c.csi_token_dim(), e, true)?;
        let csi_blocks = (0..c.n_layers_csi)
            .map(|i| TransformerBlock::new(&mut ps, &format!("csi.{i}"), e, c.n_heads, c.mlp_ratio))
            .collect::<Result<Vec<_>>>()?;
        let csi_norm = LayerNorm::new(&mut ps, "csi.norm", e)?;

        let img_reduce = Linear::new(&mut ps, "agg.img", 2 * e, c.reduced_img, true)?;
        let csi_reduce = Linear::new(&mut ps, "agg.csi", e, c.l_img * c.reduced_csi * mh * mw, true)?;

        let mut decoder = Vec::with_capacity(c.decoder_channels.len());
        let mut ch = c.fused_channels();
        for (i, &out) in c.decoder_channels.iter().enumerate() {
            decoder.push(Conv3x3::new(&mut ps, &format!("dec.{i}"), ch, out)?);
            ch = out;
        }
        let head = Conv3x3::new(&mut ps, "dec.head", ch, 3)?;
        let skip = Linear::new(&mut ps, "skip", 4, 3, true)?;

        Ok(InpaintNet {
            config,
            params: ps,
            patch_proj,
            positional,
            img_blocks,
            merge_norm,
            merge_proj,
            csi_proj,
            csi_blocks,
            csi_norm,
            img_reduce,
            csi_reduce,
            decoder,
            head,
            skip,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    pub fn count_parameters(&self) -> usize {
        self.params.count()
    }

    pub fn skip(&self) -> &Linear {
        &self.skip
    }

    pub fn head(&self) -> &Conv3x3 {
        &self.head
    }

    pub fn positional(&self) -> &Var {
        &self.positional
    }

    fn check_batch(&self, b: &Batch) -> Result<usize> {
        let c = &self.config;
        let (h, w) = c.image_size;
        let n = b.defective.dim(0)?;
        let expect = [
            ("defective", b.defective.dims().to_vec(), vec![n, c.l_img, h, w, 3]),
            ("mask", b.mask.dims().to_vec(), vec![n, h, w]),
            ("csi", b.csi.dims().to_vec(), vec![n, c.n_sensors, c.l_csi, c.csi_feature_dim]),
        ];
        for (name, got, want) in expect {
            if got != want {
                return Err(ModelError::Shape(format!("{name} is {got:?}, model expects {want:?}")));
            }
        }
        Ok(n)
    }

    /// Applies the mode rules: image-only zeroes the CSI, rf-only occludes
    /// every pixel with the fill value.
    pub fn mode_inputs(&self, batch: &Batch, mode: Mode) -> Result<Batch> {
        let dt = self.dtype();
        let mut b = Batch {
            defective: batch.defective.to_dtype(dt)?,
            mask: batch.mask.to_dtype(dt)?,
            csi: batch.csi.to_dtype(dt)?,
        };
        match mode {
            Mode::Multimodal => {}
            Mode::ImageOnly => b.csi = b.csi.zeros_like()?,
            Mode::RfOnly => {
                b.defective = (b.defective.ones_like()? * self.config.fill_value as f64)?;
                b.mask = b.mask.ones_like()?;
            }
        }
        Ok(b)
    }

    /// (B, L, H, W, 3) defective frames and (B, H, W) mask to the
    /// (B*L, H, W, 4) network input.
    pub fn image_input(&self, b: &Batch) -> Result<Tensor> {
        let (n, l, h, w, _) = b.defective.dims5()?;
        let mask = b
            .mask
            .reshape((n, 1, h, w, 1))?
            .broadcast_as((n, l, h, w, 1))?;
        Ok(Tensor::cat(&[&b.defective, &mask], 4)?.reshape((n * l, h, w, 4))?)
    }

    /// (B*L, H, W, 4) -> (B*L, gh, gw, E) tokens with positions added.
    pub fn patch_encode(&self, input: &Tensor) -> Result<Tensor> {
        let c = &self.config;
        let (gh, gw) = c.patch_grid();
        let nl = input.dim(0)?;
        let n = nl / c.l_img;
        let tokens = self.patch_proj.forward(&patchify(input, c.patch_size)?)?;
        let pos = self.positional.as_tensor().reshape((1, c.l_img, gh, gw, c.embed_dim))?;
        Ok(tokens
            .reshape((n, c.l_img, gh, gw, c.embed_dim))?
            .broadcast_add(&pos)?
            .reshape((nl, gh, gw, c.embed_dim))?)
    }

    /// Runs only windowed block `i` on (N, gh, gw, E) tokens.
    pub fn image_block(&self, i: usize, tokens: &Tensor) -> Result<Tensor> {
        let blk = self
            .img_blocks
            .get(i)
            .ok_or_else(|| ModelError::Config(format!("no image block {i}")))?;
        blk.forward(tokens, self.config.attn_window)
    }

    /// Windowed blocks then patch merging: (N, gh, gw, E) -> (N, gh/2, gw/2, 2E).
    pub fn encode_image(&self, tokens: &Tensor) -> Result<Tensor> {
        let mut x = tokens.clone();
        for blk in &self.img_blocks {
            x = blk.forward(&x, self.config.attn_window)?;
        }
        let x = patchify(&x, 2)?;
        // patchify orders the 2x2 neighbours before channels; any fixed
        // order is equivalent under the learned projection
        self.merge_proj.forward(&self.merge_norm.forward(&x)?)
    }

    /// Splits each sensor's window into contiguous chunks of `csi_patch_len`
    /// frames and flattens each chunk into one token:
    /// (B, S, L_csi, F) -> (B, S * L_csi / p, p * F).
    pub fn csi_segment(&self, csi: &Tensor) -> Result<Tensor> {
        let c = &self.config;
        let n = csi.dim(0)?;
        Ok(csi.contiguous()?.reshape((
            n,
            c.n_sensors * c.csi_tokens_per_sensor(),
            c.csi_token_dim(),
        ))?)
    }

    /// (B, T, p*F) -> (B, T, E), no positional information.
    pub fn encode_csi(&self, tokens: &Tensor) -> Result<Tensor> {
        let mut x = self.csi_proj.forward(tokens)?;
        for blk in &self.csi_blocks {
            x = blk.forward(&x, None)?;
        }
        self.csi_norm.forward(&x)
    }

    /// Fused decoder input (B*L, H', W', reduced_img + reduced_csi + 4).
    pub fn aggregate(&self, img_feat: &Tensor, csi_feat: &Tensor, input: &Tensor) -> Result<Tensor> {
        let c = &self.config;
        let (mh, mw) = c.merged_grid();
        let n = csi_feat.dim(0)?;
        let img = self.img_reduce.forward(img_feat)?;
        let pooled = csi_feat.mean(1)?;
        let csi = self
            .csi_reduce
            .forward(&pooled)?
            .reshape((n * c.l_img, mh, mw, c.reduced_csi))?;
        let raw = avg_pool(input, 2 * c.patch_size)?;
        Ok(Tensor::cat(&[&img, &csi, &raw], 3)?)
    }

    /// Upsampling convolutional stages plus the input skip projection;
    /// returns (B*L, H, W, 3) in [0, 1].
    pub fn decode(&self, fused: &Tensor, input: &Tensor) -> Result<Tensor> {
        let mut x = fused.clone();
        for conv in &self.decoder {
            x = gelu(&conv.forward(&upsample2x(&x)?)?)?;
        }
        let pre = (self.head.forward(&x)? + self.skip.forward(input)?)?;
        sigmoid(&pre)
    }

    /// Restored window (B, L, H, W, 3).
    pub fn forward(&self, batch: &Batch, mode: Mode) -> Result<Tensor> {
        let n = self.check_batch(batch)?;
        let c = &self.config;
        let b = self.mode_inputs(batch, mode)?;
        let input = self.image_input(&b)?;
        let img_feat = self.encode_image(&self.patch_encode(&input)?)?;
        let csi_feat = self.encode_csi(&self.csi_segment(&b.csi)?)?;
        let fused = self.aggregate(&img_feat, &csi_feat, &input)?;
        let out = self.decode(&fused, &input)?;
        let (h, w) = c.image_size;
        Ok(out.reshape((n, c.l_img, h, w, 3))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roll_round_trip() {
        let x = Tensor::arange(0f32, 5.0, &Device::Cpu).unwrap();
        let l = roll_left(&x, 2, 0).unwrap();
        assert_eq!(l.to_vec1::<f32>().unwrap(), vec![2.0, 3.0, 4.0, 0.0, 1.0]);
        assert_eq!(roll_right(&l, 2, 0).unwrap().to_vec1::<f32>().unwrap(), x.to_vec1::<f32>().unwrap());
    }

    #[test]
    fn window_partition_round_trip() {
        let x = Tensor::arange(0f32, 2.0 * 8.0 * 8.0 * 3.0, &Device::Cpu)
            .unwrap()
            .reshape((2, 8, 8, 3))
            .unwrap();
        let w = partition_windows(&x, 4).unwrap();
        assert_eq!(w.dims(), &[8, 16, 3]);
        let back = merge_windows(&w, 4, 2, 8, 8).unwrap();
        assert_eq!(
            back.flatten_all().unwrap().to_vec1::<f32>().unwrap(),
            x.flatten_all().unwrap().to_vec1::<f32>().unwrap()
        );
    }

    #[test]
    fn unshifted_grid_needs_no_mask() {
        let m = shifted_window_mask(8, 8, 4, 2, DType::F64).unwrap();
        assert_eq!(m.dims(), &[4, 16, 16]);
        // the top-left window never straddles the wrap boundary
        let first: f64 = m.get(0).unwrap().abs().unwrap().sum_all().unwrap().to_scalar().unwrap();
        assert_eq!(first, 0.0);
        let last: f64 = m.get(3).unwrap().abs().unwrap().sum_all().unwrap().to_scalar().unwrap();
        assert!(last > 0.0);
    }
}
