//! Denoising U-Net over the latent grid with sinusoidal timestep embedding
//! and transformer blocks whose cross-attention reads the condition token.

use candle_core::Tensor;

use super::autoencoder::check_dims;
use super::layers::{resize_nearest, silu, timestep_embedding, Attention, Conv2d, ConvSpec, GroupNorm, LayerNorm, Linear};
use super::params::ParamPath;
use super::{ModelConfig, LATENT_H, LATENT_W};
use crate::{Error, Result};

#[derive(Debug, Clone)]
struct TimeResBlock {
    norm1: GroupNorm,
    conv1: Conv2d,
    emb: Linear,
    norm2: GroupNorm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

impl TimeResBlock {
    fn new(p: &ParamPath, cin: usize, cout: usize, temb: usize, groups: usize) -> Result<Self> {
        Ok(Self {
            norm1: GroupNorm::new(&p.sub("norm1"), cin, groups)?,
            conv1: Conv2d::new(&p.sub("conv1"), cin, cout, ConvSpec::same(3))?,
            emb: Linear::new(&p.sub("emb"), temb, cout)?,
            norm2: GroupNorm::new(&p.sub("norm2"), cout, groups)?,
            conv2: Conv2d::new(&p.sub("conv2"), cout, cout, ConvSpec::same(3))?,
            skip: if cin != cout {
                Some(Conv2d::new(&p.sub("skip"), cin, cout, ConvSpec::same(1))?)
            } else {
                None
            },
        })
    }

    fn forward(&self, x: &Tensor, temb: &Tensor) -> Result<Tensor> {
        let h = self.conv1.forward(&silu(&self.norm1.forward(x)?)?)?;
        let e = self.emb.forward(&silu(temb)?)?.unsqueeze(2)?.unsqueeze(3)?;
        let h = h.broadcast_add(&e)?;
        let h = self.conv2.forward(&silu(&self.norm2.forward(&h)?)?)?;
        let s = match &self.skip {
            Some(c) => c.forward(x)?,
            None => x.clone(),
        };
        Ok((s + h)?)
    }
}

/// Self-attention, cross-attention to the condition and a GELU feed-forward
/// over flattened grid tokens.
#[derive(Debug, Clone)]
struct SpatialTransformer {
    norm: GroupNorm,
    proj_in: Conv2d,
    ln1: LayerNorm,
    self_attn: Attention,
    ln2: LayerNorm,
    cross_attn: Attention,
    ln3: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    proj_out: Conv2d,
}

impl SpatialTransformer {
    fn new(p: &ParamPath, ch: usize, d_cond: usize, heads: usize, groups: usize) -> Result<Self> {
        Ok(Self {
            norm: GroupNorm::new(&p.sub("norm"), ch, groups)?,
            proj_in: Conv2d::new(&p.sub("proj_in"), ch, ch, ConvSpec::same(1))?,
            ln1: LayerNorm::new(&p.sub("ln1"), ch)?,
            self_attn: Attention::new(&p.sub("attn1"), ch, ch, heads)?,
            ln2: LayerNorm::new(&p.sub("ln2"), ch)?,
            cross_attn: Attention::new(&p.sub("attn2"), ch, d_cond, heads)?,
            ln3: LayerNorm::new(&p.sub("ln3"), ch)?,
            ff1: Linear::new(&p.sub("ff1"), ch, 4 * ch)?,
            ff2: Linear::new(&p.sub("ff2"), 4 * ch, ch)?,
            proj_out: Conv2d::new(&p.sub("proj_out"), ch, ch, ConvSpec::same(1))?,
        })
    }

    fn forward(&self, x: &Tensor, context: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let t = self.proj_in.forward(&self.norm.forward(x)?)?;
        let t = t.reshape((b, c, h * w))?.transpose(1, 2)?.contiguous()?;
        let n = self.ln1.forward(&t)?;
        let t = (&t + self.self_attn.forward(&n, &n)?)?;
        let t = (&t + self.cross_attn.forward(&self.ln2.forward(&t)?, context)?)?;
        let f = self.ff2.forward(&self.ff1.forward(&self.ln3.forward(&t)?)?.gelu_erf()?)?;
        let t = (t + f)?;
        let t = t.transpose(1, 2)?.contiguous()?.reshape((b, c, h, w))?;
        Ok((x + self.proj_out.forward(&t)?)?)
    }
}

#[derive(Debug, Clone)]
struct Level {
    res: TimeResBlock,
    attn: Option<SpatialTransformer>,
}

impl Level {
    fn forward(&self, x: &Tensor, temb: &Tensor, ctx: &Tensor) -> Result<Tensor> {
        let h = self.res.forward(x, temb)?;
        match &self.attn {
            Some(a) => a.forward(&h, ctx),
            None => Ok(h),
        }
    }
}

#[derive(Debug, Clone)]
pub struct UNet {
    time1: Linear,
    time2: Linear,
    conv_in: Conv2d,
    down: Vec<Level>,
    downsample: Vec<Conv2d>,
    mid1: TimeResBlock,
    mid_attn: SpatialTransformer,
    mid2: TimeResBlock,
    upsample: Vec<Conv2d>,
    up: Vec<Level>,
    norm_out: GroupNorm,
    conv_out: Conv2d,
    base: usize,
    latent: usize,
    d_cond: usize,
    max_timestep: usize,
}

impl UNet {
    pub fn new(p: &ParamPath, cfg: &ModelConfig, max_timestep: usize) -> Result<Self> {
        let base = cfg.unet_base;
        let temb = 4 * base;
        let g = cfg.norm_groups;
        let widths: Vec<usize> = cfg.unet_mult.iter().map(|m| m * base).collect();
        let levels = widths.len();
        let attn = |l: usize, ch: usize, q: &ParamPath| -> Result<Option<SpatialTransformer>> {
            if cfg.unet_attention_levels.contains(&l) {
                Ok(Some(SpatialTransformer::new(q, ch, cfg.d_cond, cfg.unet_heads, g)?))
            } else {
                Ok(None)
            }
        };
        let mut down = Vec::new();
        let mut downsample = Vec::new();
        let mut ch = base;
        for (l, &w) in widths.iter().enumerate() {
            let q = p.sub(format!("down.{l}"));
            down.push(Level {
                res: TimeResBlock::new(&q.sub("res"), ch, w, temb, g)?,
                attn: attn(l, w, &q.sub("attn"))?,
            });
            ch = w;
            if l + 1 < levels {
                downsample.push(Conv2d::new(&q.sub("downsample"), ch, ch, ConvSpec::down(3))?);
            }
        }
        let mid = p.sub("mid");
        let mid1 = TimeResBlock::new(&mid.sub("res1"), ch, ch, temb, g)?;
        let mid_attn = SpatialTransformer::new(&mid.sub("attn"), ch, cfg.d_cond, cfg.unet_heads, g)?;
        let mid2 = TimeResBlock::new(&mid.sub("res2"), ch, ch, temb, g)?;
        let mut up = Vec::new();
        let mut upsample = Vec::new();
        for l in (0..levels).rev() {
            let q = p.sub(format!("up.{l}"));
            if l + 1 < levels {
                upsample.push(Conv2d::new(&q.sub("upsample"), ch, ch, ConvSpec::same(3))?);
            }
            let w = widths[l];
            up.push(Level {
                res: TimeResBlock::new(&q.sub("res"), ch + w, w, temb, g)?,
                attn: attn(l, w, &q.sub("attn"))?,
            });
            ch = w;
        }
        Ok(Self {
            time1: Linear::new(&p.sub("time1"), base, temb)?,
            time2: Linear::new(&p.sub("time2"), temb, temb)?,
            conv_in: Conv2d::new(&p.sub("conv_in"), cfg.latent_channels, base, ConvSpec::same(3))?,
            down,
            downsample,
            mid1,
            mid_attn,
            mid2,
            upsample,
            up,
            norm_out: GroupNorm::new(&p.sub("norm_out"), base, g)?,
            conv_out: Conv2d::new(&p.sub("conv_out"), base, cfg.latent_channels, ConvSpec::same(3))?,
            base,
            latent: cfg.latent_channels,
            d_cond: cfg.d_cond,
            max_timestep,
        })
    }

    /// x0-prediction for `z_t` `(B, latent, 16, 94)` under condition tokens
    /// `(B, 1, d_cond)` at timesteps `t` (one per batch item, 1-based).
    pub fn forward(&self, z_t: &Tensor, context: &Tensor, t: &[usize]) -> Result<Tensor> {
        let b = check_dims("denoiser input", z_t, self.latent, LATENT_H, LATENT_W)?;
        if t.len() != b {
            return Err(Error::shape("timesteps", b, t.len()));
        }
        if let Some(&bad) = t.iter().find(|&&s| s == 0 || s > self.max_timestep) {
            return Err(Error::InvalidInput(format!("timestep {bad} outside 1..={}", self.max_timestep)));
        }
        match context.dims() {
            &[cb, 1, d] if cb == b && d == self.d_cond => {}
            d => return Err(Error::shape("condition embedding", format!("({b}, 1, {})", self.d_cond), format!("{d:?}"))),
        }
        let temb = timestep_embedding(t, self.base, z_t.dtype(), z_t.device())?;
        let temb = self.time2.forward(&silu(&self.time1.forward(&temb)?)?)?;
        let mut h = self.conv_in.forward(z_t)?;
        let mut skips = Vec::new();
        for (l, level) in self.down.iter().enumerate() {
            h = level.forward(&h, &temb, context)?;
            skips.push(h.clone());
            if let Some(ds) = self.downsample.get(l) {
                h = ds.forward(&h)?;
            }
        }
        h = self.mid1.forward(&h, &temb)?;
        h = self.mid_attn.forward(&h, context)?;
        h = self.mid2.forward(&h, &temb)?;
        for (i, level) in self.up.iter().enumerate() {
            let skip = skips.pop().expect("one skip per level");
            if i > 0 {
                let (_, _, sh, sw) = skip.dims4()?;
                h = self.upsample[i - 1].forward(&resize_nearest(&h, sh, sw)?)?;
            }
            h = level.forward(&Tensor::cat(&[&h, &skip], 1)?, &temb, context)?;
        }
        self.conv_out.forward(&silu(&self.norm_out.forward(&h)?)?)
    }
}
