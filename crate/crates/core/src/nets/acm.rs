//! Amplitude correction: a two-stage (time, then frequency) conformer over
//! the decoded log-amplitude fused with the Griffin-Lim phase, ending in a
//! Softplus magnitude mask.

use candle_core::Tensor;

use super::autoencoder::check_dims;
use super::layers::{resize_nearest, softplus, Attention, Conv2d, ConvSpec, DepthwiseConv1d, GroupNorm, LayerNorm, Linear, PRelu};
use super::params::{Init, ParamPath};
use super::ModelConfig;
use crate::features::{N_FRAMES, N_FREQ};
use crate::seisdata::N_CHANNELS;
use crate::Result;

pub const MASK_FLOOR: f64 = 1e-20;

fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(softplus(&x.neg()?)?.neg()?.exp()?)
}

#[derive(Debug, Clone)]
struct FeedForward {
    norm: LayerNorm,
    l1: Linear,
    l2: Linear,
}

impl FeedForward {
    fn new(p: &ParamPath, dim: usize) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(&p.sub("norm"), dim)?,
            l1: Linear::new(&p.sub("l1"), dim, 4 * dim)?,
            l2: Linear::new(&p.sub("l2"), 4 * dim, dim)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.l2.forward(&self.l1.forward(&self.norm.forward(x)?)?.silu()?)
    }
}

#[derive(Debug, Clone)]
struct ConvModule {
    norm: LayerNorm,
    pointwise1: Linear,
    depthwise: DepthwiseConv1d,
    gn: GroupNorm,
    pointwise2: Linear,
}

impl ConvModule {
    fn new(p: &ParamPath, dim: usize, kernel: usize) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(&p.sub("norm"), dim)?,
            pointwise1: Linear::new(&p.sub("pw1"), dim, 2 * dim)?,
            depthwise: DepthwiseConv1d::new(&p.sub("dw"), dim, kernel)?,
            gn: GroupNorm::new(&p.sub("gn"), dim, 1)?,
            pointwise2: Linear::new(&p.sub("pw2"), dim, dim)?,
        })
    }

    /// `(N, L, C)` in and out.
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let c = x.dim(2)?;
        let h = self.pointwise1.forward(&self.norm.forward(x)?)?;
        let h = h.narrow(2, 0, c)?.mul(&sigmoid(&h.narrow(2, c, c)?)?)?;
        let h = h.transpose(1, 2)?.contiguous()?;
        let h = self.gn.forward(&self.depthwise.forward(&h)?)?.silu()?;
        self.pointwise2.forward(&h.transpose(1, 2)?.contiguous()?)
    }
}

/// Macaron feed-forward, self-attention, convolution, feed-forward, norm.
#[derive(Debug, Clone)]
struct Conformer {
    ff1: FeedForward,
    attn_norm: LayerNorm,
    attn: Attention,
    conv: ConvModule,
    ff2: FeedForward,
    out_norm: LayerNorm,
}

impl Conformer {
    fn new(p: &ParamPath, dim: usize, heads: usize, kernel: usize) -> Result<Self> {
        Ok(Self {
            ff1: FeedForward::new(&p.sub("ff1"), dim)?,
            attn_norm: LayerNorm::new(&p.sub("attn_norm"), dim)?,
            attn: Attention::new(&p.sub("attn"), dim, dim, heads)?,
            conv: ConvModule::new(&p.sub("conv"), dim, kernel)?,
            ff2: FeedForward::new(&p.sub("ff2"), dim)?,
            out_norm: LayerNorm::new(&p.sub("out_norm"), dim)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = (x + (self.ff1.forward(x)? * 0.5)?)?;
        let n = self.attn_norm.forward(&x)?;
        let x = (&x + self.attn.forward(&n, &n)?)?;
        let x = (&x + self.conv.forward(&x)?)?;
        let x = (&x + (self.ff2.forward(&x)? * 0.5)?)?;
        self.out_norm.forward(&x)
    }
}

#[derive(Debug, Clone)]
struct TsBlock {
    time: Conformer,
    freq: Conformer,
}

impl TsBlock {
    /// `(B, C, F, T)`: conformer along time for every frequency row, then
    /// along frequency for every frame.
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, f, t) = x.dims4()?;
        let h = x.permute((0, 2, 3, 1))?.contiguous()?.reshape((b * f, t, c))?;
        let h = self.time.forward(&h)?.reshape((b, f, t, c))?;
        let h = h.transpose(1, 2)?.contiguous()?.reshape((b * t, f, c))?;
        let h = self.freq.forward(&h)?.reshape((b, t, f, c))?;
        Ok(h.permute((0, 3, 2, 1))?.contiguous()?)
    }
}

#[derive(Debug, Clone)]
pub struct Acm {
    enc_in: Conv2d,
    enc_norm1: GroupNorm,
    enc_act1: PRelu,
    enc_down: Conv2d,
    enc_norm2: GroupNorm,
    enc_act2: PRelu,
    blocks: Vec<TsBlock>,
    dec_conv: Conv2d,
    dec_norm: GroupNorm,
    dec_act: PRelu,
    mask_out: Conv2d,
}

impl Acm {
    pub fn new(p: &ParamPath, cfg: &ModelConfig) -> Result<Self> {
        let c = cfg.acm_channels;
        let blocks = (0..cfg.acm_blocks)
            .map(|i| {
                let q = p.sub(format!("blocks.{i}"));
                Ok(TsBlock {
                    time: Conformer::new(&q.sub("time"), c, cfg.acm_heads, cfg.acm_kernel)?,
                    freq: Conformer::new(&q.sub("freq"), c, cfg.acm_heads, cfg.acm_kernel)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            enc_in: Conv2d::new(&p.sub("enc_in"), 3 * N_CHANNELS, c, ConvSpec::same(1))?,
            enc_norm1: GroupNorm::new(&p.sub("enc_norm1"), c, c)?,
            enc_act1: PRelu::new(&p.sub("enc_act1"), c)?,
            enc_down: Conv2d::new(&p.sub("enc_down"), c, c, ConvSpec::down(3))?,
            enc_norm2: GroupNorm::new(&p.sub("enc_norm2"), c, c)?,
            enc_act2: PRelu::new(&p.sub("enc_act2"), c)?,
            blocks,
            dec_conv: Conv2d::new(&p.sub("dec_conv"), c, c, ConvSpec::same(3))?,
            dec_norm: GroupNorm::new(&p.sub("dec_norm"), c, c)?,
            dec_act: PRelu::new(&p.sub("dec_act"), c)?,
            // softplus(ln(e - 1)) = 1: the mask starts near identity.
            mask_out: Conv2d::with_bias_init(
                &p.sub("mask_out"),
                c,
                N_CHANNELS,
                ConvSpec::same(1),
                Init::Normal(1e-3),
                Init::Const((std::f64::consts::E - 1.0).ln()),
            )?,
        })
    }

    /// Strictly positive multiplicative mask, `(B, 3, 64, 376)`.
    pub fn mask(&self, decoded: &Tensor, phase: &Tensor) -> Result<Tensor> {
        check_dims("ACM amplitude", decoded, N_CHANNELS, N_FREQ, N_FRAMES)?;
        check_dims("ACM phase", phase, N_CHANNELS, N_FREQ, N_FRAMES)?;
        let x = Tensor::cat(&[decoded, &phase.cos()?, &phase.sin()?], 1)?;
        let h = self.enc_act1.forward(&self.enc_norm1.forward(&self.enc_in.forward(&x)?)?)?;
        let mut h = self.enc_act2.forward(&self.enc_norm2.forward(&self.enc_down.forward(&h)?)?)?;
        for block in &self.blocks {
            h = block.forward(&h)?;
        }
        let h = self.dec_conv.forward(&resize_nearest(&h, N_FREQ, N_FRAMES)?)?;
        let h = self.dec_act.forward(&self.dec_norm.forward(&h)?)?;
        softplus(&self.mask_out.forward(&h)?)
    }

    /// Decoded log-amplitude corrected by the mask: `d + log(mask)`.
    pub fn forward(&self, decoded: &Tensor, phase: &Tensor) -> Result<Tensor> {
        let mask = self.mask(decoded, phase)?;
        Ok((decoded + mask.maximum(MASK_FLOOR)?.log()?)?)
    }
}
