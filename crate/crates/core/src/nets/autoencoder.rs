//! Spectrogram autoencoder: two stride-2 stages take 3 x 64 x 376 to a
//! 64 x 16 x 94 latent.

use candle_core::Tensor;

use super::layers::{resize_nearest, silu, Conv2d, ConvSpec, GroupNorm};
use super::params::ParamPath;
use super::{ModelConfig, LATENT_H, LATENT_W};
use crate::features::{N_FRAMES, N_FREQ};
use crate::seisdata::N_CHANNELS;
use crate::{Error, Result};

/// GroupNorm, SiLU, conv, twice, with a 1x1 skip when widths differ.
#[derive(Debug, Clone)]
pub struct ResBlock {
    norm1: GroupNorm,
    conv1: Conv2d,
    norm2: GroupNorm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

impl ResBlock {
    pub fn new(p: &ParamPath, cin: usize, cout: usize, groups: usize) -> Result<Self> {
        Ok(Self {
            norm1: GroupNorm::new(&p.sub("norm1"), cin, groups)?,
            conv1: Conv2d::new(&p.sub("conv1"), cin, cout, ConvSpec::same(3))?,
            norm2: GroupNorm::new(&p.sub("norm2"), cout, groups)?,
            conv2: Conv2d::new(&p.sub("conv2"), cout, cout, ConvSpec::same(3))?,
            skip: if cin != cout {
                Some(Conv2d::new(&p.sub("skip"), cin, cout, ConvSpec::same(1))?)
            } else {
                None
            },
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.conv1.forward(&silu(&self.norm1.forward(x)?)?)?;
        let h = self.conv2.forward(&silu(&self.norm2.forward(&h)?)?)?;
        let s = match &self.skip {
            Some(c) => c.forward(x)?,
            None => x.clone(),
        };
        Ok((s + h)?)
    }
}

#[derive(Debug, Clone)]
pub struct Autoencoder {
    enc_in: Conv2d,
    enc_down1: Conv2d,
    enc_res1: ResBlock,
    enc_down2: Conv2d,
    enc_res2: ResBlock,
    enc_norm: GroupNorm,
    enc_out: Conv2d,
    dec_in: Conv2d,
    dec_res2: ResBlock,
    dec_up2: Conv2d,
    dec_res1: ResBlock,
    dec_up1: Conv2d,
    dec_norm: GroupNorm,
    dec_out: Conv2d,
    latent: usize,
}

pub(crate) fn check_dims(context: &'static str, x: &Tensor, c: usize, h: usize, w: usize) -> Result<usize> {
    match x.dims() {
        &[b, cc, hh, ww] if cc == c && hh == h && ww == w => Ok(b),
        d => Err(Error::shape(context, format!("(B, {c}, {h}, {w})"), format!("{d:?}"))),
    }
}

impl Autoencoder {
    pub fn new(p: &ParamPath, cfg: &ModelConfig) -> Result<Self> {
        let [c0, c1, c2] = [cfg.ae_channels[0], cfg.ae_channels[1], cfg.ae_channels[2]];
        let g = cfg.norm_groups;
        let z = cfg.latent_channels;
        let e = p.sub("encoder");
        let d = p.sub("decoder");
        Ok(Self {
            enc_in: Conv2d::new(&e.sub("conv_in"), N_CHANNELS, c0, ConvSpec::same(3))?,
            enc_down1: Conv2d::new(&e.sub("down1"), c0, c1, ConvSpec::down(3))?,
            enc_res1: ResBlock::new(&e.sub("res1"), c1, c1, g)?,
            enc_down2: Conv2d::new(&e.sub("down2"), c1, c2, ConvSpec::down(3))?,
            enc_res2: ResBlock::new(&e.sub("res2"), c2, c2, g)?,
            enc_norm: GroupNorm::new(&e.sub("norm_out"), c2, g)?,
            enc_out: Conv2d::new(&e.sub("conv_out"), c2, 2 * z, ConvSpec::same(1))?,
            dec_in: Conv2d::new(&d.sub("conv_in"), z, c2, ConvSpec::same(3))?,
            dec_res2: ResBlock::new(&d.sub("res2"), c2, c2, g)?,
            dec_up2: Conv2d::new(&d.sub("up2"), c2, c1, ConvSpec::same(3))?,
            dec_res1: ResBlock::new(&d.sub("res1"), c1, c1, g)?,
            dec_up1: Conv2d::new(&d.sub("up1"), c1, c0, ConvSpec::same(3))?,
            dec_norm: GroupNorm::new(&d.sub("norm_out"), c0, g)?,
            dec_out: Conv2d::new(&d.sub("conv_out"), c0, N_CHANNELS, ConvSpec::same(3))?,
            latent: z,
        })
    }

    /// Latent mean and log-variance, each `(B, latent, 16, 94)`.
    pub fn encode(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        check_dims("autoencoder input", x, N_CHANNELS, N_FREQ, N_FRAMES)?;
        let h = self.enc_in.forward(x)?;
        let h = self.enc_res1.forward(&self.enc_down1.forward(&silu(&h)?)?)?;
        let h = self.enc_res2.forward(&self.enc_down2.forward(&h)?)?;
        let h = self.enc_out.forward(&silu(&self.enc_norm.forward(&h)?)?)?;
        Ok((h.narrow(1, 0, self.latent)?, h.narrow(1, self.latent, self.latent)?))
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        check_dims("latent", z, self.latent, LATENT_H, LATENT_W)?;
        let h = self.dec_res2.forward(&self.dec_in.forward(z)?)?;
        let h = self.dec_up2.forward(&resize_nearest(&h, N_FREQ / 2, N_FRAMES / 2)?)?;
        let h = self.dec_res1.forward(&h)?;
        let h = self.dec_up1.forward(&resize_nearest(&h, N_FREQ, N_FRAMES)?)?;
        self.dec_out.forward(&silu(&self.dec_norm.forward(&h)?)?)
    }

    /// `mean + exp(logvar / 2) * eps`.
    pub fn reparameterize(mean: &Tensor, logvar: &Tensor, eps: &Tensor) -> Result<Tensor> {
        Ok((mean + (logvar * 0.5)?.exp()?.mul(eps)?)?)
    }

    /// Mean KL divergence to the standard normal per latent element.
    pub fn kl(mean: &Tensor, logvar: &Tensor) -> Result<Tensor> {
        let t = ((mean.sqr()? + logvar.exp()?)? - logvar)?;
        Ok(((t - 1.0)? * 0.5)?.mean_all()?)
    }

    /// Set the output bias, e.g. to the mean log-amplitude of the data.
    pub fn set_output_bias(&self, value: f64) -> Result<()> {
        self.dec_out.set_bias(value)
    }
}
