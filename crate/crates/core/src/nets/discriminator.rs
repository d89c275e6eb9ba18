//! Patch discriminator and hinge losses for the autoencoder pretraining
//! ablation.

use candle_core::Tensor;

use super::layers::{Conv2d, ConvSpec, GroupNorm};
use super::params::ParamPath;
use crate::seisdata::N_CHANNELS;
use crate::Result;

fn leaky(x: &Tensor) -> Result<Tensor> {
    Ok((x.relu()? - (x.neg()?.relu()? * 0.2)?)?)
}

#[derive(Debug, Clone)]
pub struct PatchDiscriminator {
    c1: Conv2d,
    c2: Conv2d,
    norm: GroupNorm,
    out: Conv2d,
}

impl PatchDiscriminator {
    pub fn new(p: &ParamPath, width: usize) -> Result<Self> {
        let spec = ConvSpec {
            kernel: (4, 4),
            stride: (2, 2),
            padding: (1, 1),
            bias: true,
        };
        Ok(Self {
            c1: Conv2d::new(&p.sub("c1"), N_CHANNELS, width, spec)?,
            c2: Conv2d::new(&p.sub("c2"), width, 2 * width, spec)?,
            norm: GroupNorm::new(&p.sub("norm"), 2 * width, 8)?,
            out: Conv2d::new(&p.sub("out"), 2 * width, 1, ConvSpec::same(3))?,
        })
    }

    /// Per-patch logits.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = leaky(&self.c1.forward(x)?)?;
        let h = leaky(&self.norm.forward(&self.c2.forward(&h)?)?)?;
        self.out.forward(&h)
    }
}

/// `mean(relu(1 - real)) + mean(relu(1 + fake))`.
pub fn hinge_d_loss(real: &Tensor, fake: &Tensor) -> Result<Tensor> {
    let r = (real.neg()? + 1.0)?.relu()?.mean_all()?;
    let f = (fake + 1.0)?.relu()?.mean_all()?;
    Ok((r + f)?)
}

/// Generator side: `-mean(fake)`.
pub fn hinge_g_loss(fake: &Tensor) -> Result<Tensor> {
    Ok(fake.mean_all()?.neg()?)
}
