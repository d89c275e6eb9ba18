//! Condition encoder: five affine layers with GELU between them, mapping the
//! 11-dimensional condition vector to a single `d_cond` token.

use candle_core::Tensor;

use super::layers::Linear;
use super::params::ParamPath;
use super::ModelConfig;
use crate::features::CONDITION_DIM;
use crate::{Error, Result};

pub const COND_LAYERS: usize = 5;

#[derive(Debug, Clone)]
pub struct CondEncoder {
    layers: Vec<Linear>,
}

impl CondEncoder {
    pub fn new(p: &ParamPath, cfg: &ModelConfig) -> Result<Self> {
        let mut dims = vec![CONDITION_DIM];
        dims.extend(std::iter::repeat_n(cfg.cond_hidden, COND_LAYERS - 1));
        dims.push(cfg.d_cond);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&p.sub(format!("layers.{i}")), w[0], w[1]))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    /// `(B, 11)` to `(B, 1, d_cond)`.
    pub fn forward(&self, c: &Tensor) -> Result<Tensor> {
        match c.dims() {
            &[_, n] if n == CONDITION_DIM => {}
            d => return Err(Error::shape("condition batch", format!("(B, {CONDITION_DIM})"), format!("{d:?}"))),
        }
        let mut h = c.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if i + 1 < self.layers.len() {
                h = h.gelu_erf()?;
            }
        }
        Ok(h.unsqueeze(1)?)
    }
}
