//! Learnable components: spectrogram autoencoder, condition encoder,
//! cross-attention U-Net denoiser and amplitude-correction module.

mod acm;
mod autoencoder;
pub mod checkpoint;
mod cond_encoder;
mod discriminator;
pub mod layers;
mod params;
mod unet;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

pub use acm::{Acm, MASK_FLOOR};
pub use autoencoder::{Autoencoder, ResBlock};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, FORMAT_VERSION};
pub use cond_encoder::{CondEncoder, COND_LAYERS};
pub use discriminator::{hinge_d_loss, hinge_g_loss, PatchDiscriminator};
pub use params::{Init, ParamPath, ParamStore};
pub use unet::UNet;

use crate::features::{N_FRAMES, N_FREQ};
use crate::{Error, Result};

pub const LATENT_H: usize = N_FREQ / 4;
pub const LATENT_W: usize = (N_FRAMES + 3) / 4;
pub const LATENT_CHANNELS: usize = 64;

/// Widths and depths of all networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub latent_channels: usize,
    /// Autoencoder widths at full, half and quarter resolution.
    pub ae_channels: Vec<usize>,
    pub d_cond: usize,
    pub cond_hidden: usize,
    pub unet_base: usize,
    pub unet_mult: Vec<usize>,
    /// Indices into `unet_mult` of levels carrying transformer blocks.
    pub unet_attention_levels: Vec<usize>,
    pub unet_heads: usize,
    pub norm_groups: usize,
    pub use_acm: bool,
    pub acm_channels: usize,
    /// Time/frequency conformer block count.
    pub acm_blocks: usize,
    pub acm_heads: usize,
    pub acm_kernel: usize,
    /// Upper bound on the total parameter count, if any.
    pub max_parameters: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// CPU-trainable defaults.
    pub fn desk() -> Self {
        Self {
            latent_channels: LATENT_CHANNELS,
            ae_channels: vec![16, 32, 64],
            d_cond: 256,
            cond_hidden: 256,
            unet_base: 64,
            unet_mult: vec![1, 2, 4],
            unet_attention_levels: vec![1, 2],
            unet_heads: 4,
            norm_groups: 32,
            use_acm: true,
            acm_channels: 8,
            acm_blocks: 8,
            acm_heads: 1,
            acm_kernel: 15,
            max_parameters: None,
        }
    }

    /// Tiny networks for gradient checks and fast tests. The latent keeps
    /// its spatial size but has few channels.
    pub fn micro() -> Self {
        Self {
            latent_channels: 4,
            ae_channels: vec![4, 4, 4],
            d_cond: 8,
            cond_hidden: 8,
            unet_base: 4,
            unet_mult: vec![1, 2],
            unet_attention_levels: vec![1],
            unet_heads: 2,
            norm_groups: 2,
            use_acm: true,
            acm_channels: 2,
            acm_blocks: 1,
            acm_heads: 1,
            acm_kernel: 3,
            max_parameters: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("model: {m}")));
        let widths = [
            self.latent_channels,
            self.d_cond,
            self.cond_hidden,
            self.unet_base,
            self.unet_heads,
            self.norm_groups,
            self.acm_channels,
            self.acm_heads,
            self.acm_kernel,
        ];
        if widths.contains(&0) || self.ae_channels.contains(&0) || self.unet_mult.contains(&0) {
            return bad("all widths must be positive");
        }
        if self.ae_channels.len() != 3 {
            return bad("ae_channels needs exactly three entries");
        }
        if self.unet_mult.is_empty() || self.unet_mult.len() > 3 {
            return bad("unet_mult needs one to three levels");
        }
        if let Some(&l) = self.unet_attention_levels.iter().find(|&&l| l >= self.unet_mult.len()) {
            return bad(&format!("attention level {l} does not exist"));
        }
        for (l, m) in self.unet_mult.iter().enumerate() {
            if (m * self.unet_base) % self.unet_heads != 0 {
                return bad(&format!("unet level {l} width not divisible by unet_heads"));
            }
        }
        if (self.unet_mult.last().unwrap() * self.unet_base) % self.unet_heads != 0 {
            return bad("unet middle width not divisible by unet_heads");
        }
        if self.acm_channels % self.acm_heads != 0 {
            return bad("acm_channels not divisible by acm_heads");
        }
        if self.acm_kernel % 2 == 0 {
            return bad("acm_kernel must be odd");
        }
        Ok(())
    }
}

/// Encoder/decoder pair between spectrograms and latents.
pub trait LatentAutoencoder {
    /// Latent mean and log-variance.
    fn encode(&self, x: &Tensor) -> Result<(Tensor, Tensor)>;
    fn decode(&self, z: &Tensor) -> Result<Tensor>;
}

pub trait ConditionEncoder {
    /// `(B, 11)` condition vectors to `(B, 1, d_cond)` tokens.
    fn embed(&self, c: &Tensor) -> Result<Tensor>;
}

/// The x0-predictor: clean latent from a noisy one.
pub trait Denoiser {
    fn denoise(&self, z_t: &Tensor, emb: &Tensor, t: &[usize]) -> Result<Tensor>;
}

pub trait AmplitudeCorrector {
    fn correct(&self, decoded: &Tensor, phase: &Tensor) -> Result<Tensor>;
}

impl LatentAutoencoder for Autoencoder {
    fn encode(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        Autoencoder::encode(self, x)
    }
    fn decode(&self, z: &Tensor) -> Result<Tensor> {
        Autoencoder::decode(self, z)
    }
}

impl ConditionEncoder for CondEncoder {
    fn embed(&self, c: &Tensor) -> Result<Tensor> {
        self.forward(c)
    }
}

impl Denoiser for UNet {
    fn denoise(&self, z_t: &Tensor, emb: &Tensor, t: &[usize]) -> Result<Tensor> {
        self.forward(z_t, emb, t)
    }
}

impl AmplitudeCorrector for Acm {
    fn correct(&self, decoded: &Tensor, phase: &Tensor) -> Result<Tensor> {
        self.forward(decoded, phase)
    }
}

/// Borrowed view of the four components, so losses and samplers also accept
/// stand-in networks.
#[derive(Clone, Copy)]
pub struct Components<'a> {
    pub autoencoder: &'a dyn LatentAutoencoder,
    pub cond: &'a dyn ConditionEncoder,
    pub denoiser: &'a dyn Denoiser,
    pub acm: Option<&'a dyn AmplitudeCorrector>,
}

/// All trainable networks sharing one parameter store under the prefixes
/// `ae`, `cond`, `unet` and `acm`.
#[derive(Debug, Clone)]
pub struct Nets {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub autoencoder: Autoencoder,
    pub cond: CondEncoder,
    pub unet: UNet,
    pub acm: Option<Acm>,
}

impl Nets {
    pub fn new(config: &ModelConfig, max_timestep: usize, seed: u64, dtype: DType) -> Result<Self> {
        config.validate()?;
        let store = ParamStore::new(seed, dtype);
        let root = store.root();
        let nets = Self {
            config: config.clone(),
            autoencoder: Autoencoder::new(&root.sub("ae"), config)?,
            cond: CondEncoder::new(&root.sub("cond"), config)?,
            unet: UNet::new(&root.sub("unet"), config, max_timestep)?,
            acm: if config.use_acm {
                Some(Acm::new(&root.sub("acm"), config)?)
            } else {
                None
            },
            store,
        };
        if let Some(max) = config.max_parameters {
            let n = nets.store.parameter_count();
            if n > max {
                return Err(Error::Config(format!("model has {n} parameters, budget is {max}")));
            }
        }
        Ok(nets)
    }

    pub fn components(&self) -> Components<'_> {
        Components {
            autoencoder: &self.autoencoder,
            cond: &self.cond,
            denoiser: &self.unet,
            acm: self.acm.as_ref().map(|a| a as &dyn AmplitudeCorrector),
        }
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    /// Per-item latent shape `[channels, LATENT_H, LATENT_W]`.
    pub fn latent_shape(&self) -> [usize; 3] {
        [self.config.latent_channels, LATENT_H, LATENT_W]
    }
}
