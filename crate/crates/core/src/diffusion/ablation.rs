//! Two-stage baseline: pretrain the autoencoder as a VAE on standardized
//! spectrograms, then train the denoiser in its frozen latent space.

use std::collections::HashMap;

use candle_core::{DType, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::loss::{loss_latent, LossBatch};
use super::optim::{AdamW, AdamWConfig};
use super::tensors::{condition_batch, randn, spectrogram_batch};
use super::{NoiseSchedule, ScheduleConfig};
use crate::features::{
    encode_condition, standardize, waveform_to_spectrogram_with, RegionNormalization, Spectrogram, SpectrogramStats,
    DEFAULT_LOG_EPSILON,
};
use crate::nets::{
    hinge_d_loss, hinge_g_loss, Autoencoder, ModelConfig, Nets, ParamStore, PatchDiscriminator, LATENT_H, LATENT_W,
};
use crate::seisdata::{Catalog, PairSampler, SourcePolicy, Split, TraceEntry};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct VaeConfig {
    pub kl_weight: f64,
    /// Weight of the generator hinge term.
    pub adversarial_weight: f64,
    pub discriminator_width: usize,
    pub optimizer: AdamWConfig,
    pub batch_size: usize,
    pub snr_gamma: f64,
    pub log_epsilon: f64,
    /// Traces used for the standardization statistics.
    pub stats_traces: usize,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            kl_weight: 1e-6,
            adversarial_weight: 0.1,
            discriminator_width: 32,
            optimizer: AdamWConfig {
                lr: 1e-4,
                ..Default::default()
            },
            batch_size: 4,
            snr_gamma: 5.0,
            log_epsilon: DEFAULT_LOG_EPSILON,
            stats_traces: 64,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if !(self.kl_weight >= 0.0 && self.adversarial_weight >= 0.0) {
            return Err(Error::Config("VAE loss weights must be non-negative".into()));
        }
        if self.batch_size == 0 || self.discriminator_width == 0 || self.stats_traces == 0 {
            return Err(Error::Config("VAE batch, discriminator width and stats count must be positive".into()));
        }
        Ok(())
    }
}

/// Scalar values of the pretraining terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VaeLossTerms {
    pub reconstruction: f64,
    pub kl: f64,
    pub generator: f64,
    pub discriminator: f64,
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Autoencoder objective (L1 reconstruction, weighted KL and generator hinge)
/// and the discriminator hinge objective, on a standardized batch `x`.
pub fn vae_losses(
    ae: &Autoencoder,
    disc: &PatchDiscriminator,
    x: &Tensor,
    eps: &Tensor,
    cfg: &VaeConfig,
) -> Result<(Tensor, Tensor, VaeLossTerms)> {
    let (mean, logvar) = ae.encode(x)?;
    let z = Autoencoder::reparameterize(&mean, &logvar, eps)?;
    let recon = ae.decode(&z)?;
    let l1 = (&recon - x)?.abs()?.mean_all()?;
    let kl = Autoencoder::kl(&mean, &logvar)?;
    let gen = hinge_g_loss(&disc.forward(&recon)?)?;
    let ae_loss = ((&l1 + (&kl * cfg.kl_weight)?)? + (&gen * cfg.adversarial_weight)?)?;
    let d_loss = hinge_d_loss(&disc.forward(x)?, &disc.forward(&recon.detach())?)?;
    let terms = VaeLossTerms {
        reconstruction: scalar(&l1)?,
        kl: scalar(&kl)?,
        generator: scalar(&gen)?,
        discriminator: scalar(&d_loss)?,
    };
    for (name, v) in [("reconstruction", terms.reconstruction), ("kl", terms.kl), ("discriminator", terms.discriminator)] {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss {
                value: v,
                timesteps: Vec::new(),
            });
        }
        log::trace!("vae {name} {v}");
    }
    Ok((ae_loss, d_loss, terms))
}

fn gradients(loss: &Tensor, params: &[(String, Var)]) -> Result<HashMap<String, Tensor>> {
    let g = loss.backward()?;
    Ok(params
        .iter()
        .filter_map(|(n, v)| g.get(v.as_tensor()).map(|t| (n.clone(), t.clone())))
        .collect())
}

/// State of the two-stage baseline.
pub struct VaeAblation<'a> {
    catalog: &'a Catalog,
    pub config: VaeConfig,
    pub schedule: NoiseSchedule,
    pub nets: Nets,
    pub stats: SpectrogramStats,
    disc_store: ParamStore,
    disc: PatchDiscriminator,
    ae_opt: AdamW,
    disc_opt: AdamW,
    latent_opt: AdamW,
    entries: Vec<&'a TraceEntry>,
    events: Vec<String>,
    sampler: PairSampler,
    norms: RegionNormalization,
    seed: u64,
    pretrain_steps: usize,
    latent_steps: usize,
}

impl<'a> VaeAblation<'a> {
    pub fn new(
        catalog: &'a Catalog,
        model: &ModelConfig,
        schedule: &ScheduleConfig,
        config: &VaeConfig,
        norms: &RegionNormalization,
        seed: u64,
        dtype: DType,
    ) -> Result<Self> {
        config.validate()?;
        let schedule = NoiseSchedule::new(*schedule)?;
        let nets = Nets::new(model, schedule.timesteps(), seed, dtype)?;
        let disc_store = ParamStore::new(seed ^ 0xd15c, dtype);
        let disc = PatchDiscriminator::new(&disc_store.root().sub("disc"), config.discriminator_width)?;
        let entries = catalog.entries_in(Split::Train);
        if entries.is_empty() {
            return Err(Error::Catalog("training split has no traces".into()));
        }
        let specs = entries
            .iter()
            .take(config.stats_traces)
            .map(|e| Ok(waveform_to_spectrogram_with(&catalog.load_trace(e)?, config.log_epsilon)))
            .collect::<Result<Vec<_>>>()?;
        let stats = SpectrogramStats::compute(specs.iter())?;
        let events = catalog
            .event_ids(Split::Train)
            .into_iter()
            .filter(|e| !catalog.traces_of(e).is_empty())
            .collect();
        Ok(Self {
            catalog,
            config: config.clone(),
            schedule,
            nets,
            stats,
            disc_store,
            disc,
            ae_opt: AdamW::new(config.optimizer)?,
            disc_opt: AdamW::new(config.optimizer)?,
            latent_opt: AdamW::new(config.optimizer)?,
            entries,
            events,
            sampler: PairSampler::new(norms.clone(), SourcePolicy::default()),
            norms: norms.clone(),
            seed,
            pretrain_steps: 0,
            latent_steps: 0,
        })
    }

    fn rng(&self, stage: u64, step: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ stage);
        rng.set_stream(step as u64);
        rng
    }

    fn standardized(&self, event_id: &str, station_id: &str) -> Result<Spectrogram> {
        let trace = self.catalog.trace(event_id, station_id)?;
        standardize(&waveform_to_spectrogram_with(&trace, self.config.log_epsilon), &self.stats)
    }

    /// One autoencoder and one discriminator update on random training
    /// traces.
    pub fn pretrain_step(&mut self) -> Result<VaeLossTerms> {
        let mut rng = self.rng(0x7661_65, self.pretrain_steps);
        let specs = (0..self.config.batch_size)
            .map(|_| {
                let e = self.entries[rng.random_range(0..self.entries.len())];
                self.standardized(&e.event_id, &e.station_id)
            })
            .collect::<Result<Vec<_>>>()?;
        let dtype = self.nets.dtype();
        let x = spectrogram_batch(&specs.iter().collect::<Vec<_>>(), dtype)?;
        let latent = self.nets.config.latent_channels;
        let eps = randn(&mut rng, &[self.config.batch_size, latent, LATENT_H, LATENT_W], dtype)?;
        let (ae_loss, d_loss, terms) = vae_losses(&self.nets.autoencoder, &self.disc, &x, &eps, &self.config)?;
        let ae_params = self.nets.store.vars_with_prefix("ae.");
        let disc_params = self.disc_store.vars();
        let ae_grads = gradients(&ae_loss, &ae_params)?;
        let d_grads = gradients(&d_loss, &disc_params)?;
        let lr = self.config.optimizer.lr;
        self.ae_opt.step(&ae_params, &ae_grads, lr)?;
        self.disc_opt.step(&disc_params, &d_grads, lr)?;
        self.pretrain_steps += 1;
        Ok(terms)
    }

    /// One latent-space denoiser update with the autoencoder frozen.
    pub fn latent_step(&mut self) -> Result<f64> {
        if self.events.is_empty() {
            return Err(Error::Catalog("training split has no events with traces".into()));
        }
        let mut rng = self.rng(0x6c61_74, self.latent_steps);
        let b = self.config.batch_size;
        let (mut src, mut tgt, mut conds, mut ts) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for _ in 0..b {
            let event_id = &self.events[rng.random_range(0..self.events.len())];
            let (s, g, _) = self.sampler.choose(self.catalog, event_id, rng.random())?;
            let event = self.catalog.event(event_id).expect("listed event exists");
            let station = self
                .catalog
                .station(&g.station_id)
                .ok_or_else(|| Error::NotFound(format!("station {}", g.station_id)))?;
            conds.push(encode_condition(event, station, &self.norms)?);
            src.push(self.standardized(event_id, &s.station_id)?);
            tgt.push(self.standardized(event_id, &g.station_id)?);
            ts.push(rng.random_range(1..=self.schedule.timesteps()));
        }
        let dtype = self.nets.dtype();
        let batch = LossBatch {
            x_src: spectrogram_batch(&src.iter().collect::<Vec<_>>(), dtype)?,
            x_tgt: spectrogram_batch(&tgt.iter().collect::<Vec<_>>(), dtype)?,
            cond: condition_batch(&conds, dtype)?,
        };
        let latent = self.nets.config.latent_channels;
        let noise = randn(&mut rng, &[b, latent, LATENT_H, LATENT_W], dtype)?;
        let loss = loss_latent(
            &self.schedule,
            &batch,
            &ts,
            &noise,
            &self.nets.cond,
            &self.nets.unet,
            &self.nets.autoencoder,
            self.config.snr_gamma,
        )?;
        let mut params = self.nets.store.vars_with_prefix("cond.");
        params.extend(self.nets.store.vars_with_prefix("unet."));
        let grads = gradients(&loss, &params)?;
        self.latent_opt.step(&params, &grads, self.config.optimizer.lr)?;
        self.latent_steps += 1;
        scalar(&loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seisdata::toy_catalog;

    fn setup(catalog: &Catalog) -> VaeAblation<'_> {
        let cfg = VaeConfig {
            batch_size: 1,
            discriminator_width: 8,
            ..Default::default()
        };
        let schedule = ScheduleConfig {
            timesteps: 10,
            ..Default::default()
        };
        VaeAblation::new(catalog, &ModelConfig::micro(), &schedule, &cfg, &RegionNormalization::default(), 1, DType::F32)
            .unwrap()
    }

    #[test]
    fn stats_standardize_training_data() {
        let catalog = toy_catalog(2, 2, 5, &RegionNormalization::default()).unwrap();
        let ab = setup(&catalog);
        let e = &catalog.entries()[0];
        let s = ab.standardized(&e.event_id, &e.station_id).unwrap();
        let n = s.values().len() as f64;
        let mean = s.values().iter().map(|&v| v as f64).sum::<f64>() / n;
        assert!(mean.abs() < 1.5, "{mean}");
    }

    #[test]
    fn pretraining_leaves_denoiser_and_latent_stage_leaves_autoencoder() {
        let catalog = toy_catalog(2, 2, 5, &RegionNormalization::default()).unwrap();
        let mut ab = setup(&catalog);
        let snapshot = |ab: &VaeAblation, prefix: &str| {
            let mut v: Vec<(String, Tensor)> = ab
                .nets
                .store
                .vars_with_prefix(prefix)
                .into_iter()
                .map(|(k, v)| (k, v.as_tensor().copy().unwrap()))
                .collect();
            v.sort_by(|a, b| a.0.cmp(&b.0));
            v
        };
        let same = |a: &[(String, Tensor)], b: &[(String, Tensor)]| {
            a.iter().zip(b).all(|((_, x), (_, y))| {
                x.flatten_all().unwrap().to_vec1::<f32>().unwrap() == y.flatten_all().unwrap().to_vec1::<f32>().unwrap()
            })
        };
        let (unet0, ae0) = (snapshot(&ab, "unet."), snapshot(&ab, "ae."));
        let terms = ab.pretrain_step().unwrap();
        assert!(terms.reconstruction > 0.0 && terms.kl.is_finite() && terms.discriminator >= 0.0);
        assert!(same(&unet0, &snapshot(&ab, "unet.")));
        assert!(!same(&ae0, &snapshot(&ab, "ae.")));
        let ae1 = snapshot(&ab, "ae.");
        let loss = ab.latent_step().unwrap();
        assert!(loss.is_finite() && loss >= 0.0);
        assert!(same(&ae1, &snapshot(&ab, "ae.")));
        assert!(!same(&unet0, &snapshot(&ab, "unet.")));
    }
}
