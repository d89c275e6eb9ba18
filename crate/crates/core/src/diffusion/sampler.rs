use candle_core::{DType, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::loss::{decode_and_correct, q_sample, PhaseMode};
use super::tensors::{condition_batch, randn, spectrogram_batch, unbatch_f32};
use super::NoiseSchedule;
use crate::features::{
    spectrogram_to_waveform_with, waveform_to_spectrogram_with, ConditionVector, GriffinLimConfig, Spectrogram,
    DEFAULT_LOG_EPSILON,
};
use crate::nets::{Components, Denoiser};
use crate::seisdata::Trace;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Timestep the reverse chain starts from.
    pub steps: usize,
    /// Start from the noised source latent instead of pure noise.
    pub with_source: bool,
    pub seed: u64,
    /// Scale of the noise added to the source latent at the start. Zero
    /// gives a deterministic start for debugging.
    pub init_noise_scale: f64,
    /// Phase retrieval for both the amplitude correction input and the
    /// final waveform.
    pub griffin_lim: GriffinLimConfig,
    pub log_epsilon: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            with_source: false,
            seed: 0,
            init_noise_scale: 1.0,
            griffin_lim: GriffinLimConfig::default(),
            log_epsilon: DEFAULT_LOG_EPSILON,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, schedule: &NoiseSchedule) -> Result<()> {
        if self.steps < 1 || self.steps > schedule.timesteps() {
            return Err(Error::Config(format!(
                "sampler steps {} outside 1..={}",
                self.steps,
                schedule.timesteps()
            )));
        }
        if !(self.init_noise_scale >= 0.0 && self.init_noise_scale.is_finite()) {
            return Err(Error::Config("init_noise_scale must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// One reverse step: posterior mean around the denoiser's x0 estimate plus
/// `σ_t noise`. No noise is added at t = 1.
pub fn p_sample_step(
    schedule: &NoiseSchedule,
    denoiser: &dyn Denoiser,
    z_t: &Tensor,
    emb: &Tensor,
    t: usize,
    noise: &Tensor,
) -> Result<Tensor> {
    let b = z_t.dim(0)?;
    let x0 = denoiser.denoise(z_t, emb, &vec![t; b])?;
    let (c0, ct, sigma) = schedule.posterior(t)?;
    let mut z = ((x0 * c0)? + (z_t * ct)?)?;
    if t > 1 {
        z = (z + (noise * sigma)?)?;
    }
    let finite = z.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?.iter().all(|v| v.is_finite());
    if !finite {
        return Err(Error::SamplerDivergence { t });
    }
    Ok(z)
}

/// Run the reverse chain from `start` at timestep `steps` down to 1.
pub fn reverse_loop(
    schedule: &NoiseSchedule,
    denoiser: &dyn Denoiser,
    start: Tensor,
    emb: &Tensor,
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    // Inference only: drop the autograd history each step, otherwise every
    // intermediate of the whole chain stays alive.
    let mut z = start.detach();
    let emb = emb.detach();
    let shape = z.dims().to_vec();
    for t in (1..=steps).rev() {
        let noise = if t > 1 {
            randn(rng, &shape, z.dtype())?
        } else {
            z.zeros_like()?
        };
        z = p_sample_step(schedule, denoiser, &z, &emb, t, &noise)?.detach();
    }
    Ok(z)
}

/// Latent samples for a batch of conditions. `sources` holds the source
/// spectrogram batch when sampling with a source.
pub fn sample_latents(
    schedule: &NoiseSchedule,
    nets: Components<'_>,
    cond: &Tensor,
    sources: Option<&Tensor>,
    latent_shape: &[usize],
    config: &SamplerConfig,
) -> Result<Tensor> {
    config.validate(schedule)?;
    let b = cond.dim(0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut shape = vec![b];
    shape.extend_from_slice(latent_shape);
    let dtype = cond.dtype();
    let start = match (config.with_source, sources) {
        (true, Some(x_src)) => {
            let (z_src, _) = nets.autoencoder.encode(x_src)?;
            let eps = (randn(&mut rng, z_src.dims(), dtype)? * config.init_noise_scale)?;
            q_sample(schedule, &z_src, &vec![config.steps; b], &eps)?
        }
        (true, None) => return Err(Error::InvalidInput("with_source sampling needs source traces".into())),
        (false, _) => randn(&mut rng, &shape, dtype)?,
    };
    let emb = nets.cond.embed(cond)?;
    reverse_loop(schedule, nets.denoiser, start, &emb, config.steps, &mut rng)
}

/// Synthesize log-amplitude spectrograms for a batch of conditions.
pub fn sample_spectrograms(
    schedule: &NoiseSchedule,
    nets: Components<'_>,
    conds: &[ConditionVector],
    sources: Option<&[Trace]>,
    latent_shape: &[usize],
    config: &SamplerConfig,
    dtype: DType,
) -> Result<Vec<Spectrogram>> {
    if let Some(s) = sources {
        if s.len() != conds.len() {
            return Err(Error::shape("sample sources", conds.len(), s.len()));
        }
    }
    let cond = condition_batch(conds, dtype)?;
    let src_specs: Option<Vec<Spectrogram>> = sources.map(|s| {
        s.iter()
            .map(|t| waveform_to_spectrogram_with(t, config.log_epsilon))
            .collect()
    });
    let x_src = match &src_specs {
        Some(v) => Some(spectrogram_batch(&v.iter().collect::<Vec<_>>(), dtype)?),
        None => None,
    };
    let z0 = sample_latents(schedule, nets, &cond, x_src.as_ref(), latent_shape, config)?;
    let out = decode_and_correct(nets, &z0, &PhaseMode::GriffinLim(config.griffin_lim.clone()), config.log_epsilon)?
        .detach();
    unbatch_f32(&out)?
        .into_iter()
        .map(|v| Spectrogram::new(v, config.log_epsilon))
        .collect()
}

/// Synthesize one 3-component waveform for `cond`.
pub fn sample(
    schedule: &NoiseSchedule,
    nets: Components<'_>,
    cond: &ConditionVector,
    source: Option<&Trace>,
    latent_shape: &[usize],
    config: &SamplerConfig,
    dtype: DType,
) -> Result<Trace> {
    let sources = source.map(|s| vec![s.clone()]);
    let specs = sample_spectrograms(
        schedule,
        nets,
        std::slice::from_ref(cond),
        sources.as_deref(),
        latent_shape,
        config,
        dtype,
    )?;
    let wave = spectrogram_to_waveform_with(&specs[0], &config.griffin_lim)?;
    Trace::from_samples(wave)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::loss::tests::{IdentityAe, Oracle, Scale, ZeroCond};
    use crate::diffusion::make_schedule;
    use crate::nets::{ModelConfig, Nets, LATENT_H, LATENT_W};
    use candle_core::Device;

    fn target(seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        randn(&mut rng, &[2, 4, 16, 94], DType::F64).unwrap()
    }

    fn max_abs(a: &Tensor, b: &Tensor) -> f64 {
        (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap()
    }

    #[test]
    fn final_step_returns_oracle_exactly() {
        let s = make_schedule(1000).unwrap();
        let z_star = target(1);
        let z_t = target(2);
        let out = p_sample_step(&s, &Oracle(z_star.clone()), &z_t, &z_t, 1, &target(3)).unwrap();
        assert_eq!(max_abs(&out, &z_star), 0.0);
    }

    #[test]
    fn oracle_chain_converges_from_any_noise() {
        let s = make_schedule(1000).unwrap();
        let z_star = target(4);
        let oracle = Oracle(z_star.clone());
        for seed in 0..3u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let start = randn(&mut rng, &[2, 4, 16, 94], DType::F64).unwrap();
            let out = reverse_loop(&s, &oracle, start, &z_star, 1000, &mut rng).unwrap();
            assert!(max_abs(&out, &z_star) < 1e-5);
        }
    }

    #[test]
    fn divergence_is_reported_with_timestep() {
        let s = make_schedule(10).unwrap();
        let z = target(5);
        let err = p_sample_step(&s, &Scale(f64::INFINITY), &z, &z, 7, &z).unwrap_err();
        assert!(matches!(err, Error::SamplerDivergence { t: 7 }));
    }

    #[test]
    fn seeded_latents_reproduce_and_differ_across_seeds() {
        let s = make_schedule(50).unwrap();
        let den = Scale(0.9);
        let nets = Components {
            autoencoder: &IdentityAe,
            cond: &ZeroCond,
            denoiser: &den,
            acm: None,
        };
        let cond = Tensor::zeros((1, 11), DType::F64, &Device::Cpu).unwrap();
        let mut cfg = SamplerConfig {
            steps: 50,
            ..SamplerConfig::default()
        };
        let a = sample_latents(&s, nets, &cond, None, &[4, 16, 94], &cfg).unwrap();
        let b = sample_latents(&s, nets, &cond, None, &[4, 16, 94], &cfg).unwrap();
        assert_eq!(max_abs(&a, &b), 0.0);
        cfg.seed = 1;
        let c = sample_latents(&s, nets, &cond, None, &[4, 16, 94], &cfg).unwrap();
        assert!(max_abs(&a, &c) > 0.0);
        cfg.steps = 51;
        assert!(sample_latents(&s, nets, &cond, None, &[4, 16, 94], &cfg).is_err());
    }

    #[test]
    fn deterministic_single_step_from_source_reconstructs_decoded_source() {
        let s = make_schedule(1000).unwrap();
        let model = Nets::new(&ModelConfig::micro(), 1000, 1, DType::F64).unwrap();
        let den = Scale(1.0);
        let nets = Components {
            autoencoder: &model.autoencoder,
            cond: &model.cond,
            denoiser: &den,
            acm: None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = randn(&mut rng, &[1, 3, 64, 376], DType::F64).unwrap();
        let cond = Tensor::zeros((1, 11), DType::F64, &Device::Cpu).unwrap();
        let cfg = SamplerConfig {
            steps: 1,
            with_source: true,
            init_noise_scale: 0.0,
            ..SamplerConfig::default()
        };
        let z = sample_latents(&s, nets, &cond, Some(&x), &[4, LATENT_H, LATENT_W], &cfg).unwrap();
        let out = model.autoencoder.decode(&z).unwrap();
        let reference = model.autoencoder.decode(&model.autoencoder.encode(&x).unwrap().0).unwrap();
        let scale = reference.abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(max_abs(&out, &reference) < 1e-3 * scale.max(1.0));
    }

    #[test]
    fn sampled_latents_carry_no_graph() {
        let s = make_schedule(1000).unwrap();
        let model = Nets::new(&ModelConfig::micro(), 1000, 1, DType::F32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = randn(&mut rng, &[1, 3, 64, 376], DType::F32).unwrap();
        let cond = Tensor::zeros((1, 11), DType::F32, &Device::Cpu).unwrap();
        let cfg = SamplerConfig {
            steps: 2,
            with_source: true,
            ..SamplerConfig::default()
        };
        let z = sample_latents(&s, model.components(), &cond, Some(&x), &[4, LATENT_H, LATENT_W], &cfg).unwrap();
        assert!(!z.track_op());
    }

    #[test]
    fn sampled_trace_has_contract_shape() {
        let s = make_schedule(1000).unwrap();
        let model = Nets::new(&ModelConfig::micro(), 1000, 1, DType::F32).unwrap();
        let cond = ConditionVector::from_slice(&[0.1; 11]).unwrap();
        let cfg = SamplerConfig {
            steps: 3,
            griffin_lim: GriffinLimConfig {
                iterations: 4,
                ..GriffinLimConfig::default()
            },
            ..SamplerConfig::default()
        };
        let a = sample(&s, model.components(), &cond, None, &[4, LATENT_H, LATENT_W], &cfg, DType::F32).unwrap();
        assert_eq!(a.samples().len(), 3 * 6000);
        let cfg2 = SamplerConfig { seed: 9, ..cfg };
        let b = sample(&s, model.components(), &cond, None, &[4, LATENT_H, LATENT_W], &cfg2, DType::F32).unwrap();
        let d: f64 = a.samples().iter().zip(b.samples()).map(|(x, y)| ((x - y) as f64).powi(2)).sum();
        assert!(d > 0.0);
    }
}
