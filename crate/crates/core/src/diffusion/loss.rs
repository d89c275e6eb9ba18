use candle_core::{DType, Tensor};

use super::tensors::{condition_batch, per_item, spectrogram_batch, unbatch_f32};
use super::NoiseSchedule;
use crate::features::{griffin_lim_phase, GriffinLimConfig, DEFAULT_LOG_EPSILON};
use crate::nets::{Components, ConditionEncoder, Denoiser, LatentAutoencoder};
use crate::seisdata::PairedSample;
use crate::features::waveform_to_spectrogram_with;
use crate::{Error, Result};

/// Spectrogram tensors of a batch of pairs.
#[derive(Debug, Clone)]
pub struct LossBatch {
    /// `(B, 3, 64, 376)`
    pub x_src: Tensor,
    pub x_tgt: Tensor,
    /// `(B, 11)`
    pub cond: Tensor,
}

impl LossBatch {
    pub fn from_pairs(pairs: &[PairedSample], log_epsilon: f64, dtype: DType) -> Result<Self> {
        let src: Vec<_> = pairs.iter().map(|p| waveform_to_spectrogram_with(&p.source, log_epsilon)).collect();
        let tgt: Vec<_> = pairs.iter().map(|p| waveform_to_spectrogram_with(&p.target, log_epsilon)).collect();
        let conds: Vec<_> = pairs.iter().map(|p| p.condition).collect();
        Ok(Self {
            x_src: spectrogram_batch(&src.iter().collect::<Vec<_>>(), dtype)?,
            x_tgt: spectrogram_batch(&tgt.iter().collect::<Vec<_>>(), dtype)?,
            cond: condition_batch(&conds, dtype)?,
        })
    }

    pub fn len(&self) -> usize {
        self.cond.dims()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Where the amplitude-correction module gets its phase input.
#[derive(Debug, Clone)]
pub enum PhaseMode {
    /// Griffin-Lim on the decoded amplitude; the phase is treated as a
    /// constant input, not differentiated through.
    GriffinLim(GriffinLimConfig),
    /// A fixed `(B, 3, 64, 376)` phase tensor.
    Given(Tensor),
}

impl Default for PhaseMode {
    fn default() -> Self {
        PhaseMode::GriffinLim(GriffinLimConfig::default())
    }
}

#[derive(Debug, Clone)]
pub struct LossOptions {
    pub snr_gamma: f64,
    pub phase: PhaseMode,
    pub log_epsilon: f64,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            snr_gamma: 5.0,
            phase: PhaseMode::default(),
            log_epsilon: DEFAULT_LOG_EPSILON,
        }
    }
}

fn check_t(schedule: &NoiseSchedule, t: &[usize], batch: usize) -> Result<()> {
    if t.len() != batch {
        return Err(Error::shape("timesteps", batch, t.len()));
    }
    for &s in t {
        schedule.alpha_bar(s)?;
    }
    Ok(())
}

/// `sqrt(ab_t) z0 + sqrt(1 - ab_t) noise`, per batch item.
pub fn q_sample(schedule: &NoiseSchedule, z0: &Tensor, t: &[usize], noise: &Tensor) -> Result<Tensor> {
    q_sample_masked(schedule, z0, t, noise, &vec![false; t.len()])
}

/// Like [`q_sample`], but items flagged in `pure_noise` get `noise` alone.
fn q_sample_masked(
    schedule: &NoiseSchedule,
    z0: &Tensor,
    t: &[usize],
    noise: &Tensor,
    pure_noise: &[bool],
) -> Result<Tensor> {
    let b = z0.dim(0)?;
    check_t(schedule, t, b)?;
    if noise.dims() != z0.dims() {
        return Err(Error::shape("q_sample noise", format!("{:?}", z0.dims()), format!("{:?}", noise.dims())));
    }
    let mut a = Vec::with_capacity(b);
    let mut s = Vec::with_capacity(b);
    for (&ti, &drop) in t.iter().zip(pure_noise) {
        let ab = schedule.alpha_bar(ti)?;
        if drop {
            a.push(0.0);
            s.push(1.0);
        } else {
            a.push(ab.sqrt());
            s.push((1.0 - ab).sqrt());
        }
    }
    let dtype = z0.dtype();
    Ok((z0.broadcast_mul(&per_item(&a, dtype)?)? + noise.broadcast_mul(&per_item(&s, dtype)?)?)?)
}

/// Batch mean of per-item MSE times min(SNR, γ)/SNR.
fn weighted_mse(schedule: &NoiseSchedule, pred: &Tensor, target: &Tensor, t: &[usize], gamma: f64) -> Result<Tensor> {
    let b = pred.dim(0)?;
    let per = (pred - target)?.sqr()?.reshape((b, ()))?.mean(1)?;
    let w: Vec<f64> = t.iter().map(|&s| schedule.snr_weight(s, gamma)).collect::<Result<_>>()?;
    let w = Tensor::from_vec(w, b, pred.device())?.to_dtype(pred.dtype())?;
    Ok((per * w)?.mean_all()?)
}

fn check_finite(loss: &Tensor, t: &[usize]) -> Result<()> {
    let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss {
            value,
            timesteps: t.to_vec(),
        });
    }
    Ok(())
}

/// Griffin-Lim phase of each decoded log-amplitude spectrogram.
pub fn decoded_phase(decoded: &Tensor, log_epsilon: f64, config: &GriffinLimConfig) -> Result<Tensor> {
    let items = unbatch_f32(&decoded.detach())?;
    let mut v = Vec::with_capacity(items.len() * items.first().map_or(0, Vec::len));
    for item in &items {
        v.extend(griffin_lim_phase(item, log_epsilon, config));
    }
    Ok(Tensor::from_vec(v, decoded.dims(), decoded.device())?.to_dtype(decoded.dtype())?)
}

/// Decoder output followed by amplitude correction, when present.
pub fn decode_and_correct(
    nets: Components<'_>,
    latent: &Tensor,
    phase: &PhaseMode,
    log_epsilon: f64,
) -> Result<Tensor> {
    let decoded = nets.autoencoder.decode(latent)?;
    let Some(acm) = nets.acm else {
        return Ok(decoded);
    };
    let phase = match phase {
        PhaseMode::GriffinLim(cfg) => decoded_phase(&decoded, log_epsilon, cfg)?,
        PhaseMode::Given(p) => p.clone(),
    };
    acm.correct(&decoded, &phase)
}

/// End-to-end paired loss: the source latent (encoder mean) is noised to
/// `t`, denoised under the target condition, decoded, amplitude-corrected
/// and compared with the target spectrogram.
///
/// Items flagged in `drop_source` start from pure noise instead of the
/// noised source latent; callers pair them with `t = T`.
pub fn loss_end_to_end(
    schedule: &NoiseSchedule,
    batch: &LossBatch,
    t: &[usize],
    noise: &Tensor,
    drop_source: &[bool],
    nets: Components<'_>,
    options: &LossOptions,
) -> Result<Tensor> {
    if drop_source.len() != t.len() {
        return Err(Error::shape("drop_source", t.len(), drop_source.len()));
    }
    let (z_src, _) = nets.autoencoder.encode(&batch.x_src)?;
    let z_t = q_sample_masked(schedule, &z_src, t, noise, drop_source)?;
    let emb = nets.cond.embed(&batch.cond)?;
    let z0_hat = nets.denoiser.denoise(&z_t, &emb, t)?;
    let out = decode_and_correct(nets, &z0_hat, &options.phase, options.log_epsilon)?;
    let loss = weighted_mse(schedule, &out, &batch.x_tgt, t, options.snr_gamma)?;
    check_finite(&loss, t)?;
    Ok(loss)
}

/// Latent-space paired loss against a frozen autoencoder.
#[allow(clippy::too_many_arguments)]
pub fn loss_latent(
    schedule: &NoiseSchedule,
    batch: &LossBatch,
    t: &[usize],
    noise: &Tensor,
    cond: &dyn ConditionEncoder,
    denoiser: &dyn Denoiser,
    frozen_ae: &dyn LatentAutoencoder,
    snr_gamma: f64,
) -> Result<Tensor> {
    let z_src = frozen_ae.encode(&batch.x_src)?.0.detach();
    let z_tgt = frozen_ae.encode(&batch.x_tgt)?.0.detach();
    let z_t = q_sample(schedule, &z_src, t, noise)?;
    let pred = denoiser.denoise(&z_t, &cond.embed(&batch.cond)?, t)?;
    let loss = weighted_mse(schedule, &pred, &z_tgt, t, snr_gamma)?;
    check_finite(&loss, t)?;
    Ok(loss)
}

/// Single-trace latent diffusion loss: noise the latent of `x` and predict
/// it back.
#[allow(clippy::too_many_arguments)]
pub fn conventional_dm_loss(
    schedule: &NoiseSchedule,
    x: &Tensor,
    cond_vec: &Tensor,
    t: &[usize],
    noise: &Tensor,
    cond: &dyn ConditionEncoder,
    denoiser: &dyn Denoiser,
    frozen_ae: &dyn LatentAutoencoder,
    snr_gamma: f64,
) -> Result<Tensor> {
    let z0 = frozen_ae.encode(x)?.0.detach();
    let z_t = q_sample(schedule, &z0, t, noise)?;
    let pred = denoiser.denoise(&z_t, &cond.embed(cond_vec)?, t)?;
    let loss = weighted_mse(schedule, &pred, &z0, t, snr_gamma)?;
    check_finite(&loss, t)?;
    Ok(loss)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::diffusion::make_schedule;
    use crate::diffusion::tensors::randn;
    use crate::nets::{AmplitudeCorrector, ModelConfig, Nets};
    use candle_core::Device;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Latent equals the input; decoding is the identity.
    pub(crate) struct IdentityAe;
    impl LatentAutoencoder for IdentityAe {
        fn encode(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
            Ok((x.clone(), x.zeros_like()?))
        }
        fn decode(&self, z: &Tensor) -> Result<Tensor> {
            Ok(z.clone())
        }
    }

    pub(crate) struct ZeroCond;
    impl ConditionEncoder for ZeroCond {
        fn embed(&self, c: &Tensor) -> Result<Tensor> {
            Ok(Tensor::zeros((c.dim(0)?, 1, 4), c.dtype(), c.device())?)
        }
    }

    /// Always predicts the same clean latent.
    pub(crate) struct Oracle(pub Tensor);
    impl Denoiser for Oracle {
        fn denoise(&self, _: &Tensor, _: &Tensor, _: &[usize]) -> Result<Tensor> {
            Ok(self.0.clone())
        }
    }

    pub(crate) struct Scale(pub f64);
    impl Denoiser for Scale {
        fn denoise(&self, z: &Tensor, _: &Tensor, _: &[usize]) -> Result<Tensor> {
            Ok((z * self.0)?)
        }
    }

    struct IdentityAcm;
    impl AmplitudeCorrector for IdentityAcm {
        fn correct(&self, d: &Tensor, _: &Tensor) -> Result<Tensor> {
            Ok(d.clone())
        }
    }

    fn rand_batch(b: usize, seed: u64, dtype: DType) -> LossBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LossBatch {
            x_src: randn(&mut rng, &[b, 3, 64, 376], dtype).unwrap(),
            x_tgt: randn(&mut rng, &[b, 3, 64, 376], dtype).unwrap(),
            cond: randn(&mut rng, &[b, 11], dtype).unwrap(),
        }
    }

    fn scalar(t: &Tensor) -> f64 {
        t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
    }

    #[test]
    fn q_sample_first_step_is_nearly_clean() {
        let s = make_schedule(1000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z0 = randn(&mut rng, &[1, 4, 16, 94], DType::F64).unwrap();
        let eps = randn(&mut rng, &[1, 4, 16, 94], DType::F64).unwrap();
        let z1 = q_sample(&s, &z0, &[1], &eps).unwrap();
        let dist = scalar(&(&z1 - &z0).unwrap().sqr().unwrap().sum_all().unwrap()).sqrt();
        let eps_norm = scalar(&eps.sqr().unwrap().sum_all().unwrap()).sqrt();
        // |z1 - z0| <= (1 - sqrt(ab)) |z0| + sqrt(1 - ab) |eps|
        let z0_norm = scalar(&z0.sqr().unwrap().sum_all().unwrap()).sqrt();
        let ab = s.alpha_bar(1).unwrap();
        assert!(dist <= (1.0 - ab.sqrt()) * z0_norm + 1e-4f64.sqrt() * eps_norm + 1e-12);
        assert!(q_sample(&s, &z0, &[0], &eps).is_err());
        assert!(q_sample(&s, &z0, &[1001], &eps).is_err());
    }

    #[test]
    fn q_sample_monte_carlo_marginals() {
        let s = make_schedule(1000).unwrap();
        let n = 10_000;
        let z0v = [1.5f64, -0.5, 0.0, 3.0];
        let z0 = Tensor::new(&z0v, &Device::Cpu).unwrap().reshape((1, 4, 1, 1)).unwrap();
        let z0 = z0.repeat((n, 1, 1, 1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for t in [10usize, 500, 990] {
            let eps = randn(&mut rng, &[n, 4, 1, 1], DType::F64).unwrap();
            let zt = q_sample(&s, &z0, &vec![t; n], &eps).unwrap();
            let v = zt.reshape((n, 4)).unwrap().to_vec2::<f64>().unwrap();
            let ab = s.alpha_bar(t).unwrap();
            for (j, &z) in z0v.iter().enumerate() {
                let col: Vec<f64> = v.iter().map(|r| r[j]).collect();
                let mean = col.iter().sum::<f64>() / n as f64;
                let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                let target_var = 1.0 - ab;
                assert!((mean - ab.sqrt() * z).abs() < 3.0 * (target_var / n as f64).sqrt(), "t={t} mean");
                let se_var = target_var * (2.0 / (n - 1) as f64).sqrt();
                assert!((var - target_var).abs() < 3.0 * se_var, "t={t} var {var} vs {target_var}");
            }
        }
    }

    #[test]
    fn oracle_networks_give_zero_loss() {
        let s = make_schedule(1000).unwrap();
        let batch = rand_batch(2, 3, DType::F64);
        let oracle = Oracle(batch.x_tgt.clone());
        let nets = Components {
            autoencoder: &IdentityAe,
            cond: &ZeroCond,
            denoiser: &oracle,
            acm: Some(&IdentityAcm),
        };
        let noise = batch.x_src.ones_like().unwrap();
        let opts = LossOptions {
            phase: PhaseMode::Given(batch.x_src.zeros_like().unwrap()),
            ..LossOptions::default()
        };
        for t in [1usize, 37, 1000] {
            let l = loss_end_to_end(&s, &batch, &[t, t], &noise, &[false, true], nets, &opts).unwrap();
            assert_eq!(scalar(&l), 0.0);
        }
    }

    #[test]
    fn channel_permutation_invariance_with_equivariant_stubs() {
        let s = make_schedule(1000).unwrap();
        let batch = rand_batch(2, 4, DType::F64);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = randn(&mut rng, &[2, 3, 64, 376], DType::F64).unwrap();
        let perm = Tensor::new(&[2u32, 0, 1], &Device::Cpu).unwrap();
        let p = |x: &Tensor| x.index_select(&perm, 1).unwrap();
        let permuted = LossBatch {
            x_src: p(&batch.x_src),
            x_tgt: p(&batch.x_tgt),
            cond: batch.cond.clone(),
        };
        let den = Scale(0.7);
        let nets = Components {
            autoencoder: &IdentityAe,
            cond: &ZeroCond,
            denoiser: &den,
            acm: None,
        };
        let opts = LossOptions::default();
        let t = [12usize, 640];
        let a = scalar(&loss_end_to_end(&s, &batch, &t, &noise, &[false, false], nets, &opts).unwrap());
        let b = scalar(&loss_end_to_end(&s, &permuted, &t, &p(&noise), &[false, false], nets, &opts).unwrap());
        assert!(a > 0.0);
        assert!((a - b).abs() <= 1e-12 * a, "{a} vs {b}");
    }

    #[test]
    fn self_pair_at_first_step_is_finite() {
        let s = make_schedule(1000).unwrap();
        let nets = Nets::new(&ModelConfig::micro(), 1000, 2, DType::F32).unwrap();
        let mut batch = rand_batch(1, 6, DType::F32);
        batch.x_tgt = batch.x_src.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let noise = randn(&mut rng, &[1, 4, 16, 94], DType::F32).unwrap();
        let opts = LossOptions {
            phase: PhaseMode::GriffinLim(GriffinLimConfig {
                iterations: 2,
                ..GriffinLimConfig::default()
            }),
            ..LossOptions::default()
        };
        let l = scalar(&loss_end_to_end(&s, &batch, &[1], &noise, &[false], nets.components(), &opts).unwrap());
        assert!(l.is_finite() && l >= 0.0);
    }

    #[test]
    fn paired_latent_loss_matches_conventional_for_self_pairs() {
        let s = make_schedule(1000).unwrap();
        let nets = Nets::new(&ModelConfig::micro(), 1000, 8, DType::F32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for draw in 0..3u64 {
            let mut batch = rand_batch(1, 100 + draw, DType::F32);
            batch.x_tgt = batch.x_src.clone();
            let t = [rand::Rng::random_range(&mut rng, 1..=1000usize)];
            let noise = randn(&mut rng, &[1, 4, 16, 94], DType::F32).unwrap();
            let paired = loss_latent(&s, &batch, &t, &noise, &nets.cond, &nets.unet, &nets.autoencoder, 5.0).unwrap();
            let single = conventional_dm_loss(
                &s, &batch.x_src, &batch.cond, &t, &noise, &nets.cond, &nets.unet, &nets.autoencoder, 5.0,
            )
            .unwrap();
            assert_eq!(scalar(&paired).to_bits(), scalar(&single).to_bits());
            assert!(scalar(&paired) >= 0.0);
        }
    }

    #[test]
    fn latent_oracle_gives_zero() {
        let s = make_schedule(1000).unwrap();
        let batch = rand_batch(2, 9, DType::F64);
        let oracle = Oracle(batch.x_tgt.clone());
        let noise = batch.x_src.ones_like().unwrap();
        let l = loss_latent(&s, &batch, &[3, 999], &noise, &ZeroCond, &oracle, &IdentityAe, 5.0).unwrap();
        assert_eq!(scalar(&l), 0.0);
    }

    #[test]
    fn non_finite_loss_reports_timesteps() {
        let s = make_schedule(1000).unwrap();
        let batch = rand_batch(1, 10, DType::F64);
        let bad = Scale(f64::NAN);
        let nets = Components {
            autoencoder: &IdentityAe,
            cond: &ZeroCond,
            denoiser: &bad,
            acm: None,
        };
        let noise = batch.x_src.zeros_like().unwrap();
        match loss_end_to_end(&s, &batch, &[77], &noise, &[false], nets, &LossOptions::default()) {
            Err(Error::NonFiniteLoss { timesteps, .. }) => assert_eq!(timesteps, vec![77]),
            other => panic!("unexpected {other:?}"),
        }
    }
}
