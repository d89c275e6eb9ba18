use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::stft::{istft_channel, log_to_amplitude, stft_channel, N_BINS, N_FRAMES, N_FREQ};
use crate::seisdata::N_CHANNELS;

/// Fast Griffin-Lim settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct GriffinLimConfig {
    pub iterations: usize,
    pub momentum: f64,
    /// Seed of the random initial phase.
    pub seed: u64,
}

impl Default for GriffinLimConfig {
    fn default() -> Self {
        Self {
            iterations: 64,
            momentum: 0.99,
            seed: 0,
        }
    }
}

/// Recover a waveform from one channel's `65 x 376` magnitudes. Returns the
/// waveform and the final phase estimate (`65 x 376`, radians).
pub fn griffin_lim(mag: &[f64], config: &GriffinLimConfig, stream: u64) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(mag.len(), N_BINS * N_FRAMES);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(stream);
    let mut angles: Vec<Complex64> = (0..mag.len())
        .map(|_| Complex64::from_polar(1.0, rng.random::<f64>() * std::f64::consts::TAU))
        .collect();
    let mut rebuilt = vec![Complex64::default(); mag.len()];
    let alpha = config.momentum / (1.0 + config.momentum);
    let mut spec = vec![Complex64::default(); mag.len()];
    for _ in 0..config.iterations {
        for i in 0..spec.len() {
            spec[i] = angles[i] * mag[i];
        }
        let inverse = istft_channel(&spec);
        let next = stft_channel(&inverse);
        for i in 0..angles.len() {
            let a = next[i] - rebuilt[i] * alpha;
            angles[i] = a / (a.norm() + 1e-16);
        }
        rebuilt = next;
    }
    for i in 0..spec.len() {
        spec[i] = angles[i] * mag[i];
    }
    let wave = istft_channel(&spec);
    let phase = angles.iter().map(|a| a.arg()).collect();
    (wave, phase)
}

/// Griffin-Lim phase of a `3 x 64 x 376` log-amplitude image, Nyquist row
/// dropped, same layout.
pub fn griffin_lim_phase(log_amplitude: &[f32], log_epsilon: f64, config: &GriffinLimConfig) -> Vec<f32> {
    let amps = log_to_amplitude(log_amplitude, log_epsilon);
    let mut out = Vec::with_capacity(N_CHANNELS * N_FREQ * N_FRAMES);
    for c in 0..N_CHANNELS {
        let (_, phase) = griffin_lim(&amps[c * N_BINS * N_FRAMES..(c + 1) * N_BINS * N_FRAMES], config, c as u64);
        out.extend(phase[..N_FREQ * N_FRAMES].iter().map(|&p| p as f32));
    }
    out
}
