//! Short-time Fourier transform with a 128-point periodic Hann window, hop
//! 16 and reflect-padded centred frames: 6000 samples map to 376 frames of
//! 65 one-sided bins. The Nyquist row is dropped for the 64-bin log-amplitude
//! image.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::griffin_lim::{griffin_lim, GriffinLimConfig};
use crate::seisdata::{Trace, N_CHANNELS, TRACE_LEN};
use crate::{Error, Result};

pub const N_FFT: usize = 128;
pub const HOP_LENGTH: usize = 16;
/// One-sided bins including Nyquist.
pub const N_BINS: usize = N_FFT / 2 + 1;
/// Bins kept in the spectrogram image.
pub const N_FREQ: usize = 64;
pub const N_FRAMES: usize = TRACE_LEN / HOP_LENGTH + 1;
pub const DEFAULT_LOG_EPSILON: f64 = 1e-5;

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    /// Overlap-added squared window over the padded signal.
    window_norm: Vec<f64>,
}

fn plans() -> &'static Plans {
    static PLANS: OnceLock<Plans> = OnceLock::new();
    PLANS.get_or_init(|| {
        let mut planner = FftPlanner::new();
        let window: Vec<f64> = (0..N_FFT)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / N_FFT as f64).cos())
            .collect();
        let padded = TRACE_LEN + N_FFT;
        let mut window_norm = vec![0.0; padded];
        for m in 0..N_FRAMES {
            for (k, w) in window.iter().enumerate() {
                window_norm[m * HOP_LENGTH + k] += w * w;
            }
        }
        Plans {
            forward: planner.plan_fft_forward(N_FFT),
            inverse: planner.plan_fft_inverse(N_FFT),
            window,
            window_norm,
        }
    })
}

fn reflect_pad(x: &[f64]) -> Vec<f64> {
    let pad = N_FFT / 2;
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        out.push(x[i]);
    }
    out.extend_from_slice(x);
    for i in 1..=pad {
        out.push(x[n - 1 - i]);
    }
    out
}

/// Complex STFT of one 6000-sample channel, laid out `[bin][frame]`
/// (`65 x 376`).
pub fn stft_channel(x: &[f64]) -> Vec<Complex64> {
    assert_eq!(x.len(), TRACE_LEN, "channel length");
    let p = plans();
    let padded = reflect_pad(x);
    let mut out = vec![Complex64::default(); N_BINS * N_FRAMES];
    let mut buf = vec![Complex64::default(); N_FFT];
    for m in 0..N_FRAMES {
        let start = m * HOP_LENGTH;
        for k in 0..N_FFT {
            buf[k] = Complex64::new(padded[start + k] * p.window[k], 0.0);
        }
        p.forward.process(&mut buf);
        for f in 0..N_BINS {
            out[f * N_FRAMES + m] = buf[f];
        }
    }
    out
}

/// Inverse of [`stft_channel`] by windowed overlap-add.
pub fn istft_channel(spec: &[Complex64]) -> Vec<f64> {
    assert_eq!(spec.len(), N_BINS * N_FRAMES, "spectrum size");
    let p = plans();
    let mut acc = vec![0.0; TRACE_LEN + N_FFT];
    let mut buf = vec![Complex64::default(); N_FFT];
    let scale = 1.0 / N_FFT as f64;
    for m in 0..N_FRAMES {
        for f in 0..N_BINS {
            buf[f] = spec[f * N_FRAMES + m];
        }
        // Hermitian completion; imaginary parts of DC and Nyquist are ignored
        // by taking the real part of the inverse.
        for f in N_BINS..N_FFT {
            buf[f] = buf[N_FFT - f].conj();
        }
        p.inverse.process(&mut buf);
        let start = m * HOP_LENGTH;
        for k in 0..N_FFT {
            acc[start + k] += buf[k].re * scale * p.window[k];
        }
    }
    let pad = N_FFT / 2;
    (0..TRACE_LEN)
        .map(|i| acc[pad + i] / p.window_norm[pad + i])
        .collect()
}

/// Log-amplitude spectrogram, `3 x 64 x 376`, laid out `[channel][bin][frame]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    values: Vec<f32>,
    log_epsilon: f64,
}

impl Spectrogram {
    pub const SHAPE: (usize, usize, usize) = (N_CHANNELS, N_FREQ, N_FRAMES);
    pub const LEN: usize = N_CHANNELS * N_FREQ * N_FRAMES;

    pub fn new(values: Vec<f32>, log_epsilon: f64) -> Result<Self> {
        if values.len() != Self::LEN {
            return Err(Error::shape("Spectrogram", "3x64x376", values.len()));
        }
        if !(log_epsilon > 0.0) {
            return Err(Error::InvalidInput("log_epsilon must be positive".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("spectrogram contains non-finite values".into()));
        }
        Ok(Self { values, log_epsilon })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn log_epsilon(&self) -> f64 {
        self.log_epsilon
    }

    pub fn floor(&self) -> f64 {
        self.log_epsilon.ln()
    }

    pub fn at(&self, c: usize, f: usize, t: usize) -> f32 {
        self.values[(c * N_FREQ + f) * N_FRAMES + t]
    }

    /// Linear amplitudes with a zero Nyquist row, `3 x 65 x 376`.
    pub fn amplitudes_with_nyquist(&self) -> Vec<f64> {
        log_to_amplitude(&self.values, self.log_epsilon)
    }
}

pub(crate) fn log_to_amplitude(values: &[f32], log_epsilon: f64) -> Vec<f64> {
    let mut out = vec![0.0; N_CHANNELS * N_BINS * N_FRAMES];
    for c in 0..N_CHANNELS {
        for f in 0..N_FREQ {
            for t in 0..N_FRAMES {
                let v = values[(c * N_FREQ + f) * N_FRAMES + t] as f64;
                out[(c * N_BINS + f) * N_FRAMES + t] = (v.exp() - log_epsilon).max(0.0);
            }
        }
    }
    out
}

pub fn waveform_to_spectrogram(trace: &Trace) -> Spectrogram {
    waveform_to_spectrogram_with(trace, DEFAULT_LOG_EPSILON)
}

/// `log(|STFT| + log_epsilon)` per channel, Nyquist row dropped.
pub fn waveform_to_spectrogram_with(trace: &Trace, log_epsilon: f64) -> Spectrogram {
    let mut values = Vec::with_capacity(Spectrogram::LEN);
    for c in 0..N_CHANNELS {
        let spec = stft_channel(&trace.channel_f64(c));
        for f in 0..N_FREQ {
            for t in 0..N_FRAMES {
                values.push((spec[f * N_FRAMES + t].norm() + log_epsilon).ln() as f32);
            }
        }
    }
    Spectrogram { values, log_epsilon }
}

pub fn spectrogram_to_waveform(spec: &Spectrogram, iterations: usize) -> Result<Vec<f32>> {
    spectrogram_to_waveform_with(
        spec,
        &GriffinLimConfig {
            iterations,
            ..GriffinLimConfig::default()
        },
    )
}

/// Invert a log-amplitude spectrogram to a `3 x 6000` waveform with
/// Griffin-Lim phase recovery.
pub fn spectrogram_to_waveform_with(spec: &Spectrogram, config: &GriffinLimConfig) -> Result<Vec<f32>> {
    if config.iterations == 0 {
        return Err(Error::InvalidInput("Griffin-Lim needs at least one iteration".into()));
    }
    if spec.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite spectrogram magnitudes".into()));
    }
    let amps = spec.amplitudes_with_nyquist();
    let mut out = Vec::with_capacity(N_CHANNELS * TRACE_LEN);
    for c in 0..N_CHANNELS {
        let mag = &amps[c * N_BINS * N_FRAMES..(c + 1) * N_BINS * N_FRAMES];
        let (wave, _) = griffin_lim(mag, config, c as u64);
        out.extend(wave.into_iter().map(|v| v as f32));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine_trace(freq: f64) -> Trace {
        let ch: Vec<f32> = (0..TRACE_LEN)
            .map(|i| (2.0 * PI * freq * i as f64 / 100.0).sin() as f32)
            .collect();
        Trace::from_samples([ch.clone(), ch.clone(), ch].concat()).unwrap()
    }

    #[test]
    fn shape_contract() {
        assert_eq!(N_FRAMES, 376);
        let s = waveform_to_spectrogram(&sine_trace(5.0));
        assert_eq!(s.values().len(), 3 * 64 * 376);
    }

    #[test]
    fn zero_waveform_maps_to_floor() {
        let s = waveform_to_spectrogram(&Trace::from_samples(vec![0.0; 18000]).unwrap());
        let floor = (DEFAULT_LOG_EPSILON.ln()) as f32;
        assert!(s.values().iter().all(|&v| v == floor));
        let w = spectrogram_to_waveform(&s, 8).unwrap();
        let rms = (w.iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
        assert!(rms < 1e-6);
    }

    #[test]
    fn ten_hertz_peaks_at_bin_thirteen() {
        // Direct DFT oracle on each reflect-padded frame; 10 Hz / (100/128 Hz)
        // = 12.8, so frames clear of the padding peak at bin 13.
        let x: Vec<f64> = (0..TRACE_LEN)
            .map(|i| (2.0 * PI * 10.0 * i as f64 / 100.0).sin())
            .collect();
        let half = N_FFT / 2;
        let reflect = |i: isize| -> f64 {
            let n = TRACE_LEN as isize;
            let j = if i < 0 { -i } else if i >= n { 2 * (n - 1) - i } else { i };
            x[j as usize]
        };
        let w = &plans().window;
        let s = waveform_to_spectrogram(&sine_trace(10.0));
        for t in 0..N_FRAMES {
            let start = (t * HOP_LENGTH) as isize - half as isize;
            let mag = |k: usize| {
                let mut acc = Complex64::default();
                for n in 0..N_FFT {
                    let v = reflect(start + n as isize) * w[n];
                    acc += Complex64::from_polar(v, -2.0 * PI * (k * n) as f64 / N_FFT as f64);
                }
                acc.norm()
            };
            let oracle = (0..N_FREQ).max_by(|&a, &b| mag(a).total_cmp(&mag(b))).unwrap();
            let best = (0..N_FREQ)
                .max_by(|&a, &b| s.at(0, a, t).total_cmp(&s.at(0, b, t)))
                .unwrap();
            assert_eq!(best, oracle, "frame {t}");
            if start >= 0 && start as usize + N_FFT <= TRACE_LEN {
                assert_eq!(best, 13, "frame {t}");
            }
        }
    }

    #[test]
    fn istft_inverts_stft() {
        let x: Vec<f64> = (0..TRACE_LEN).map(|i| ((i * 7919) % 1000) as f64 / 500.0 - 1.0).collect();
        let y = istft_channel(&stft_channel(&x));
        let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn rejects_bad_shapes_and_iterations() {
        assert!(Spectrogram::new(vec![0.0; 10], 1e-5).is_err());
        let s = waveform_to_spectrogram(&sine_trace(3.0));
        assert!(spectrogram_to_waveform(&s, 0).is_err());
        let mut v = s.values().to_vec();
        v[0] = f32::NAN;
        assert!(Spectrogram::new(v, 1e-5).is_err());
    }
}
