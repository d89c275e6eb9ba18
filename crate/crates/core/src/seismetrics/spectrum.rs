//! Amplitude spectra with Konno-Ohmachi smoothing.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::magnitude::wood_anderson;
use crate::seisdata::{Trace, N_CHANNELS, SAMPLE_RATE};
use crate::{Error, Result};

pub const KONNO_OHMACHI_BANDWIDTH: f64 = 40.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumResult {
    /// Positive FFT frequencies, Hz.
    pub frequencies: Vec<f64>,
    pub amplitude: Vec<f64>,
    pub corner_frequency_estimate: f64,
    pub plateau_level: f64,
}

/// Konno-Ohmachi window `(sin(b log10(f/fc)) / (b log10(f/fc)))^4`.
pub fn konno_ohmachi_weight(f: f64, fc: f64, bandwidth: f64) -> f64 {
    if f == fc {
        return 1.0;
    }
    let x = bandwidth * (f / fc).log10();
    if x == 0.0 {
        return 1.0;
    }
    (x.sin() / x).powi(4)
}

/// Smooth `amplitude` sampled at strictly positive `frequencies`. Each output
/// is the centre value plus the weighted mean deviation around it, which
/// equals the normalised weighted mean and leaves constant spectra unchanged
/// bit for bit.
pub fn konno_ohmachi(frequencies: &[f64], amplitude: &[f64], bandwidth: f64) -> Result<Vec<f64>> {
    if frequencies.len() != amplitude.len() {
        return Err(Error::shape("konno_ohmachi", frequencies.len(), amplitude.len()));
    }
    if frequencies.iter().any(|&f| !(f > 0.0)) || frequencies.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("frequencies must be positive and increasing".into()));
    }
    Ok(frequencies
        .iter()
        .zip(amplitude)
        .map(|(&fc, &ac)| {
            let (mut num, mut den) = (0.0, 0.0);
            for (&f, &a) in frequencies.iter().zip(amplitude) {
                let w = konno_ohmachi_weight(f, fc, bandwidth);
                num += w * (a - ac);
                den += w;
            }
            ac + num / den
        })
        .collect())
}

/// Positive-frequency amplitude spectrum of a real series.
pub fn amplitude_spectrum(x: &[f64], sample_rate: f64) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let bins = 1..n / 2 + 1;
    let freqs = bins.clone().map(|k| k as f64 * sample_rate / n as f64).collect();
    let amps = bins.map(|k| buf[k].norm() / sample_rate).collect();
    (freqs, amps)
}

/// Wood-Anderson amplitude spectrum (vector sum over channels), smoothed,
/// with a corner-frequency estimate: the first frequency above the plateau
/// band where the spectrum is 3 dB below the plateau, the plateau being the
/// median over `[1, fc/2]` Hz, iterated to a fixed point.
pub fn frequency_content(trace: &Trace) -> Result<SpectrumResult> {
    if trace.samples().iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidInput("all-zero trace has no spectrum".into()));
    }
    let mut power: Vec<f64> = Vec::new();
    let mut freqs = Vec::new();
    for c in 0..N_CHANNELS {
        let (f, a) = amplitude_spectrum(&wood_anderson(&trace.channel_f64(c)), SAMPLE_RATE);
        if power.is_empty() {
            power = vec![0.0; a.len()];
            freqs = f;
        }
        power.iter_mut().zip(&a).for_each(|(p, v)| *p += v * v);
    }
    let raw: Vec<f64> = power.iter().map(|p| p.sqrt()).collect();
    let amplitude: Vec<f64> = konno_ohmachi(&freqs, &raw, KONNO_OHMACHI_BANDWIDTH)?
        .into_iter()
        .map(|a| a.max(0.0))
        .collect();
    let (corner, plateau) = corner_frequency(&freqs, &amplitude);
    Ok(SpectrumResult {
        frequencies: freqs,
        amplitude,
        corner_frequency_estimate: corner,
        plateau_level: plateau,
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn corner_frequency(freqs: &[f64], amp: &[f64]) -> (f64, f64) {
    let first = freqs.iter().position(|&f| f >= 1.0).unwrap_or(0);
    let plateau_over = |hi: f64| {
        let band: Vec<f64> = freqs
            .iter()
            .zip(amp)
            .skip(first)
            .take_while(|(f, _)| **f <= hi)
            .map(|(_, a)| *a)
            .collect();
        if band.is_empty() {
            amp[first]
        } else {
            median(band)
        }
    };
    let drop = 10f64.powf(-3.0 / 20.0);
    let fmax = *freqs.last().unwrap();
    let mut fc = 2.0;
    let mut plateau = plateau_over(fc);
    for _ in 0..50 {
        let hi = (fc / 2.0).max(1.0);
        plateau = plateau_over(hi);
        let next = freqs
            .iter()
            .zip(amp)
            .skip(first)
            .find(|(f, a)| **f > hi && **a < plateau * drop)
            .map(|(f, _)| *f)
            .unwrap_or(fmax);
        if next == fc {
            break;
        }
        fc = next;
    }
    (fc, plateau)
}
