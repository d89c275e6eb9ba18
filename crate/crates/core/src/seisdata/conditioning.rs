//! Detrend, band-pass and window raw recordings into fixed-size traces.

use std::sync::OnceLock;

use super::filter::SosFilter;
use super::{N_CHANNELS, SAMPLE_RATE, TRACE_LEN};
use crate::{Error, Result};

pub const BAND_LOW_HZ: f64 = 1.0;
pub const BAND_HIGH_HZ: f64 = 45.0;
pub const FILTER_ORDER: usize = 4;

/// The 1-45 Hz band-pass used for every trace.
pub fn trace_bandpass() -> &'static SosFilter {
    static FILTER: OnceLock<SosFilter> = OnceLock::new();
    FILTER.get_or_init(|| {
        SosFilter::butterworth_bandpass(FILTER_ORDER, BAND_LOW_HZ, BAND_HIGH_HZ, SAMPLE_RATE)
            .expect("static band edges are valid")
    })
}

/// Output of [`condition_trace`].
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioned {
    /// Row-major `3 x 6000` samples.
    pub samples: Vec<f32>,
    /// Set when the input was shorter than the window and zero padded.
    pub padded: bool,
}

/// Remove the least-squares straight line from `x` in place.
pub fn detrend_linear(x: &mut [f64]) {
    let n = x.len();
    if n < 2 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let nf = n as f64;
    let mean_t = (nf - 1.0) / 2.0;
    let mean_x = x.iter().sum::<f64>() / nf;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (i, v) in x.iter().enumerate() {
        let dt = i as f64 - mean_t;
        sxy += dt * (v - mean_x);
        sxx += dt * dt;
    }
    let slope = sxy / sxx;
    for (i, v) in x.iter_mut().enumerate() {
        *v -= mean_x + slope * (i as f64 - mean_t);
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Kaiser-windowed sinc low-pass with unit DC gain.
fn kaiser_lowpass(taps: usize, cutoff: f64, beta: f64) -> Vec<f64> {
    let m = (taps - 1) as f64;
    let i0_beta = bessel_i0(beta);
    let mut h: Vec<f64> = (0..taps)
        .map(|n| {
            let x = n as f64 - m / 2.0;
            let arg = std::f64::consts::PI * cutoff * x;
            let sinc = if x == 0.0 { 1.0 } else { arg.sin() / arg };
            let r = 2.0 * n as f64 / m - 1.0;
            let w = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / i0_beta;
            cutoff * sinc * w
        })
        .collect();
    let s: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= s);
    h
}

/// Polyphase rational resampling by `up / down` with an anti-aliasing
/// Kaiser FIR (beta 5, half length `10 * max(up, down)`).
pub fn resample_poly(x: &[f64], up: usize, down: usize) -> Vec<f64> {
    let g = gcd(up as u64, down as u64) as usize;
    let (up, down) = (up / g, down / g);
    if up == 1 && down == 1 {
        return x.to_vec();
    }
    let max_rate = up.max(down);
    let half = 10 * max_rate;
    let h: Vec<f64> = kaiser_lowpass(2 * half + 1, 1.0 / max_rate as f64, 5.0)
        .into_iter()
        .map(|v| v * up as f64)
        .collect();
    let n_up = x.len() * up;
    let n_out = n_up.div_ceil(down);
    let mut out = Vec::with_capacity(n_out);
    for m in 0..n_out {
        // Position in the zero-stuffed signal, delay-compensated by `half`.
        let center = (m * down + half) as isize;
        let mut acc = 0.0;
        // Only taps landing on non-zero (multiple of `up`) samples count.
        let first = center - (h.len() as isize - 1);
        let mut j = first.max(0);
        let rem = j.rem_euclid(up as isize);
        if rem != 0 {
            j += up as isize - rem;
        }
        while j <= center && (j as usize) < n_up {
            acc += h[(center - j) as usize] * x[j as usize / up];
            j += up as isize;
        }
        out.push(acc);
    }
    out
}

fn integer_rate(rate: f64) -> Result<u64> {
    if !(rate.is_finite() && rate > 0.0) || (rate - rate.round()).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "sample rate {rate} Hz must be a positive integer"
        )));
    }
    Ok(rate.round() as u64)
}

/// Resample to 100 Hz, remove a linear trend, band-pass 1-45 Hz with a
/// zero-phase 4th-order Butterworth, and trim or zero-pad to 6000 samples.
///
/// `raw` holds the E, N and Z channels, all of equal length.
pub fn condition_trace(raw: &[Vec<f64>], sample_rate: f64) -> Result<Conditioned> {
    if raw.len() != N_CHANNELS {
        return Err(Error::shape("condition_trace", N_CHANNELS, raw.len()));
    }
    let len = raw[0].len();
    if raw.iter().any(|c| c.len() != len) {
        return Err(Error::InvalidInput("channels have different lengths".into()));
    }
    if raw.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("raw trace contains non-finite samples".into()));
    }
    let rate = integer_rate(sample_rate)?;
    let target = SAMPLE_RATE as u64;
    let filter = trace_bandpass();
    let mut samples = vec![0f32; N_CHANNELS * TRACE_LEN];
    let mut padded = false;
    for (c, channel) in raw.iter().enumerate() {
        let mut x = if rate == target {
            channel.clone()
        } else {
            resample_poly(channel, target as usize, rate as usize)
        };
        detrend_linear(&mut x);
        let y = filter.filtfilt(&x);
        if y.len() < TRACE_LEN {
            padded = true;
        }
        for (dst, src) in samples[c * TRACE_LEN..(c + 1) * TRACE_LEN].iter_mut().zip(&y) {
            *dst = *src as f32;
        }
    }
    if padded {
        log::warn!("trace shorter than {TRACE_LEN} samples after resampling; zero padded");
    }
    Ok(Conditioned { samples, padded })
}
