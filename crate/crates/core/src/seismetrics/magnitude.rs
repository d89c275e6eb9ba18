//! Wood-Anderson simulation and local magnitude.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::seisdata::{Trace, SAMPLE_RATE};
use crate::{Error, Result};

pub const WOOD_ANDERSON_PERIOD_S: f64 = 0.8;
pub const WOOD_ANDERSON_DAMPING: f64 = 0.7;
pub const WOOD_ANDERSON_GAIN: f64 = 2080.0;
pub const MAX_MAGNITUDE_DISTANCE_KM: f64 = 700.0;

/// Wood-Anderson displacement (mm) for one channel of acceleration (m/s^2).
///
/// The displacement response `G s^2 / (s^2 + 2 h w0 s + w0^2)` is applied to
/// ground displacement `a / s^2`, i.e. `G / (s^2 + 2 h w0 s + w0^2)` on
/// acceleration, in the frequency domain with zero padding against wrap-around.
pub fn wood_anderson(acc: &[f64]) -> Vec<f64> {
    let n = acc.len();
    if n == 0 {
        return Vec::new();
    }
    let len = (2 * n).next_power_of_two();
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex64> = acc.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(len, Complex64::default());
    planner.plan_fft_forward(len).process(&mut buf);
    let w0 = 2.0 * std::f64::consts::PI / WOOD_ANDERSON_PERIOD_S;
    for (k, v) in buf.iter_mut().enumerate() {
        let kk = if k <= len / 2 { k as f64 } else { k as f64 - len as f64 };
        let w = 2.0 * std::f64::consts::PI * kk * SAMPLE_RATE / len as f64;
        let s = Complex64::new(0.0, w);
        let h = WOOD_ANDERSON_GAIN * 1000.0 / (s * s + 2.0 * WOOD_ANDERSON_DAMPING * w0 * s + w0 * w0);
        *v *= h;
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    buf[..n].iter().map(|v| v.re / len as f64).collect()
}

/// `-log A0(r) = a log10(r / r_ref) + b (r - r_ref) + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct Attenuation {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub r_ref_km: f64,
}

impl Default for Attenuation {
    /// Southern California form anchored at 3.0 for 100 km.
    fn default() -> Self {
        Self {
            a: 1.110,
            b: 0.00189,
            c: 3.0,
            r_ref_km: 100.0,
        }
    }
}

impl Attenuation {
    pub fn neg_log_a0(&self, r_km: f64) -> f64 {
        self.a * (r_km / self.r_ref_km).log10() + self.b * (r_km - self.r_ref_km) + self.c
    }

    /// `M_L = log10 A + (-log A0(r))` for a peak amplitude in mm.
    pub fn magnitude(&self, amplitude_mm: f64, r_km: f64) -> Result<f64> {
        if !(r_km > 0.0 && r_km <= MAX_MAGNITUDE_DISTANCE_KM) {
            return Err(Error::InvalidInput(format!(
                "hypocentral distance {r_km} km outside (0, {MAX_MAGNITUDE_DISTANCE_KM}]"
            )));
        }
        if !(amplitude_mm > 0.0) {
            return Err(Error::InvalidInput(format!("amplitude {amplitude_mm} mm must be positive")));
        }
        Ok(amplitude_mm.log10() + self.neg_log_a0(r_km))
    }
}

/// Larger of the two horizontal Wood-Anderson peak amplitudes, in mm.
pub fn wood_anderson_peak(trace: &Trace) -> f64 {
    (0..2)
        .map(|c| wood_anderson(&trace.channel_f64(c)).iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .fold(0.0, f64::max)
}

/// Local magnitude without station corrections.
pub fn local_magnitude(trace: &Trace, r_hypo_km: f64, attenuation: &Attenuation) -> Result<f64> {
    attenuation.magnitude(wood_anderson_peak(trace), r_hypo_km)
}
