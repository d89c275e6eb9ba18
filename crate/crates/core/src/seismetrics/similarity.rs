//! Waveform and spectrogram similarity metrics.

use std::sync::OnceLock;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::features::Spectrogram;
use crate::seisdata::{Trace, N_CHANNELS};
use crate::{Error, Result};

/// SNR and PSNR are clamped to +-this many dB so exact matches stay finite.
pub const DB_CAP: f64 = 300.0;
pub const SAVGOL_WINDOW: usize = 101;
pub const SAVGOL_ORDER: usize = 3;

/// Magnitude of the analytic signal.
pub fn hilbert_envelope(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let h = if k == 0 || (n % 2 == 0 && k == n / 2) {
            1.0
        } else if k < n.div_ceil(2) {
            2.0
        } else {
            0.0
        };
        *v *= h;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|v| v.norm() / n as f64).collect()
}

/// Least-squares projection `A (A^T A)^-1 A^T` for a centred polynomial basis:
/// row `p` holds the weights that evaluate the local fit at window position `p`.
fn savgol_projection(window: usize, order: usize) -> Vec<Vec<f64>> {
    let half = (window / 2) as f64;
    let basis: Vec<Vec<f64>> = (0..window)
        .map(|i| {
            let x = (i as f64 - half) / half.max(1.0);
            (0..=order).map(|k| x.powi(k as i32)).collect()
        })
        .collect();
    let m = order + 1;
    // Normal matrix, inverted by Gauss-Jordan.
    let mut aug = vec![vec![0.0; 2 * m]; m];
    for (r, row) in aug.iter_mut().enumerate() {
        for c in 0..m {
            row[c] = basis.iter().map(|b| b[r] * b[c]).sum();
        }
        row[m + r] = 1.0;
    }
    for col in 0..m {
        let pivot = (col..m).max_by(|&a, &b| aug[a][col].abs().total_cmp(&aug[b][col].abs())).unwrap();
        aug.swap(col, pivot);
        let d = aug[col][col];
        aug[col].iter_mut().for_each(|v| *v /= d);
        for r in 0..m {
            if r != col {
                let f = aug[r][col];
                let pivot_row = aug[col].clone();
                aug[r].iter_mut().zip(&pivot_row).for_each(|(v, p)| *v -= f * p);
            }
        }
    }
    let inv: Vec<Vec<f64>> = aug.iter().map(|r| r[m..].to_vec()).collect();
    (0..window)
        .map(|p| {
            let coef: Vec<f64> = (0..m)
                .map(|c| (0..m).map(|r| basis[p][r] * inv[r][c]).sum())
                .collect();
            basis.iter().map(|b| b.iter().zip(&coef).map(|(x, y)| x * y).sum()).collect()
        })
        .collect()
}

/// Savitzky-Golay smoothing (window 101, cubic). Edges are taken from the
/// polynomial fitted to the first and last full windows.
pub fn savgol_smooth(x: &[f64]) -> Vec<f64> {
    static PROJ: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    let proj = PROJ.get_or_init(|| savgol_projection(SAVGOL_WINDOW, SAVGOL_ORDER));
    let w = SAVGOL_WINDOW;
    let half = w / 2;
    let n = x.len();
    if n < w {
        return x.to_vec();
    }
    let dot = |row: &[f64], start: usize| row.iter().zip(&x[start..start + w]).map(|(a, b)| a * b).sum::<f64>();
    let mut out = vec![0.0; n];
    for (i, v) in out.iter_mut().enumerate() {
        *v = if i < half {
            dot(&proj[i], 0)
        } else if i + half >= n {
            dot(&proj[i + w - n], n - w)
        } else {
            dot(&proj[half], i - half)
        };
    }
    out
}

/// Pearson correlation; zero variance on either side yields 0.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        log::warn!("zero-variance envelope; correlation defined as 0");
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

/// Smoothed Hilbert envelope of one channel.
pub fn smoothed_envelope(x: &[f64]) -> Vec<f64> {
    savgol_smooth(&hilbert_envelope(x))
}

/// Channel-averaged Pearson correlation of smoothed envelopes.
pub fn envelope_correlation(a: &Trace, b: &Trace) -> f64 {
    (0..N_CHANNELS)
        .map(|c| pearson(&smoothed_envelope(&a.channel_f64(c)), &smoothed_envelope(&b.channel_f64(c))))
        .sum::<f64>()
        / N_CHANNELS as f64
}

fn to_db(ratio: f64) -> f64 {
    if ratio.is_nan() {
        return DB_CAP;
    }
    (10.0 * ratio.log10()).clamp(-DB_CAP, DB_CAP)
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape("metric inputs", a, b));
    }
    Ok(())
}

/// `10 log10(|target|^2 / |target - pred|^2)`.
pub fn snr(pred: &[f32], target: &[f32]) -> Result<f64> {
    check_len(pred.len(), target.len())?;
    let signal: f64 = target.iter().map(|&t| (t as f64).powi(2)).sum();
    let noise: f64 = pred.iter().zip(target).map(|(&p, &t)| (t as f64 - p as f64).powi(2)).sum();
    Ok(to_db(signal / noise))
}

/// `10 log10(max|target|^2 / mse)`.
pub fn psnr(pred: &[f32], target: &[f32]) -> Result<f64> {
    check_len(pred.len(), target.len())?;
    let peak = target.iter().fold(0.0f64, |m, &t| m.max((t as f64).abs()));
    let mse = pred.iter().zip(target).map(|(&p, &t)| (t as f64 - p as f64).powi(2)).sum::<f64>()
        / target.len() as f64;
    Ok(to_db(peak * peak / mse))
}

/// Mean squared difference of log-spectrogram values.
pub fn spectrogram_mse(pred: &Spectrogram, target: &Spectrogram) -> f64 {
    pred.values()
        .iter()
        .zip(target.values())
        .map(|(&p, &t)| (p as f64 - t as f64).powi(2))
        .sum::<f64>()
        / target.values().len() as f64
}
