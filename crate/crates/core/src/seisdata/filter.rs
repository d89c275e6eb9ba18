//! Butterworth band-pass design and zero-phase second-order-section filtering.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use crate::{Error, Result};

/// One biquad in transposed direct form II, `a0` normalised to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    /// Complex frequency response at normalised angular frequency `omega`
    /// (radians per sample).
    pub fn response(&self, omega: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        let num = self.b[0] + z1 * self.b[1] + z2 * self.b[2];
        let den = self.a[0] + z1 * self.a[1] + z2 * self.a[2];
        num / den
    }

    /// Steady-state filter state for a unit step input.
    fn step_state(&self) -> [f64; 2] {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        // (I - A^T) zi = b[1:] - a[1:] * b0
        let r0 = b1 - a1 * b0;
        let r1 = b2 - a2 * b0;
        let det = (1.0 + a1) + a2;
        let z0 = (r0 + r1) / det;
        let z1 = r1 - a2 * z0;
        [z0, z1]
    }

    fn run(&self, x: &mut [f64], mut z: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        for v in x.iter_mut() {
            let input = *v;
            let y = b0 * input + z[0];
            z[0] = b1 * input - a1 * y + z[1];
            z[1] = b2 * input - a2 * y;
            *v = y;
        }
    }
}

/// Cascade of biquads.
#[derive(Debug, Clone, PartialEq)]
pub struct SosFilter {
    pub sections: Vec<Biquad>,
}

impl SosFilter {
    /// Digital Butterworth band-pass of prototype order `order` (the cascade
    /// has `2 * order` poles), designed by bilinear transform with
    /// pre-warped band edges.
    pub fn butterworth_bandpass(order: usize, low_hz: f64, high_hz: f64, fs: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidInput("filter order must be >= 1".into()));
        }
        if !(low_hz > 0.0 && high_hz > low_hz && high_hz < fs / 2.0) {
            return Err(Error::InvalidInput(format!(
                "band edges must satisfy 0 < {low_hz} < {high_hz} < {}",
                fs / 2.0
            )));
        }
        let fs2 = 2.0 * fs;
        let w1 = fs2 * (PI * low_hz / fs).tan();
        let w2 = fs2 * (PI * high_hz / fs).tan();
        let bw = w2 - w1;
        let w0_sq = w1 * w2;

        // Left half-plane prototype poles, upper half only; conjugates are
        // implied by each real-coefficient section.
        let n = order as f64;
        let mut analog_poles = Vec::with_capacity(2 * order);
        for k in 0..order {
            let theta = PI * (2.0 * k as f64 + n + 1.0) / (2.0 * n);
            let p = Complex64::from_polar(1.0, theta);
            let p_lp = p * (bw / 2.0);
            let disc = (p_lp * p_lp - w0_sq).sqrt();
            analog_poles.push(p_lp + disc);
            analog_poles.push(p_lp - disc);
        }
        // Keep one representative of each conjugate pair.
        let mut reps: Vec<Complex64> = analog_poles.into_iter().filter(|p| p.im > 0.0).collect();
        if reps.len() != order {
            return Err(Error::InvalidInput("degenerate band-pass design".into()));
        }
        reps.sort_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap());

        // Analog band-pass gain is bw^order; zeros at s = 0 map to z = 1 and
        // the ones at infinity to z = -1, giving b = [1, 0, -1] per section.
        let mut gain = Complex64::new(bw.powi(order as i32), 0.0);
        let mut sections = Vec::with_capacity(order);
        for p in &reps {
            let zp = (fs2 + p) / (fs2 - p);
            // Bilinear gain: prod(2fs - zeros) / prod(2fs - poles), with one
            // analog zero at the origin per conjugate pole pair.
            gain *= Complex64::new(fs2, 0.0) / ((fs2 - p) * (fs2 - p.conj()));
            sections.push(Biquad {
                b: [1.0, 0.0, -1.0],
                a: [1.0, -2.0 * zp.re, zp.norm_sqr()],
            });
        }
        let k = gain.re;
        let mut first = sections[0];
        for c in first.b.iter_mut() {
            *c *= k;
        }
        sections[0] = first;
        Ok(Self { sections })
    }

    /// Magnitude response of a single forward pass at `freq_hz`.
    pub fn magnitude(&self, freq_hz: f64, fs: f64) -> f64 {
        let omega = 2.0 * PI * freq_hz / fs;
        self.sections
            .iter()
            .map(|s| s.response(omega))
            .fold(Complex64::new(1.0, 0.0), |acc, h| acc * h)
            .norm()
    }

    fn pad_len(&self) -> usize {
        3 * (2 * self.sections.len() + 1)
    }

    /// Causal filtering with steady-state initial conditions scaled by `x0`.
    fn filter_with_initial(&self, x: &mut [f64]) {
        let x0 = x[0];
        let mut scale = 1.0;
        for s in &self.sections {
            let zi = s.step_state();
            s.run(x, [zi[0] * scale * x0, zi[1] * scale * x0]);
            scale *= s.b.iter().sum::<f64>() / s.a.iter().sum::<f64>();
        }
    }

    /// Forward-backward (zero-phase) filtering with odd-extension padding.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        if x.is_empty() {
            return Vec::new();
        }
        let pad = self.pad_len().min(x.len() - 1);
        let n = x.len();
        let mut ext = Vec::with_capacity(n + 2 * pad);
        for i in (1..=pad).rev() {
            ext.push(2.0 * x[0] - x[i]);
        }
        ext.extend_from_slice(x);
        for i in 1..=pad {
            ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
        }
        self.filter_with_initial(&mut ext);
        ext.reverse();
        self.filter_with_initial(&mut ext);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}
