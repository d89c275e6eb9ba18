use serde::{Deserialize, Serialize};

use super::stft::{Spectrogram, N_FRAMES, N_FREQ};
use crate::seisdata::N_CHANNELS;
use crate::{Error, Result};

const PLANE: usize = N_FREQ * N_FRAMES;

/// Per-channel mean and standard deviation of log-spectrogram values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrogramStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl SpectrogramStats {
    /// Two-pass statistics over a collection, in iteration order.
    pub fn compute<'a>(specs: impl IntoIterator<Item = &'a Spectrogram> + Clone) -> Result<Self> {
        let mut count = 0usize;
        let mut sum = [0.0; 3];
        for s in specs.clone() {
            count += 1;
            for (c, acc) in sum.iter_mut().enumerate() {
                *acc += s.values()[c * PLANE..(c + 1) * PLANE].iter().map(|&v| v as f64).sum::<f64>();
            }
        }
        if count == 0 {
            return Err(Error::InvalidInput("no spectrograms to compute statistics".into()));
        }
        let n = (count * PLANE) as f64;
        let mean = sum.map(|s| s / n);
        let mut var = [0.0; 3];
        for s in specs {
            for c in 0..N_CHANNELS {
                var[c] += s.values()[c * PLANE..(c + 1) * PLANE]
                    .iter()
                    .map(|&v| (v as f64 - mean[c]).powi(2))
                    .sum::<f64>();
            }
        }
        let std = var.map(|v| (v / n).sqrt());
        Ok(Self { mean, std })
    }

    fn check(&self) -> Result<()> {
        if self.std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidInput("standardization needs std > 0".into()));
        }
        Ok(())
    }
}

fn map_channels(spec: &Spectrogram, f: impl Fn(usize, f64) -> f64) -> Result<Spectrogram> {
    let values = spec
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| f(i / PLANE, v as f64) as f32)
        .collect();
    Spectrogram::new(values, spec.log_epsilon())
}

pub fn standardize(spec: &Spectrogram, stats: &SpectrogramStats) -> Result<Spectrogram> {
    stats.check()?;
    map_channels(spec, |c, v| (v - stats.mean[c]) / stats.std[c])
}

pub fn destandardize(spec: &Spectrogram, stats: &SpectrogramStats) -> Result<Spectrogram> {
    stats.check()?;
    map_channels(spec, |c, v| v * stats.std[c] + stats.mean[c])
}
