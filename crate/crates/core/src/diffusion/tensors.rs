//! Conversions between crate data types and batched tensors.

use candle_core::{DType, Device, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::features::{ConditionVector, Spectrogram, CONDITION_DIM, N_FRAMES, N_FREQ};
use crate::seisdata::N_CHANNELS;
use crate::Result;

/// Standard normal tensor drawn from `rng` in row-major order.
pub fn randn<R: Rng>(rng: &mut R, shape: &[usize], dtype: DType) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Ok(Tensor::from_vec(v, shape, &Device::Cpu)?.to_dtype(dtype)?)
}

/// `(B, 3, 64, 376)` from log-amplitude spectrograms.
pub fn spectrogram_batch(specs: &[&Spectrogram], dtype: DType) -> Result<Tensor> {
    let mut v = Vec::with_capacity(specs.len() * Spectrogram::LEN);
    for s in specs {
        v.extend_from_slice(s.values());
    }
    Ok(Tensor::from_vec(v, (specs.len(), N_CHANNELS, N_FREQ, N_FRAMES), &Device::Cpu)?.to_dtype(dtype)?)
}

/// `(B, 11)` condition matrix.
pub fn condition_batch(conds: &[ConditionVector], dtype: DType) -> Result<Tensor> {
    let v: Vec<f64> = conds.iter().flat_map(|c| c.to_array()).collect();
    Ok(Tensor::from_vec(v, (conds.len(), CONDITION_DIM), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Per-item flat f32 values of a batched tensor.
pub fn unbatch_f32(x: &Tensor) -> Result<Vec<Vec<f32>>> {
    let b = x.dim(0)?;
    (0..b)
        .map(|i| Ok(x.get(i)?.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?))
        .collect()
}

/// `(B, 1, 1, 1)` per-item scale factors.
pub(crate) fn per_item(values: &[f64], dtype: DType) -> Result<Tensor> {
    Ok(Tensor::from_vec(values.to_vec(), (values.len(), 1, 1, 1), &Device::Cpu)?.to_dtype(dtype)?)
}
