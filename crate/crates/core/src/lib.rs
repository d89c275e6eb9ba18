//! Paired-observation latent diffusion for 3-component seismic ground motion.
//!
//! The crate is organised along the pipeline:
//!
//! * [`seisdata`]: catalog, trace storage, signal conditioning, pair sampling
//!   and a synthetic event generator.
//! * [`features`]: the 11-dimensional condition vector and the
//!   waveform/spectrogram transforms (STFT, Griffin-Lim).
//! * [`nets`]: autoencoder, condition encoder, cross-attention U-Net and the
//!   amplitude correction module, built on `candle` tensors.
//! * [`diffusion`]: noise schedule, paired losses, reverse sampler and trainer.
//! * [`seismetrics`]: similarity metrics, phase picking, local magnitude,
//!   GMPE and spectral analysis.
//! * [`cli`]: the `seisgen` command line front end.

pub mod cli;
pub mod config;
pub mod diffusion;
pub mod error;
pub mod features;
pub mod nets;
pub mod seisdata;
pub mod seismetrics;

pub use error::{Error, Result};
