//! Noise schedule, paired losses, reverse sampler and training loop.

mod ablation;
mod loss;
mod optim;
mod sampler;
mod schedule;
pub mod tensors;
mod train;

pub use ablation::{vae_losses, VaeAblation, VaeConfig, VaeLossTerms};
pub use loss::{
    conventional_dm_loss, decode_and_correct, decoded_phase, loss_end_to_end, loss_latent, q_sample, LossBatch,
    LossOptions, PhaseMode,
};
pub use optim::{AdamW, AdamWConfig};
pub use sampler::{p_sample_step, reverse_loop, sample, sample_latents, sample_spectrograms, SamplerConfig};
pub use schedule::{make_schedule, NoiseSchedule, ScheduleConfig};
pub use train::{
    read_loss_log, smoothed, LossRecord, LrDecay, Precision, TrainConfig, TrainSummary, Trainer,
    DIVERGENCE_PATIENCE,
};
