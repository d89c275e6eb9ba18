//! Condition vectors and waveform/spectrogram transforms.

mod condition;
mod geo;
mod griffin_lim;
mod standardize;
mod stft;

pub use condition::{encode_condition, ConditionVector, RegionNormalization, CONDITION_DIM};
pub use geo::{
    back_azimuth, destination_point, epicentral_distance, great_circle_km, hypocentral_distance,
    EARTH_RADIUS_KM,
};
pub use griffin_lim::{griffin_lim, griffin_lim_phase, GriffinLimConfig};
pub use standardize::{destandardize, standardize, SpectrogramStats};
pub use stft::{
    istft_channel, spectrogram_to_waveform, spectrogram_to_waveform_with, stft_channel,
    waveform_to_spectrogram, waveform_to_spectrogram_with, Spectrogram, DEFAULT_LOG_EPSILON,
    HOP_LENGTH, N_BINS, N_FFT, N_FRAMES, N_FREQ,
};
