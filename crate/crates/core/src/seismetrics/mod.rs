//! Evaluation: waveform similarity, phase picking, local magnitude, GMPE
//! residuals, spectra and record sections.

mod gmpe;
mod magnitude;
mod picker;
mod report;
mod section;
mod similarity;
mod spectrum;

pub use gmpe::{
    gmpe_pga, gmpe_report, pga_g, read_gmpe_csv, residual_summary, write_gmpe_csv, GmpeCoefficients, GmpePoint,
    Observation, PointSource, ResidualSummary, DEFAULT_VS30, STANDARD_G,
};
pub use magnitude::{
    local_magnitude, wood_anderson, wood_anderson_peak, Attenuation, MAX_MAGNITUDE_DISTANCE_KM,
    WOOD_ANDERSON_DAMPING, WOOD_ANDERSON_GAIN, WOOD_ANDERSON_PERIOD_S,
};
pub use picker::{
    phase_mae, pick_phases, ExternalPicker, PhaseScore, PickRequest, PickResult, Picker, StaLtaPicker,
    PICK_TOLERANCE_S,
};
pub use report::{EvalAggregates, EvalReport, EvalRow, CSV_HEADER};
pub use section::{section_plot_data, station_line, SectionRow, WaveformSynthesizer};
pub use similarity::{
    envelope_correlation, hilbert_envelope, pearson, psnr, savgol_smooth, smoothed_envelope, snr, spectrogram_mse,
    DB_CAP, SAVGOL_ORDER, SAVGOL_WINDOW,
};
pub use spectrum::{
    amplitude_spectrum, frequency_content, konno_ohmachi, konno_ohmachi_weight, SpectrumResult,
    KONNO_OHMACHI_BANDWIDTH,
};
