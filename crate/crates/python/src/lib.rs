//! Python bindings: condition encoding, spectrogram transforms, metrics and
//! checkpoint sampling.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use seisgen::diffusion::{NoiseSchedule, SamplerConfig};
use seisgen::features::{self, GriffinLimConfig, RegionNormalization, Spectrogram, DEFAULT_LOG_EPSILON};
use seisgen::nets::{load_checkpoint, Nets};
use seisgen::seisdata::{EventRecord, StationRecord, Trace};
use seisgen::seismetrics;

fn py_err(e: seisgen::Error) -> PyErr {
    match e {
        seisgen::Error::Config(_)
        | seisgen::Error::InvalidInput(_)
        | seisgen::Error::OutOfRegion { .. }
        | seisgen::Error::Shape { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn records(s_lat: f64, s_lon: f64, e_lat: f64, e_lon: f64, e_dep: f64, e_m: f64) -> (EventRecord, StationRecord) {
    (
        EventRecord {
            event_id: "py".into(),
            e_lat,
            e_lon,
            e_dep,
            e_m,
            origin_time: 0.0,
        },
        StationRecord {
            station_id: "py".into(),
            s_lat,
            s_lon,
        },
    )
}

fn trace(samples: Vec<f32>) -> PyResult<Trace> {
    Trace::from_samples(samples).map_err(py_err)
}

/// The 11-element condition vector under the default region.
#[pyfunction]
fn encode_condition(s_lat: f64, s_lon: f64, e_lat: f64, e_lon: f64, e_dep: f64, e_m: f64) -> PyResult<Vec<f64>> {
    let (e, s) = records(s_lat, s_lon, e_lat, e_lon, e_dep, e_m);
    Ok(features::encode_condition(&e, &s, &RegionNormalization::default())
        .map_err(py_err)?
        .to_array()
        .to_vec())
}

/// Flat 3 x 6000 waveform to a flat 3 x 64 x 376 log-amplitude spectrogram.
#[pyfunction]
fn waveform_to_spectrogram(samples: Vec<f32>) -> PyResult<Vec<f32>> {
    Ok(features::waveform_to_spectrogram(&trace(samples)?).into_values())
}

#[pyfunction]
#[pyo3(signature = (values, iterations = 64))]
fn spectrogram_to_waveform(values: Vec<f32>, iterations: usize) -> PyResult<Vec<f32>> {
    let spec = Spectrogram::new(values, DEFAULT_LOG_EPSILON).map_err(py_err)?;
    features::spectrogram_to_waveform(&spec, iterations).map_err(py_err)
}

#[pyfunction]
fn envelope_correlation(a: Vec<f32>, b: Vec<f32>) -> PyResult<f64> {
    Ok(seismetrics::envelope_correlation(&trace(a)?, &trace(b)?))
}

#[pyfunction]
fn local_magnitude(samples: Vec<f32>, r_hypo_km: f64) -> PyResult<f64> {
    seismetrics::local_magnitude(&trace(samples)?, r_hypo_km, &seismetrics::Attenuation::default()).map_err(py_err)
}

/// Predicted PGA in g with the shipped coefficient table.
#[pyfunction]
#[pyo3(signature = (m_l, r_hypo_km, vs30 = None))]
fn gmpe_pga(m_l: f64, r_hypo_km: f64, vs30: Option<f64>) -> f64 {
    seismetrics::gmpe_pga(&seismetrics::GmpeCoefficients::default(), m_l, r_hypo_km, vs30)
}

/// A trained checkpoint.
#[pyclass(unsendable)]
struct Model {
    nets: Nets,
    schedule: NoiseSchedule,
    region: RegionNormalization,
}

#[pymethods]
impl Model {
    #[new]
    fn new(path: PathBuf) -> PyResult<Self> {
        let (manifest, nets, _) = load_checkpoint(&path).map_err(py_err)?;
        let schedule = NoiseSchedule::new(manifest.schedule).map_err(py_err)?;
        Ok(Self {
            nets,
            schedule,
            region: manifest.region.unwrap_or_default(),
        })
    }

    #[getter]
    fn timesteps(&self) -> usize {
        self.schedule.timesteps()
    }

    /// Synthesize a flat 3 x 6000 waveform; `source` switches to
    /// with-source sampling.
    #[pyo3(signature = (s_lat, s_lon, e_lat, e_lon, e_dep, e_m, seed = 0, steps = None, source = None, griffin_lim_iterations = 64))]
    #[allow(clippy::too_many_arguments)]
    fn sample(
        &self,
        s_lat: f64,
        s_lon: f64,
        e_lat: f64,
        e_lon: f64,
        e_dep: f64,
        e_m: f64,
        seed: u64,
        steps: Option<usize>,
        source: Option<Vec<f32>>,
        griffin_lim_iterations: usize,
    ) -> PyResult<Vec<f32>> {
        let (e, s) = records(s_lat, s_lon, e_lat, e_lon, e_dep, e_m);
        let source = source.map(trace).transpose()?;
        let sampler = SamplerConfig {
            steps: steps.unwrap_or(self.schedule.timesteps()),
            seed,
            griffin_lim: GriffinLimConfig {
                iterations: griffin_lim_iterations,
                ..Default::default()
            },
            ..Default::default()
        };
        seisgen::cli::sample_one(&self.nets, &self.schedule, &sampler, &e, &s, &self.region, source.as_ref())
            .map(Trace::into_samples)
            .map_err(py_err)
    }
}

#[pymodule]
fn seisgen_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(encode_condition, m)?)?;
    m.add_function(wrap_pyfunction!(waveform_to_spectrogram, m)?)?;
    m.add_function(wrap_pyfunction!(spectrogram_to_waveform, m)?)?;
    m.add_function(wrap_pyfunction!(envelope_correlation, m)?)?;
    m.add_function(wrap_pyfunction!(local_magnitude, m)?)?;
    m.add_function(wrap_pyfunction!(gmpe_pga, m)?)?;
    m.add_class::<Model>()?;
    m.add("TRACE_SAMPLES", 3 * seisgen::seisdata::TRACE_LEN)?;
    Ok(())
}
