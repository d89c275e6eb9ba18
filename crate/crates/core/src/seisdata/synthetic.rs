//! Synthetic events with known arrivals and amplitude law, for desk-scale
//! training and picker calibration.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::filter::SosFilter;
use super::{Catalog, EventRecord, Split, StationRecord, Trace, N_CHANNELS, SAMPLE_RATE, TRACE_LEN};
use crate::features::{destination_point, hypocentral_distance, RegionNormalization};
use crate::{Error, Result};

pub const P_VELOCITY_KM_S: f64 = 6.0;
pub const S_VELOCITY_KM_S: f64 = 3.5;

const P_DECAY_S: f64 = 3.0;
const S_DECAY_S: f64 = 6.0;
const S_TO_P_AMPLITUDE: f64 = 2.5;
// Per-component weights (E, N, Z).
const P_WEIGHTS: [f64; 3] = [0.4, 0.4, 1.0];
const S_WEIGHTS: [f64; 3] = [1.0, 1.0, 0.4];

fn source_band() -> &'static SosFilter {
    static FILTER: OnceLock<SosFilter> = OnceLock::new();
    FILTER.get_or_init(|| {
        SosFilter::butterworth_bandpass(2, 2.0, 12.0, SAMPLE_RATE).expect("valid band")
    })
}

/// Unit-RMS band-limited Gaussian noise.
fn band_noise(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let white: Vec<f64> = (0..TRACE_LEN).map(|_| rng.sample(StandardNormal)).collect();
    let mut x = source_band().filtfilt(&white);
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    x.iter_mut().for_each(|v| *v /= rms);
    x
}

#[derive(Debug, Clone)]
pub struct SyntheticEventSpec {
    pub event: EventRecord,
    pub stations: Vec<StationRecord>,
    pub seed: u64,
    /// Background noise RMS relative to the unit P coda amplitude.
    pub noise_level: f64,
}

impl SyntheticEventSpec {
    pub fn new(event: EventRecord, stations: Vec<StationRecord>, seed: u64) -> Self {
        Self {
            event,
            stations,
            seed,
            noise_level: 0.02,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticEvent {
    pub event: EventRecord,
    pub traces: Vec<Trace>,
    /// Stations dropped because the S wave arrives after 59 s.
    pub excluded: Vec<String>,
}

/// Arrival sample index for travel distance `r_km` at `velocity`.
pub(crate) fn arrival_index(r_km: f64, velocity: f64) -> usize {
    (r_km / velocity * SAMPLE_RATE).round() as usize
}

/// Band-limited noise traces with P and S onsets at `R_hypo / v` and an
/// overall amplitude scale of `10^M / R_hypo`.
pub fn generate_synthetic_event(spec: &SyntheticEventSpec) -> Result<SyntheticEvent> {
    let n = spec.stations.len();
    if !(1..=64).contains(&n) {
        return Err(Error::InvalidInput(format!("need 1..=64 stations, got {n}")));
    }
    let m = spec.event.e_m;
    if !(2.0..=6.0).contains(&m) {
        return Err(Error::InvalidInput(format!("magnitude {m} outside [2, 6]")));
    }
    spec.event.validate()?;
    let mut traces = Vec::with_capacity(n);
    let mut excluded = Vec::new();
    for (index, station) in spec.stations.iter().enumerate() {
        let r = hypocentral_distance(&spec.event, station).max(1.0);
        if r / S_VELOCITY_KM_S > 59.0 {
            log::warn!(
                "station {} excluded: S travel time {:.1} s exceeds the window",
                station.station_id,
                r / S_VELOCITY_KM_S
            );
            excluded.push(station.station_id.clone());
            continue;
        }
        let p = arrival_index(r, P_VELOCITY_KM_S);
        let s = arrival_index(r, S_VELOCITY_KM_S);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(index as u64);
        let scale = 10f64.powf(m) / r;
        let mut samples = vec![0f32; N_CHANNELS * TRACE_LEN];
        for c in 0..N_CHANNELS {
            let background = band_noise(&mut rng);
            let p_coda = band_noise(&mut rng);
            let s_coda = band_noise(&mut rng);
            for i in 0..TRACE_LEN {
                let mut v = spec.noise_level * background[i];
                if i >= p {
                    let dt = (i - p) as f64 / SAMPLE_RATE;
                    v += P_WEIGHTS[c] * (-dt / P_DECAY_S).exp() * p_coda[i];
                }
                if i >= s {
                    let dt = (i - s) as f64 / SAMPLE_RATE;
                    v += S_TO_P_AMPLITUDE * S_WEIGHTS[c] * (-dt / S_DECAY_S).exp() * s_coda[i];
                }
                samples[c * TRACE_LEN + i] = (scale * v) as f32;
            }
        }
        traces.push(Trace::new(
            spec.event.event_id.clone(),
            station.station_id.clone(),
            samples,
            Some(p),
            Some(s),
        )?);
    }
    Ok(SyntheticEvent {
        event: spec.event.clone(),
        traces,
        excluded,
    })
}

/// Parameters of a random synthetic catalog inside a region.
#[derive(Debug, Clone)]
pub struct SyntheticCatalogSpec {
    pub events: usize,
    pub stations: usize,
    pub seed: u64,
    /// Fraction of events (rounded up) assigned to the test split.
    pub test_fraction: f64,
    pub magnitude_range: (f64, f64),
    pub depth_range_km: (f64, f64),
    pub noise_level: f64,
}

impl SyntheticCatalogSpec {
    pub fn new(events: usize, stations: usize, seed: u64) -> Self {
        Self {
            events,
            stations,
            seed,
            test_fraction: 0.0,
            magnitude_range: (2.0, 4.0),
            depth_range_km: (2.0, 20.0),
            noise_level: 0.02,
        }
    }
}

/// Random stations and events in `region`, every station recording every
/// event (minus out-of-window stations).
pub fn synthetic_catalog(spec: &SyntheticCatalogSpec, region: &RegionNormalization) -> Result<Catalog> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut catalog = Catalog::new();
    let inset = |lo: f64, hi: f64, u: f64| lo + (hi - lo) * (0.1 + 0.8 * u);
    let stations: Vec<StationRecord> = (0..spec.stations)
        .map(|i| StationRecord {
            station_id: format!("ST{i:03}"),
            s_lat: inset(region.l_lat, region.u_lat, rng.random()),
            s_lon: inset(region.l_lon, region.u_lon, rng.random()),
        })
        .collect();
    for s in &stations {
        catalog.add_station(s.clone())?;
    }
    let n_test = (spec.events as f64 * spec.test_fraction).ceil() as usize;
    for e in 0..spec.events {
        let (m0, m1) = spec.magnitude_range;
        let (d0, d1) = spec.depth_range_km;
        let event = EventRecord {
            event_id: format!("EV{e:04}"),
            e_lat: inset(region.l_lat, region.u_lat, rng.random()),
            e_lon: inset(region.l_lon, region.u_lon, rng.random()),
            e_dep: d0 + (d1 - d0) * rng.random::<f64>(),
            e_m: m0 + (m1 - m0) * rng.random::<f64>(),
            origin_time: 1.5e9 + 3600.0 * e as f64,
        };
        let split = if e + n_test >= spec.events && n_test > 0 {
            Split::Test
        } else {
            Split::Train
        };
        let mut ev_spec = SyntheticEventSpec::new(event.clone(), stations.clone(), rng.random());
        ev_spec.noise_level = spec.noise_level;
        let generated = generate_synthetic_event(&ev_spec)?;
        catalog.add_event(event, split)?;
        for t in generated.traces {
            catalog.add_trace(t)?;
        }
    }
    Ok(catalog)
}

/// A small all-training catalog where every event has exactly
/// `stations_per_event` nearby recordings (15 to 80 km epicentral distance),
/// so no station is lost to the recording window.
pub fn toy_catalog(
    events: usize,
    stations_per_event: usize,
    seed: u64,
    region: &RegionNormalization,
) -> Result<Catalog> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut catalog = Catalog::new();
    let mid = |lo: f64, hi: f64, u: f64| lo + (hi - lo) * (0.35 + 0.3 * u);
    for e in 0..events {
        let event = EventRecord {
            event_id: format!("EV{e:04}"),
            e_lat: mid(region.l_lat, region.u_lat, rng.random()),
            e_lon: mid(region.l_lon, region.u_lon, rng.random()),
            e_dep: 4.0 + 12.0 * rng.random::<f64>(),
            e_m: 2.5 + 1.5 * rng.random::<f64>(),
            origin_time: 1.5e9 + 3600.0 * e as f64,
        };
        let stations: Vec<StationRecord> = (0..stations_per_event)
            .map(|k| {
                let bearing = 360.0 * rng.random::<f64>();
                let dist = 15.0 + 65.0 * rng.random::<f64>();
                let (s_lat, s_lon) = destination_point(event.e_lat, event.e_lon, bearing, dist);
                StationRecord {
                    station_id: format!("T{e:03}{k:02}"),
                    s_lat,
                    s_lon,
                }
            })
            .collect();
        for s in &stations {
            catalog.add_station(s.clone())?;
        }
        let generated = generate_synthetic_event(&SyntheticEventSpec::new(event.clone(), stations, rng.random()))?;
        catalog.add_event(event, Split::Train)?;
        for t in generated.traces {
            catalog.add_trace(t)?;
        }
    }
    Ok(catalog)
}
