//! Record-section data: synthesized traces along a line of virtual stations.

use serde::{Deserialize, Serialize};

use crate::features::{destination_point, encode_condition, epicentral_distance, ConditionVector, RegionNormalization};
use crate::seisdata::{EventRecord, StationRecord, Trace};
use crate::{Error, Result};

/// Anything that can turn a condition vector into a 3 x 6000 waveform.
pub trait WaveformSynthesizer {
    fn synthesize(&self, condition: &ConditionVector, seed: u64) -> Result<Vec<f32>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionRow {
    pub station_id: String,
    pub distance_km: f64,
    pub condition: ConditionVector,
    pub synthetic: Vec<f32>,
    pub observed: Option<Vec<f32>>,
}

/// `count` stations at `spacing_km` intervals from the epicentre along
/// `bearing` (radians clockwise from north), named `{prefix}{index:03}`.
pub fn station_line(event: &EventRecord, bearing: f64, spacing_km: f64, count: usize, prefix: &str) -> Vec<StationRecord> {
    (1..=count)
        .map(|i| {
            let (s_lat, s_lon) = destination_point(event.e_lat, event.e_lon, bearing, spacing_km * i as f64);
            StationRecord {
                station_id: format!("{prefix}{i:03}"),
                s_lat,
                s_lon,
            }
        })
        .collect()
}

/// One row per station, ordered by epicentral distance. A real record is
/// attached to a row when its station lies within `match_km` of that row's
/// distance; the closest one wins.
pub fn section_plot_data(
    event: &EventRecord,
    stations: &[StationRecord],
    observed: &[(StationRecord, Trace)],
    model: &dyn WaveformSynthesizer,
    norms: &RegionNormalization,
    match_km: f64,
    seed: u64,
) -> Result<Vec<SectionRow>> {
    if stations.is_empty() {
        return Err(Error::InvalidInput("empty station line".into()));
    }
    let mut order: Vec<(f64, &StationRecord)> =
        stations.iter().map(|s| (epicentral_distance(event, s), s)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));
    let real: Vec<(f64, &Trace)> = observed
        .iter()
        .filter(|(_, t)| t.event_id == event.event_id)
        .map(|(s, t)| (epicentral_distance(event, s), t))
        .collect();
    order
        .into_iter()
        .enumerate()
        .map(|(i, (d, s))| {
            let condition = encode_condition(event, s, norms)?;
            let synthetic = model.synthesize(&condition, seed.wrapping_add(i as u64))?;
            let observed = real
                .iter()
                .filter(|(rd, _)| (rd - d).abs() <= match_km)
                .min_by(|a, b| (a.0 - d).abs().total_cmp(&(b.0 - d).abs()))
                .map(|(_, t)| t.samples().to_vec());
            Ok(SectionRow {
                station_id: s.station_id.clone(),
                distance_km: d,
                condition,
                synthetic,
                observed,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seisdata::{generate_synthetic_event, SyntheticEventSpec, TRACE_LEN};

    struct Flat;
    impl WaveformSynthesizer for Flat {
        fn synthesize(&self, c: &ConditionVector, _seed: u64) -> Result<Vec<f32>> {
            Ok(vec![c.r_norm as f32; 3 * TRACE_LEN])
        }
    }

    fn event() -> EventRecord {
        EventRecord {
            event_id: "EV".into(),
            e_lat: 34.0,
            e_lon: -118.0,
            e_dep: 5.0,
            e_m: 3.5,
            origin_time: 0.0,
        }
    }

    #[test]
    fn rows_follow_distance() {
        let ev = event();
        let mut line = station_line(&ev, 0.7, 15.0, 6, "V");
        line.reverse();
        let rows = section_plot_data(&ev, &line, &[], &Flat, &RegionNormalization::default(), 1.0, 0).unwrap();
        assert_eq!(rows.len(), 6);
        assert!(rows.windows(2).all(|w| w[0].distance_km < w[1].distance_km));
        assert!((rows[0].distance_km - 15.0).abs() < 1e-6);
        // Onset ordering from the travel-time oracle of the generator.
        let synth = generate_synthetic_event(&SyntheticEventSpec::new(ev.clone(), line.clone(), 1)).unwrap();
        let mut onsets: Vec<(f64, usize)> = synth
            .traces
            .iter()
            .map(|t| {
                let s = line.iter().find(|s| s.station_id == t.station_id).unwrap();
                (epicentral_distance(&ev, s), t.p_arrival.unwrap())
            })
            .collect();
        onsets.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!(onsets.windows(2).all(|w| w[0].1 <= w[1].1));
    }

    #[test]
    fn same_distance_differs_only_in_azimuth() {
        let ev = event();
        let a = &station_line(&ev, 0.3, 30.0, 1, "A")[0];
        let b = &station_line(&ev, 2.0, 30.0, 1, "B")[0];
        let norms = RegionNormalization::default();
        let ca = encode_condition(&ev, a, &norms).unwrap();
        let cb = encode_condition(&ev, b, &norms).unwrap();
        assert_eq!(ca.c_epi, cb.c_epi);
        assert!((ca.r_norm - cb.r_norm).abs() < 1e-9);
        assert_eq!((ca.d_norm, ca.m_norm), (cb.d_norm, cb.m_norm));
        assert!(ca.c_azi != cb.c_azi);
    }

    #[test]
    fn attaches_nearby_observation_and_rejects_empty() {
        let ev = event();
        let line = station_line(&ev, 1.0, 20.0, 3, "V");
        let obs_station = station_line(&ev, 2.5, 40.3, 1, "R").remove(0);
        let trace = Trace::new("EV", "R001", vec![1.0; 3 * TRACE_LEN], None, None).unwrap();
        let norms = RegionNormalization::default();
        let rows = section_plot_data(&ev, &line, &[(obs_station, trace)], &Flat, &norms, 1.0, 0).unwrap();
        assert!(rows[0].observed.is_none() && rows[1].observed.is_some() && rows[2].observed.is_none());
        assert!(section_plot_data(&ev, &[], &[], &Flat, &norms, 1.0, 0).is_err());
    }
}
