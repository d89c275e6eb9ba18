//! `scedc-csv` raw dump importer.
//!
//! Layout of the input directory (missing files count as empty):
//!
//! * `events.csv`: `event_id,e_lat,e_lon,e_dep,e_m,origin_time[,split]`
//! * `stations.csv`: `station_id,s_lat,s_lon`
//! * `waveforms.csv`: `event_id,station_id,file,sample_rate,p_arrival_s,s_arrival_s`
//!   with arrival times in seconds after origin (empty when unknown)
//! * waveform files: little-endian f32, E then N then Z, each channel the
//!   same length, recording starting at the origin time.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::seisdata::{
    condition_trace, Catalog, EventRecord, Split, StationRecord, Trace, N_CHANNELS, SAMPLE_RATE, TRACE_LEN,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawEventRow {
    pub event_id: String,
    pub e_lat: f64,
    pub e_lon: f64,
    pub e_dep: f64,
    pub e_m: f64,
    pub origin_time: f64,
    #[serde(default)]
    pub split: Option<Split>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawWaveformRow {
    pub event_id: String,
    pub station_id: String,
    pub file: String,
    pub sample_rate: f64,
    pub p_arrival_s: Option<f64>,
    pub s_arrival_s: Option<f64>,
}

fn rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let name = path.file_name().unwrap_or_default().to_string_lossy().to_string();
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::Catalog(format!("{name} row {}: {e}", i + 2))))
        .collect()
}

fn read_raw(path: &Path) -> Result<Vec<Vec<f64>>> {
    let bytes = fs::read(path).map_err(|e| Error::at_path(path, e))?;
    if bytes.len() % (4 * N_CHANNELS) != 0 || bytes.is_empty() {
        return Err(Error::Catalog(format!(
            "{}: size {} is not three equal f32 channels",
            path.display(),
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let n = values.len() / N_CHANNELS;
    Ok(values.chunks(n).map(<[f64]>::to_vec).collect())
}

/// Counts printed after a build.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub events: usize,
    pub stations: usize,
    pub traces: usize,
    pub labeled_traces: usize,
    pub padded_traces: usize,
    pub traces_per_event: f64,
    pub traces_per_station: f64,
    pub mean_magnitude: f64,
    pub mean_depth_km: f64,
}

impl DatasetSummary {
    pub fn of(catalog: &Catalog, padded: usize) -> Self {
        let events = catalog.events().len();
        let stations = catalog.stations().len();
        let traces = catalog.entries().len();
        let per = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let mean = |f: fn(&EventRecord) -> f64| {
            if events == 0 {
                0.0
            } else {
                catalog.events().iter().map(f).sum::<f64>() / events as f64
            }
        };
        Self {
            events,
            stations,
            traces,
            labeled_traces: catalog.entries().iter().filter(|e| e.is_labeled()).count(),
            padded_traces: padded,
            traces_per_event: per(traces, events),
            traces_per_station: per(traces, stations),
            mean_magnitude: mean(|e| e.e_m),
            mean_depth_km: mean(|e| e.e_dep),
        }
    }
}

impl std::fmt::Display for DatasetSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "events:             {}", self.events)?;
        writeln!(f, "stations:           {}", self.stations)?;
        writeln!(f, "traces:             {} ({} labeled, {} padded)", self.traces, self.labeled_traces, self.padded_traces)?;
        writeln!(f, "traces per event:   {:.2}", self.traces_per_event)?;
        writeln!(f, "traces per station: {:.2}", self.traces_per_station)?;
        writeln!(f, "mean magnitude:     {:.2}", self.mean_magnitude)?;
        write!(f, "mean depth (km):    {:.2}", self.mean_depth_km)
    }
}

fn to_index(seconds: Option<f64>) -> Option<usize> {
    seconds
        .filter(|s| s.is_finite() && *s >= 0.0)
        .map(|s| (s * SAMPLE_RATE).round() as usize)
        .filter(|&i| i < TRACE_LEN)
}

/// Build a catalog from a raw dump, conditioning every waveform.
pub fn import_scedc_csv(input: &Path) -> Result<(Catalog, DatasetSummary)> {
    if !input.is_dir() {
        return Err(Error::NotFound(format!("input directory {}", input.display())));
    }
    let events: Vec<RawEventRow> = rows(&input.join("events.csv"))?;
    let stations: Vec<StationRecord> = rows(&input.join("stations.csv"))?;
    let waveforms: Vec<RawWaveformRow> = rows(&input.join("waveforms.csv"))?;

    let mut catalog = Catalog::new();
    let mut seen = BTreeSet::new();
    for (i, e) in events.into_iter().enumerate() {
        if !seen.insert(e.event_id.clone()) {
            return Err(Error::Catalog(format!("events.csv row {}: duplicate event_id {}", i + 2, e.event_id)));
        }
        let split = e.split.unwrap_or(Split::Train);
        catalog
            .add_event(
                EventRecord {
                    event_id: e.event_id,
                    e_lat: e.e_lat,
                    e_lon: e.e_lon,
                    e_dep: e.e_dep,
                    e_m: e.e_m,
                    origin_time: e.origin_time,
                },
                split,
            )
            .map_err(|err| Error::Catalog(format!("events.csv row {}: {err}", i + 2)))?;
    }
    for (i, s) in stations.into_iter().enumerate() {
        catalog
            .add_station(s)
            .map_err(|err| Error::Catalog(format!("stations.csv row {}: {err}", i + 2)))?;
    }
    let mut padded = 0;
    for (i, w) in waveforms.into_iter().enumerate() {
        let row = i + 2;
        let raw = read_raw(&input.join(&w.file))?;
        let conditioned = condition_trace(&raw, w.sample_rate)
            .map_err(|err| Error::Catalog(format!("waveforms.csv row {row}: {err}")))?;
        padded += conditioned.padded as usize;
        let (mut p, mut s) = (to_index(w.p_arrival_s), to_index(w.s_arrival_s));
        if let (Some(pi), Some(si)) = (p, s) {
            if pi >= si {
                log::warn!("waveforms.csv row {row}: P not before S, dropping both labels");
                p = None;
                s = None;
            }
        }
        let trace = Trace::new(w.event_id, w.station_id, conditioned.samples, p, s)
            .map_err(|err| Error::Catalog(format!("waveforms.csv row {row}: {err}")))?;
        catalog
            .add_trace(trace)
            .map_err(|err| Error::Catalog(format!("waveforms.csv row {row}: {err}")))?;
    }
    catalog.validate()?;
    let summary = DatasetSummary::of(&catalog, padded);
    Ok((catalog, summary))
}

/// Write `catalog` in the raw dump layout (traces stored unconditioned at
/// 100 Hz). Used to produce importer test inputs.
pub fn write_raw_dump(catalog: &Catalog, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("waveforms")).map_err(|e| Error::at_path(dir, e))?;
    let mut w = csv::Writer::from_path(dir.join("events.csv"))?;
    for e in catalog.events() {
        w.serialize(RawEventRow {
            event_id: e.event_id.clone(),
            e_lat: e.e_lat,
            e_lon: e.e_lon,
            e_dep: e.e_dep,
            e_m: e.e_m,
            origin_time: e.origin_time,
            split: catalog.split_of(&e.event_id),
        })?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("stations.csv"))?;
    for s in catalog.stations() {
        w.serialize(s)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("waveforms.csv"))?;
    for entry in catalog.entries() {
        let trace = catalog.load_trace(entry)?;
        let file = format!("waveforms/{}_{}.f32", entry.event_id, entry.station_id);
        let bytes: Vec<u8> = trace.samples().iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(dir.join(&file), bytes).map_err(|e| Error::at_path(dir.join(&file), e))?;
        w.serialize(RawWaveformRow {
            event_id: entry.event_id.clone(),
            station_id: entry.station_id.clone(),
            file,
            sample_rate: SAMPLE_RATE,
            p_arrival_s: trace.p_time(),
            s_arrival_s: trace.s_time(),
        })?;
    }
    w.flush()?;
    Ok(())
}
