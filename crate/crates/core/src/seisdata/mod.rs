//! Earthquake catalog, trace storage, signal conditioning and pair sampling.

mod conditioning;
pub mod filter;
mod io;
mod sampling;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use conditioning::{
    condition_trace, detrend_linear, resample_poly, trace_bandpass, Conditioned, BAND_HIGH_HZ,
    BAND_LOW_HZ,
};
pub use io::{export_catalog, import_catalog, read_trace_file, write_trace_file};
pub use sampling::{sample_pair, PairSampler, SourcePolicy};
pub use synthetic::{
    generate_synthetic_event, synthetic_catalog, toy_catalog, SyntheticCatalogSpec, SyntheticEvent,
    SyntheticEventSpec, P_VELOCITY_KM_S, S_VELOCITY_KM_S,
};

use crate::features::ConditionVector;
use crate::{Error, Result};

/// Samples per second of every stored trace.
pub const SAMPLE_RATE: f64 = 100.0;
/// Samples per channel (60 s at 100 Hz).
pub const TRACE_LEN: usize = 6000;
/// E, N and Z components.
pub const N_CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationRecord {
    pub station_id: String,
    pub s_lat: f64,
    pub s_lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub event_id: String,
    pub e_lat: f64,
    pub e_lon: f64,
    /// Hypocentral depth in km.
    pub e_dep: f64,
    pub e_m: f64,
    /// Seconds since the Unix epoch.
    pub origin_time: f64,
}

impl EventRecord {
    pub fn validate(&self) -> Result<()> {
        if !(self.e_dep.is_finite() && self.e_dep >= 0.0) {
            return Err(Error::Catalog(format!(
                "event {}: depth {} must be >= 0",
                self.event_id, self.e_dep
            )));
        }
        if !self.e_m.is_finite() || !self.e_lat.is_finite() || !self.e_lon.is_finite() {
            return Err(Error::Catalog(format!(
                "event {}: non-finite location or magnitude",
                self.event_id
            )));
        }
        Ok(())
    }
}

/// A 60 s, 100 Hz, 3-component acceleration record starting at the origin
/// time. Samples are stored row-major (E, N, Z).
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub event_id: String,
    pub station_id: String,
    samples: Vec<f32>,
    pub p_arrival: Option<usize>,
    pub s_arrival: Option<usize>,
}

impl Trace {
    pub fn new(
        event_id: impl Into<String>,
        station_id: impl Into<String>,
        samples: Vec<f32>,
        p_arrival: Option<usize>,
        s_arrival: Option<usize>,
    ) -> Result<Self> {
        if samples.len() != N_CHANNELS * TRACE_LEN {
            return Err(Error::shape("Trace", N_CHANNELS * TRACE_LEN, samples.len()));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("trace contains non-finite samples".into()));
        }
        check_arrivals(p_arrival, s_arrival)?;
        Ok(Self {
            event_id: event_id.into(),
            station_id: station_id.into(),
            samples,
            p_arrival,
            s_arrival,
        })
    }

    /// An unlabeled trace with placeholder identifiers.
    pub fn from_samples(samples: Vec<f32>) -> Result<Self> {
        Self::new("", "", samples, None, None)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.samples[c * TRACE_LEN..(c + 1) * TRACE_LEN]
    }

    pub fn channel_f64(&self, c: usize) -> Vec<f64> {
        self.channel(c).iter().map(|&v| v as f64).collect()
    }

    pub fn p_time(&self) -> Option<f64> {
        self.p_arrival.map(|i| i as f64 / SAMPLE_RATE)
    }

    pub fn s_time(&self) -> Option<f64> {
        self.s_arrival.map(|i| i as f64 / SAMPLE_RATE)
    }

    pub fn is_labeled(&self) -> bool {
        self.p_arrival.is_some() || self.s_arrival.is_some()
    }
}

pub(crate) fn check_arrivals(p: Option<usize>, s: Option<usize>) -> Result<()> {
    for (name, v) in [("p_arrival", p), ("s_arrival", s)] {
        if let Some(i) = v {
            if i >= TRACE_LEN {
                return Err(Error::InvalidInput(format!("{name} {i} outside the trace")));
            }
        }
    }
    if let (Some(p), Some(s)) = (p, s) {
        if p >= s {
            return Err(Error::InvalidInput(format!(
                "p_arrival {p} must precede s_arrival {s}"
            )));
        }
    }
    Ok(())
}

/// Two observations of one event; the condition describes the target.
#[derive(Debug, Clone)]
pub struct PairedSample {
    pub source: Trace,
    pub target: Trace,
    pub condition: ConditionVector,
    /// Source and target are the same observation (single-trace event).
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Catalog row pointing at a stored trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub event_id: String,
    pub station_id: String,
    /// File name relative to the dataset's `traces/` directory.
    pub file: String,
    pub p_arrival: Option<usize>,
    pub s_arrival: Option<usize>,
}

impl TraceEntry {
    pub fn is_labeled(&self) -> bool {
        self.p_arrival.is_some() || self.s_arrival.is_some()
    }
}

#[derive(Debug, Clone)]
enum TraceStore {
    Memory(HashMap<String, Arc<Vec<f32>>>),
    Directory(PathBuf),
}

/// Events, stations and the traces linking them, partitioned by event into
/// train and test splits. Read-only once built; trace payloads are loaded
/// lazily for directory-backed catalogs.
#[derive(Debug, Clone)]
pub struct Catalog {
    events: Vec<EventRecord>,
    stations: Vec<StationRecord>,
    traces: Vec<TraceEntry>,
    split: BTreeMap<String, Split>,
    store: TraceStore,
}

impl Default for Catalog {
    fn default() -> Self {
        Self::new()
    }
}

impl PartialEq for Catalog {
    fn eq(&self, other: &Self) -> bool {
        self.events == other.events
            && self.stations == other.stations
            && self.traces == other.traces
            && self.split == other.split
    }
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

impl Catalog {
    /// Empty in-memory catalog.
    pub fn new() -> Self {
        Self {
            events: Vec::new(),
            stations: Vec::new(),
            traces: Vec::new(),
            split: BTreeMap::new(),
            store: TraceStore::Memory(HashMap::new()),
        }
    }

    pub(crate) fn from_parts(
        events: Vec<EventRecord>,
        stations: Vec<StationRecord>,
        traces: Vec<TraceEntry>,
        split: BTreeMap<String, Split>,
        root: PathBuf,
    ) -> Self {
        Self {
            events,
            stations,
            traces,
            split,
            store: TraceStore::Directory(root.join("traces")),
        }
    }

    pub fn add_event(&mut self, event: EventRecord, split: Split) -> Result<()> {
        event.validate()?;
        if self.split.contains_key(&event.event_id) {
            return Err(Error::Catalog(format!("duplicate event_id {}", event.event_id)));
        }
        self.split.insert(event.event_id.clone(), split);
        self.events.push(event);
        Ok(())
    }

    pub fn add_station(&mut self, station: StationRecord) -> Result<()> {
        if self.station(&station.station_id).is_some() {
            return Err(Error::Catalog(format!(
                "duplicate station_id {}",
                station.station_id
            )));
        }
        self.stations.push(station);
        Ok(())
    }

    /// Add a trace held in memory. The event and station must already exist.
    pub fn add_trace(&mut self, trace: Trace) -> Result<()> {
        if !self.split.contains_key(&trace.event_id) {
            return Err(Error::Catalog(format!("trace references unknown event {}", trace.event_id)));
        }
        if self.station(&trace.station_id).is_none() {
            return Err(Error::Catalog(format!(
                "trace references unknown station {}",
                trace.station_id
            )));
        }
        if self.entry(&trace.event_id, &trace.station_id).is_some() {
            return Err(Error::Catalog(format!(
                "duplicate trace ({}, {})",
                trace.event_id, trace.station_id
            )));
        }
        let base = format!("{}__{}", sanitize(&trace.event_id), sanitize(&trace.station_id));
        let mut file = format!("{base}.f32");
        let mut k = 1;
        while self.traces.iter().any(|t| t.file == file) {
            file = format!("{base}_{k}.f32");
            k += 1;
        }
        let TraceStore::Memory(map) = &mut self.store else {
            return Err(Error::Catalog("cannot add traces to a directory-backed catalog".into()));
        };
        map.insert(file.clone(), Arc::new(trace.samples));
        self.traces.push(TraceEntry {
            event_id: trace.event_id,
            station_id: trace.station_id,
            file,
            p_arrival: trace.p_arrival,
            s_arrival: trace.s_arrival,
        });
        Ok(())
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    pub fn stations(&self) -> &[StationRecord] {
        &self.stations
    }

    pub fn entries(&self) -> &[TraceEntry] {
        &self.traces
    }

    pub fn event(&self, event_id: &str) -> Option<&EventRecord> {
        self.events.iter().find(|e| e.event_id == event_id)
    }

    pub fn station(&self, station_id: &str) -> Option<&StationRecord> {
        self.stations.iter().find(|s| s.station_id == station_id)
    }

    pub fn entry(&self, event_id: &str, station_id: &str) -> Option<&TraceEntry> {
        self.traces
            .iter()
            .find(|t| t.event_id == event_id && t.station_id == station_id)
    }

    pub fn split_of(&self, event_id: &str) -> Option<Split> {
        self.split.get(event_id).copied()
    }

    pub fn event_ids(&self, split: Split) -> BTreeSet<String> {
        self.split
            .iter()
            .filter(|(_, s)| **s == split)
            .map(|(id, _)| id.clone())
            .collect()
    }

    /// Entries of one event sorted by station id.
    pub fn traces_of(&self, event_id: &str) -> Vec<&TraceEntry> {
        let mut v: Vec<&TraceEntry> = self.traces.iter().filter(|t| t.event_id == event_id).collect();
        v.sort_by(|a, b| a.station_id.cmp(&b.station_id));
        v
    }

    /// Entries belonging to events of `split`.
    pub fn entries_in(&self, split: Split) -> Vec<&TraceEntry> {
        self.traces
            .iter()
            .filter(|t| self.split_of(&t.event_id) == Some(split))
            .collect()
    }

    pub(crate) fn raw_samples(&self, entry: &TraceEntry) -> Result<Arc<Vec<f32>>> {
        match &self.store {
            TraceStore::Memory(map) => map
                .get(&entry.file)
                .cloned()
                .ok_or_else(|| Error::NotFound(format!("trace payload {}", entry.file))),
            TraceStore::Directory(dir) => Ok(Arc::new(read_trace_file(&dir.join(&entry.file))?)),
        }
    }

    pub fn load_trace(&self, entry: &TraceEntry) -> Result<Trace> {
        let samples = self.raw_samples(entry)?;
        Trace::new(
            entry.event_id.clone(),
            entry.station_id.clone(),
            samples.as_ref().clone(),
            entry.p_arrival,
            entry.s_arrival,
        )
    }

    pub fn trace(&self, event_id: &str, station_id: &str) -> Result<Trace> {
        let entry = self.entry(event_id, station_id).ok_or_else(|| {
            Error::NotFound(format!("trace ({event_id}, {station_id})"))
        })?;
        self.load_trace(entry)
    }

    /// Directory holding the trace files, for directory-backed catalogs.
    pub fn trace_dir(&self) -> Option<&Path> {
        match &self.store {
            TraceStore::Directory(p) => Some(p),
            TraceStore::Memory(_) => None,
        }
    }

    /// Check referential integrity, identifier uniqueness and split hygiene.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for e in &self.events {
            e.validate()?;
            if !seen.insert(e.event_id.as_str()) {
                return Err(Error::Catalog(format!("duplicate event_id {}", e.event_id)));
            }
            if !self.split.contains_key(&e.event_id) {
                return Err(Error::Catalog(format!("event {} has no split", e.event_id)));
            }
        }
        let mut st = BTreeSet::new();
        for s in &self.stations {
            if !st.insert(s.station_id.as_str()) {
                return Err(Error::Catalog(format!("duplicate station_id {}", s.station_id)));
            }
        }
        let train = self.event_ids(Split::Train);
        let test = self.event_ids(Split::Test);
        if let Some(id) = train.intersection(&test).next() {
            return Err(Error::Catalog(format!("event {id} is in both train and test splits")));
        }
        let mut keys = BTreeSet::new();
        for t in &self.traces {
            if !seen.contains(t.event_id.as_str()) {
                return Err(Error::Catalog(format!("trace references unknown event {}", t.event_id)));
            }
            if !st.contains(t.station_id.as_str()) {
                return Err(Error::Catalog(format!(
                    "trace references unknown station {}",
                    t.station_id
                )));
            }
            if !keys.insert((t.event_id.as_str(), t.station_id.as_str())) {
                return Err(Error::Catalog(format!(
                    "duplicate trace ({}, {})",
                    t.event_id, t.station_id
                )));
            }
            check_arrivals(t.p_arrival, t.s_arrival)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn event(id: &str) -> EventRecord {
        EventRecord {
            event_id: id.into(),
            e_lat: 34.0,
            e_lon: -118.0,
            e_dep: 8.0,
            e_m: 3.0,
            origin_time: 0.0,
        }
    }

    #[test]
    fn trace_invariants() {
        assert!(Trace::from_samples(vec![0.0; 10]).is_err());
        let ok = vec![0.0; 18000];
        assert!(Trace::new("e", "s", ok.clone(), Some(10), Some(5)).is_err());
        assert!(Trace::new("e", "s", ok.clone(), Some(10), Some(6000)).is_err());
        let t = Trace::new("e", "s", ok, Some(1000), Some(1714)).unwrap();
        assert_eq!(t.p_time(), Some(10.0));
    }

    #[test]
    fn duplicate_and_dangling_rejected() {
        let mut c = Catalog::new();
        c.add_event(event("a"), Split::Train).unwrap();
        assert!(c.add_event(event("a"), Split::Test).is_err());
        let tr = Trace::new("a", "nope", vec![0.0; 18000], None, None).unwrap();
        assert!(c.add_trace(tr).is_err());
        let mut bad = event("b");
        bad.e_dep = -1.0;
        assert!(c.add_event(bad, Split::Train).is_err());
    }
}
