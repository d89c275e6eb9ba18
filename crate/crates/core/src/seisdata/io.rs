//! Dataset directory format:
//!
//! ```text
//! catalog/events.csv    event_id,e_lat,e_lon,e_dep,e_m,origin_time,split
//! catalog/stations.csv  station_id,s_lat,s_lon
//! catalog/traces.csv    event_id,station_id,file,p_arrival,s_arrival
//! traces/*.f32          little-endian float32, row-major 3 x 6000
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_arrivals, Catalog, EventRecord, Split, StationRecord, TraceEntry, N_CHANNELS, TRACE_LEN};
use crate::{Error, Result};

const EVENT_HEADER: [&str; 7] = ["event_id", "e_lat", "e_lon", "e_dep", "e_m", "origin_time", "split"];
const STATION_HEADER: [&str; 3] = ["station_id", "s_lat", "s_lon"];
const TRACE_HEADER: [&str; 5] = ["event_id", "station_id", "file", "p_arrival", "s_arrival"];

#[derive(Debug, Serialize, Deserialize)]
struct EventRow {
    event_id: String,
    e_lat: f64,
    e_lon: f64,
    e_dep: f64,
    e_m: f64,
    origin_time: f64,
    split: Split,
}

pub fn read_trace_file(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::at_path(path, e))?;
    let expected = N_CHANNELS * TRACE_LEN * 4;
    if bytes.len() != expected {
        return Err(Error::Catalog(format!(
            "{}: expected {expected} bytes, found {}",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

pub fn write_trace_file(path: &Path, samples: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(samples.len() * 4);
    for v in samples {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::at_path(path, e))
}

fn writer(path: &Path, header: &[&str]) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::at_path(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    w.write_record(header)?;
    Ok(w)
}

/// Write `catalog` under `root`, creating `catalog/` and `traces/`.
pub fn export_catalog(catalog: &Catalog, root: &Path) -> Result<()> {
    catalog.validate()?;
    let cat_dir = root.join("catalog");
    let trace_dir = root.join("traces");
    fs::create_dir_all(&cat_dir).map_err(|e| Error::at_path(&cat_dir, e))?;
    fs::create_dir_all(&trace_dir).map_err(|e| Error::at_path(&trace_dir, e))?;

    let mut w = writer(&cat_dir.join("events.csv"), &EVENT_HEADER)?;
    for e in catalog.events() {
        w.serialize(EventRow {
            event_id: e.event_id.clone(),
            e_lat: e.e_lat,
            e_lon: e.e_lon,
            e_dep: e.e_dep,
            e_m: e.e_m,
            origin_time: e.origin_time,
            split: catalog.split_of(&e.event_id).expect("validated"),
        })?;
    }
    w.flush()?;

    let mut w = writer(&cat_dir.join("stations.csv"), &STATION_HEADER)?;
    for s in catalog.stations() {
        w.serialize(s)?;
    }
    w.flush()?;

    let mut w = writer(&cat_dir.join("traces.csv"), &TRACE_HEADER)?;
    for t in catalog.entries() {
        w.serialize(t)?;
        let dst = trace_dir.join(&t.file);
        let same_file = catalog
            .trace_dir()
            .map(|d| d.join(&t.file) == dst)
            .unwrap_or(false);
        if !same_file {
            let samples = catalog.raw_samples(t)?;
            write_trace_file(&dst, &samples)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path, header: &[&str]) -> Result<Vec<T>> {
    let name = path.file_name().unwrap_or_default().to_string_lossy().to_string();
    let file = fs::File::open(path).map_err(|e| Error::at_path(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let found: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if found != header {
        return Err(Error::Catalog(format!(
            "{name}: header {found:?} does not match {header:?}"
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.deserialize().enumerate() {
        // Row numbers count the header as row 1.
        let row: T = rec.map_err(|e| Error::Catalog(format!("{name} row {}: {e}", i + 2)))?;
        rows.push(row);
    }
    Ok(rows)
}

/// Load and validate a dataset directory written by [`export_catalog`].
pub fn import_catalog(root: &Path) -> Result<Catalog> {
    let cat_dir = root.join("catalog");
    let event_rows: Vec<EventRow> = read_rows(&cat_dir.join("events.csv"), &EVENT_HEADER)?;
    let stations: Vec<StationRecord> = read_rows(&cat_dir.join("stations.csv"), &STATION_HEADER)?;
    let traces: Vec<TraceEntry> = read_rows(&cat_dir.join("traces.csv"), &TRACE_HEADER)?;

    let mut split: BTreeMap<String, Split> = BTreeMap::new();
    let mut events = Vec::with_capacity(event_rows.len());
    for (i, row) in event_rows.into_iter().enumerate() {
        let line = i + 2;
        if let Some(prev) = split.get(&row.event_id) {
            return Err(Error::Catalog(if *prev != row.split {
                format!(
                    "events.csv row {line}: event_id {} appears in both train and test splits",
                    row.event_id
                )
            } else {
                format!("events.csv row {line}: duplicate event_id {}", row.event_id)
            }));
        }
        let event = EventRecord {
            event_id: row.event_id,
            e_lat: row.e_lat,
            e_lon: row.e_lon,
            e_dep: row.e_dep,
            e_m: row.e_m,
            origin_time: row.origin_time,
        };
        event
            .validate()
            .map_err(|e| Error::Catalog(format!("events.csv row {line}: {e}")))?;
        split.insert(event.event_id.clone(), row.split);
        events.push(event);
    }
    let mut station_ids = BTreeSet::new();
    for (i, s) in stations.iter().enumerate() {
        if !station_ids.insert(s.station_id.as_str()) {
            return Err(Error::Catalog(format!(
                "stations.csv row {}: duplicate station_id {}",
                i + 2,
                s.station_id
            )));
        }
    }
    let trace_dir = root.join("traces");
    let mut keys = BTreeSet::new();
    for (i, t) in traces.iter().enumerate() {
        let line = i + 2;
        if !split.contains_key(&t.event_id) {
            return Err(Error::Catalog(format!(
                "traces.csv row {line}: unknown event_id {}",
                t.event_id
            )));
        }
        if !station_ids.contains(t.station_id.as_str()) {
            return Err(Error::Catalog(format!(
                "traces.csv row {line}: unknown station_id {}",
                t.station_id
            )));
        }
        if !keys.insert((t.event_id.as_str(), t.station_id.as_str())) {
            return Err(Error::Catalog(format!(
                "traces.csv row {line}: duplicate trace ({}, {})",
                t.event_id, t.station_id
            )));
        }
        check_arrivals(t.p_arrival, t.s_arrival)
            .map_err(|e| Error::Catalog(format!("traces.csv row {line}: {e}")))?;
        let path = trace_dir.join(&t.file);
        if !path.is_file() {
            return Err(Error::Catalog(format!(
                "traces.csv row {line}: missing trace file {}",
                path.display()
            )));
        }
    }
    let catalog = Catalog::from_parts(events, stations, traces, split, root.to_path_buf());
    catalog.validate()?;
    Ok(catalog)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::RegionNormalization;
    use crate::seisdata::{synthetic_catalog, SyntheticCatalogSpec};

    #[test]
    fn empty_catalog_writes_headers_only() {
        let dir = tempfile::tempdir().unwrap();
        export_catalog(&Catalog::new(), dir.path()).unwrap();
        let events = fs::read_to_string(dir.path().join("catalog/events.csv")).unwrap();
        assert_eq!(events.trim(), EVENT_HEADER.join(","));
        let back = import_catalog(dir.path()).unwrap();
        assert!(back.events().is_empty());
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut spec = SyntheticCatalogSpec::new(10, 3, 21);
        spec.test_fraction = 0.3;
        let c = synthetic_catalog(&spec, &RegionNormalization::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        export_catalog(&c, dir.path()).unwrap();
        let back = import_catalog(dir.path()).unwrap();
        assert_eq!(back, c);
        for (a, b) in c.entries().iter().zip(back.entries()) {
            let x = c.raw_samples(a).unwrap();
            let y = back.raw_samples(b).unwrap();
            let xb: Vec<u32> = x.iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u32> = y.iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
        // Re-export of a directory-backed catalog into a new root.
        let dir2 = tempfile::tempdir().unwrap();
        export_catalog(&back, dir2.path()).unwrap();
        assert_eq!(import_catalog(dir2.path()).unwrap(), c);
    }

    fn write(dir: &Path, name: &str, body: &str) {
        fs::create_dir_all(dir.join("catalog")).unwrap();
        fs::create_dir_all(dir.join("traces")).unwrap();
        fs::write(dir.join("catalog").join(name), body).unwrap();
    }

    fn minimal(dir: &Path, events: &str, traces: &str) {
        write(dir, "events.csv", events);
        write(dir, "stations.csv", "station_id,s_lat,s_lon\nA,34.0,-118.0\n");
        write(dir, "traces.csv", traces);
    }

    #[test]
    fn overlapping_split_rejected() {
        let dir = tempfile::tempdir().unwrap();
        minimal(
            dir.path(),
            "event_id,e_lat,e_lon,e_dep,e_m,origin_time,split\ne1,34,-118,5,3,0,train\ne1,34,-118,5,3,0,test\n",
            "event_id,station_id,file,p_arrival,s_arrival\n",
        );
        let err = import_catalog(dir.path()).unwrap_err().to_string();
        assert!(err.contains("both train and test"), "{err}");
        assert!(err.contains("row 3"), "{err}");
    }

    #[test]
    fn dangling_and_malformed_rows_named() {
        let dir = tempfile::tempdir().unwrap();
        minimal(
            dir.path(),
            "event_id,e_lat,e_lon,e_dep,e_m,origin_time,split\ne1,34,-118,5,3,0,train\n",
            "event_id,station_id,file,p_arrival,s_arrival\ne2,A,x.f32,,\n",
        );
        let err = import_catalog(dir.path()).unwrap_err().to_string();
        assert!(err.contains("traces.csv row 2") && err.contains("e2"), "{err}");

        minimal(
            dir.path(),
            "event_id,e_lat,e_lon,e_dep,e_m,origin_time,split\ne1,34,-118,abc,3,0,train\n",
            "event_id,station_id,file,p_arrival,s_arrival\n",
        );
        let err = import_catalog(dir.path()).unwrap_err().to_string();
        assert!(err.contains("events.csv row 2"), "{err}");

        minimal(
            dir.path(),
            "event_id,e_lat,e_lon,e_dep,e_m,origin_time,split\ne1,34,-118,5,3,0,train\n",
            "event_id,station_id,file,p_arrival,s_arrival\ne1,A,missing.f32,10,20\n",
        );
        let err = import_catalog(dir.path()).unwrap_err().to_string();
        assert!(err.contains("missing trace file"), "{err}");
    }
}
