//! Per-trace evaluation rows and their aggregates.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::picker::PickResult;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub event_id: String,
    pub station_id: String,
    /// Absolute P arrival error in seconds; absent unless both the label and
    /// the pick on the synthesized trace exist.
    pub p_mae: Option<f64>,
    pub s_mae: Option<f64>,
    /// Whether the labeled arrival was picked within tolerance; absent for
    /// unlabeled traces.
    pub p_hit: Option<bool>,
    pub s_hit: Option<bool>,
    pub envelope_correlation: f64,
    pub snr: f64,
    pub psnr: f64,
    pub spectrogram_mse: f64,
}

impl EvalRow {
    /// Fill the phase columns from a pick on the synthesized trace and the
    /// target's labels.
    pub fn set_phase_errors(&mut self, pred: &PickResult, truth: &PickResult, tolerance: f64) {
        let score = |p: Option<f64>, t: Option<f64>| match t {
            None => (None, None),
            Some(t) => match p {
                None => (None, Some(false)),
                Some(p) => ((p - t).abs().into(), Some((p - t).abs() < tolerance)),
            },
        };
        (self.p_mae, self.p_hit) = score(pred.p_time, truth.p_time);
        (self.s_mae, self.s_hit) = score(pred.s_time, truth.s_time);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalAggregates {
    pub count: usize,
    pub p_mae: Option<f64>,
    pub s_mae: Option<f64>,
    pub p_hit_rate: Option<f64>,
    pub s_hit_rate: Option<f64>,
    pub envelope_correlation: Option<f64>,
    pub snr: Option<f64>,
    pub psnr: Option<f64>,
    pub spectrogram_mse: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

impl EvalAggregates {
    pub fn from_rows(rows: &[EvalRow]) -> Self {
        let rate = |f: fn(&EvalRow) -> Option<bool>| mean(rows.iter().filter_map(f).map(|h| h as u8 as f64));
        Self {
            count: rows.len(),
            p_mae: mean(rows.iter().filter_map(|r| r.p_mae)),
            s_mae: mean(rows.iter().filter_map(|r| r.s_mae)),
            p_hit_rate: rate(|r| r.p_hit),
            s_hit_rate: rate(|r| r.s_hit),
            envelope_correlation: mean(rows.iter().map(|r| r.envelope_correlation)),
            snr: mean(rows.iter().map(|r| r.snr)),
            psnr: mean(rows.iter().map(|r| r.psnr)),
            spectrogram_mse: mean(rows.iter().map(|r| r.spectrogram_mse)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub aggregates: EvalAggregates,
}

impl EvalReport {
    pub fn new(rows: Vec<EvalRow>) -> Self {
        let aggregates = EvalAggregates::from_rows(&rows);
        Self { rows, aggregates }
    }

    /// Aggregates recomputed from the rows match the stored ones.
    pub fn is_consistent(&self) -> bool {
        EvalAggregates::from_rows(&self.rows) == self.aggregates
    }

    /// Writes `report.json` and `report.csv` (rows only) into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::at_path(dir, e))?;
        let json = dir.join("report.json");
        std::fs::write(&json, serde_json::to_string_pretty(self)?).map_err(|e| Error::at_path(&json, e))?;
        let csv_path = dir.join("report.csv");
        let mut w = csv::Writer::from_path(&csv_path)?;
        if self.rows.is_empty() {
            w.write_record(CSV_HEADER)?;
        }
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::at_path(&csv_path, e))?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::at_path(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn read_csv_rows(path: &Path) -> Result<Vec<EvalRow>> {
        let mut r = csv::Reader::from_path(path)?;
        r.deserialize().map(|row| row.map_err(Error::from)).collect()
    }
}

pub const CSV_HEADER: [&str; 10] = [
    "event_id",
    "station_id",
    "p_mae",
    "s_mae",
    "p_hit",
    "s_hit",
    "envelope_correlation",
    "snr",
    "psnr",
    "spectrogram_mse",
];
