//! Ground-motion prediction and the observed-vs-predicted PGA report.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::magnitude::{local_magnitude, Attenuation};
use crate::features::hypocentral_distance;
use crate::seisdata::{EventRecord, StationRecord, Trace};
use crate::{Error, Result};

pub const STANDARD_G: f64 = 9.80665;
/// Site velocity assumed where none is known.
pub const DEFAULT_VS30: f64 = 760.0;

/// `ln PGA[g] = c0 + c1 M + c2 M^2 + (c3 + c4 M) ln sqrt(r^2 + h^2) + c5 ln(vs30 / 760)`.
///
/// The shipped values are a generic regression of this form, not a published
/// model; load a different table to compare against a specific one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct GmpeCoefficients {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub h_km: f64,
    /// Magnitude range over which the table is validated.
    pub m_min: f64,
    pub m_max: f64,
    pub r_max_km: f64,
}

impl Default for GmpeCoefficients {
    fn default() -> Self {
        Self {
            c0: -4.68,
            c1: 1.2,
            c2: -0.05,
            c3: -1.3,
            c4: 0.1,
            c5: -0.6,
            h_km: 6.0,
            m_min: 2.0,
            m_max: 8.0,
            r_max_km: 700.0,
        }
    }
}

impl GmpeCoefficients {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("GMPE table {}: {e}", path.display())))?;
        let table: Self =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("GMPE table {}: {e}", path.display())))?;
        table.validate()?;
        Ok(table)
    }

    /// Distance decay at every magnitude and magnitude growth at every
    /// distance within the declared ranges.
    pub fn validate(&self) -> Result<()> {
        let vals = [self.c0, self.c1, self.c2, self.c3, self.c4, self.c5, self.h_km];
        if vals.iter().any(|v| !v.is_finite()) || !(self.h_km > 0.0) || !(self.m_max > self.m_min) {
            return Err(Error::Config("GMPE table has non-finite or inconsistent values".into()));
        }
        for m in [self.m_min, self.m_max] {
            if self.c3 + self.c4 * m >= 0.0 {
                return Err(Error::Config(format!("GMPE does not decay with distance at M {m}")));
            }
        }
        // d lnPGA / dM is linear in M and in ln R, so checking the corners
        // of the (M, ln R) box suffices.
        let ln_r = [self.h_km.ln(), (self.r_max_km.hypot(self.h_km)).ln()];
        for m in [self.m_min, self.m_max] {
            for l in ln_r {
                if self.c1 + 2.0 * self.c2 * m + self.c4 * l <= 0.0 {
                    return Err(Error::Config(format!("GMPE does not grow with magnitude at M {m}")));
                }
            }
        }
        Ok(())
    }

    pub fn ln_pga(&self, m: f64, r_hypo_km: f64, vs30: f64) -> f64 {
        let r = r_hypo_km.hypot(self.h_km);
        self.c0 + self.c1 * m + self.c2 * m * m + (self.c3 + self.c4 * m) * r.ln() + self.c5 * (vs30 / DEFAULT_VS30).ln()
    }
}

/// Predicted PGA in g. Mechanism and rake terms are zero in this form.
pub fn gmpe_pga(table: &GmpeCoefficients, m_l: f64, r_hypo_km: f64, vs30: Option<f64>) -> f64 {
    table.ln_pga(m_l, r_hypo_km, vs30.unwrap_or(DEFAULT_VS30)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointSource {
    Real,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmpePoint {
    pub m_l: f64,
    pub r_hypo: f64,
    pub pga_observed: f64,
    pub pga_predicted: f64,
    pub v_s30: f64,
    pub source: PointSource,
}

/// Peak absolute horizontal acceleration in g (samples in m/s^2).
pub fn pga_g(trace: &Trace) -> f64 {
    (0..2)
        .flat_map(|c| trace.channel(c).iter())
        .fold(0.0f64, |m, &v| m.max((v as f64).abs()))
        / STANDARD_G
}

/// One record and its metadata.
pub struct Observation<'a> {
    pub trace: &'a Trace,
    pub event: &'a EventRecord,
    pub station: &'a StationRecord,
}

/// One point per record: magnitude estimated from the record itself, observed
/// PGA from its horizontals, predicted PGA at the default site velocity.
/// Records with zero amplitude are skipped.
pub fn gmpe_report(
    real: &[Observation],
    synthetic: &[Observation],
    table: &GmpeCoefficients,
    attenuation: &Attenuation,
) -> Result<Vec<GmpePoint>> {
    let mut points = Vec::new();
    for (set, source) in [(real, PointSource::Real), (synthetic, PointSource::Synthetic)] {
        for obs in set {
            let r = hypocentral_distance(obs.event, obs.station);
            let pga = pga_g(obs.trace);
            if !(pga > 0.0) {
                log::warn!("skipping zero-amplitude record {}/{}", obs.event.event_id, obs.station.station_id);
                continue;
            }
            let m_l = local_magnitude(obs.trace, r, attenuation)?;
            points.push(GmpePoint {
                m_l,
                r_hypo: r,
                pga_observed: pga,
                pga_predicted: gmpe_pga(table, m_l, r, None),
                v_s30: DEFAULT_VS30,
                source,
            });
        }
    }
    Ok(points)
}

/// Mean and standard deviation of `ln(observed / predicted)` per source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub count: usize,
    pub mean_ln_residual: f64,
    pub std_ln_residual: f64,
}

pub fn residual_summary(points: &[GmpePoint], source: PointSource) -> Option<ResidualSummary> {
    let res: Vec<f64> = points
        .iter()
        .filter(|p| p.source == source)
        .map(|p| (p.pga_observed / p.pga_predicted).ln())
        .collect();
    if res.is_empty() {
        return None;
    }
    let n = res.len() as f64;
    let mean = res.iter().sum::<f64>() / n;
    let var = res.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    Some(ResidualSummary {
        count: res.len(),
        mean_ln_residual: mean,
        std_ln_residual: var.sqrt(),
    })
}

pub fn write_gmpe_csv(points: &[GmpePoint], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["m_l", "r_hypo", "pga_observed", "pga_predicted", "v_s30", "source"])?;
    for p in points {
        let source = match p.source {
            PointSource::Real => "real",
            PointSource::Synthetic => "synthetic",
        };
        w.write_record([
            p.m_l.to_string(),
            p.r_hypo.to_string(),
            p.pga_observed.to_string(),
            p.pga_predicted.to_string(),
            p.v_s30.to_string(),
            source.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::at_path(path, e))?;
    Ok(())
}

pub fn read_gmpe_csv(path: &Path) -> Result<Vec<GmpePoint>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}
