use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::geo::{back_azimuth, epicentral_distance};
use crate::seisdata::{EventRecord, StationRecord};
use crate::{Error, Result};

pub const CONDITION_DIM: usize = 11;

/// Region bounds and the distance/depth/magnitude normalisers used to build
/// condition vectors. Defaults describe Southern California.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct RegionNormalization {
    pub l_lat: f64,
    pub u_lat: f64,
    pub l_lon: f64,
    pub u_lon: f64,
    pub r_mean: f64,
    pub r_scale: f64,
    pub d_mean: f64,
    pub d_scale: f64,
    pub m_offset: f64,
    pub m_scale: f64,
}

impl Default for RegionNormalization {
    fn default() -> Self {
        Self {
            l_lat: 32.024809,
            u_lat: 36.151200,
            l_lon: -120.444000,
            u_lon: -115.222300,
            r_mean: 125.542401,
            r_scale: 55.810322,
            d_mean: 8.564146,
            d_scale: 4.658161,
            m_offset: 2.0,
            m_scale: 6.4,
        }
    }
}

impl RegionNormalization {
    pub fn validate(&self) -> Result<()> {
        if !(self.u_lat > self.l_lat && self.u_lon > self.l_lon) {
            return Err(Error::Config("region upper bounds must exceed lower bounds".into()));
        }
        if !(self.r_scale > 0.0 && self.d_scale > 0.0 && self.m_scale > 0.0) {
            return Err(Error::Config("normalisation scales must be positive".into()));
        }
        Ok(())
    }

    fn check(&self, coordinate: &'static str, value: f64, lower: f64, upper: f64) -> Result<f64> {
        if !(value >= lower && value <= upper) {
            return Err(Error::OutOfRegion {
                coordinate,
                value,
                lower,
                upper,
            });
        }
        Ok((value - lower) / (upper - lower))
    }

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        (self.l_lat..=self.u_lat).contains(&lat) && (self.l_lon..=self.u_lon).contains(&lon)
    }
}

/// The 11-dimensional condition vector, in concatenation order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionVector {
    pub c_sta: [f64; 3],
    pub c_epi: [f64; 3],
    pub c_azi: [f64; 2],
    pub r_norm: f64,
    pub d_norm: f64,
    pub m_norm: f64,
}

impl ConditionVector {
    pub fn to_array(&self) -> [f64; CONDITION_DIM] {
        let mut out = [0.0; CONDITION_DIM];
        out[0..3].copy_from_slice(&self.c_sta);
        out[3..6].copy_from_slice(&self.c_epi);
        out[6..8].copy_from_slice(&self.c_azi);
        out[8] = self.r_norm;
        out[9] = self.d_norm;
        out[10] = self.m_norm;
        out
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != CONDITION_DIM {
            return Err(Error::shape("ConditionVector", CONDITION_DIM, v.len()));
        }
        Ok(Self {
            c_sta: [v[0], v[1], v[2]],
            c_epi: [v[3], v[4], v[5]],
            c_azi: [v[6], v[7]],
            r_norm: v[8],
            d_norm: v[9],
            m_norm: v[10],
        })
    }
}

fn polar(lat_n: f64, lon_n: f64) -> [f64; 3] {
    [
        lat_n.cos() * lon_n.cos(),
        lat_n.sin() * lon_n.cos(),
        lon_n.sin(),
    ]
}

/// Build the condition vector of `station` observing `event`.
///
/// Coordinates are min-max normalised to the region and the normalised
/// values are used directly as angles (radians).
pub fn encode_condition(
    event: &EventRecord,
    station: &StationRecord,
    norms: &RegionNormalization,
) -> Result<ConditionVector> {
    let s_lat = norms.check("s_lat", station.s_lat, norms.l_lat, norms.u_lat)?;
    let s_lon = norms.check("s_lon", station.s_lon, norms.l_lon, norms.u_lon)?;
    let e_lat = norms.check("e_lat", event.e_lat, norms.l_lat, norms.u_lat)?;
    let e_lon = norms.check("e_lon", event.e_lon, norms.l_lon, norms.u_lon)?;
    let azi = back_azimuth(event, station);
    let r_epi = epicentral_distance(event, station);
    Ok(ConditionVector {
        c_sta: polar(s_lat, s_lon),
        c_epi: polar(e_lat, e_lon),
        c_azi: [azi.cos(), azi.sin()],
        r_norm: (r_epi - norms.r_mean) / norms.r_scale,
        d_norm: (event.e_dep - norms.d_mean) / norms.d_scale,
        m_norm: (event.e_m - norms.m_offset) / norms.m_scale,
    })
}
