use crate::seisdata::{EventRecord, StationRecord};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Haversine great-circle distance in km between two (lat, lon) points in
/// degrees.
pub fn great_circle_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
}

pub fn epicentral_distance(e: &EventRecord, s: &StationRecord) -> f64 {
    great_circle_km(e.e_lat, e.e_lon, s.s_lat, s.s_lon)
}

/// `sqrt(R_epi^2 + depth^2)`.
pub fn hypocentral_distance(e: &EventRecord, s: &StationRecord) -> f64 {
    epicentral_distance(e, s).hypot(e.e_dep)
}

/// Bearing from the station to the epicenter in radians, clockwise from
/// north, in `(-pi, pi]`.
pub fn back_azimuth(e: &EventRecord, s: &StationRecord) -> f64 {
    let (p1, p2) = (s.s_lat.to_radians(), e.e_lat.to_radians());
    let dl = (e.e_lon - s.s_lon).to_radians();
    let y = dl.sin() * p2.cos();
    let x = p1.cos() * p2.sin() - p1.sin() * p2.cos() * dl.cos();
    y.atan2(x)
}

/// Point reached from (lat, lon) travelling `distance_km` along `bearing`
/// (radians clockwise from north).
pub fn destination_point(lat: f64, lon: f64, bearing: f64, distance_km: f64) -> (f64, f64) {
    let d = distance_km / EARTH_RADIUS_KM;
    let p1 = lat.to_radians();
    let l1 = lon.to_radians();
    let p2 = (p1.sin() * d.cos() + p1.cos() * d.sin() * bearing.cos()).asin();
    let l2 = l1 + (bearing.sin() * d.sin() * p1.cos()).atan2(d.cos() - p1.sin() * p2.sin());
    (p2.to_degrees(), l2.to_degrees())
}
