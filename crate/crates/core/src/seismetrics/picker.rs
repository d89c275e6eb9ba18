//! Phase picking: a built-in STA/LTA picker with AIC onset refinement, an
//! adapter for external pickers, and pick scoring.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Stdio};

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::seisdata::{Trace, N_CHANNELS, SAMPLE_RATE, TRACE_LEN};
use crate::{Error, Result};

/// Picked arrivals in seconds after the trace start.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PickResult {
    pub p_time: Option<f64>,
    pub s_time: Option<f64>,
    #[serde(default)]
    pub p_confidence: f64,
    #[serde(default)]
    pub s_confidence: f64,
}

impl PickResult {
    pub fn validate(&self) -> Result<()> {
        for c in [self.p_confidence, self.s_confidence] {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::InvalidInput(format!("pick confidence {c} outside [0, 1]")));
            }
        }
        if let (Some(p), Some(s)) = (self.p_time, self.s_time) {
            if !(p < s) {
                return Err(Error::InvalidInput(format!("P pick {p} s not before S pick {s} s")));
            }
        }
        Ok(())
    }

    /// Ground-truth picks carried by a labeled trace.
    pub fn from_labels(trace: &Trace) -> Self {
        Self {
            p_time: trace.p_time(),
            s_time: trace.s_time(),
            p_confidence: if trace.p_arrival.is_some() { 1.0 } else { 0.0 },
            s_confidence: if trace.s_arrival.is_some() { 1.0 } else { 0.0 },
        }
    }
}

pub trait Picker {
    fn pick(&self, trace: &Trace) -> Result<PickResult>;
}

pub fn pick_phases(trace: &Trace, picker: &dyn Picker) -> Result<PickResult> {
    let r = picker.pick(trace)?;
    r.validate()?;
    Ok(r)
}

/// Classic energy STA/LTA trigger. P is picked on the vertical channel; S on
/// the horizontal energy after P, with the long-term average taken over the
/// post-P record so the P coda does not trigger it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct StaLtaPicker {
    pub sta_s: f64,
    pub lta_s: f64,
    pub trigger: f64,
    pub detrigger: f64,
    /// Shortest long-term window accepted near the trace start.
    pub min_lta_s: f64,
    /// Shortest post-P window before an S trigger is considered.
    pub min_s_lta_s: f64,
}

impl Default for StaLtaPicker {
    fn default() -> Self {
        Self {
            sta_s: 0.5,
            lta_s: 10.0,
            trigger: 4.0,
            detrigger: 1.5,
            min_lta_s: 2.0,
            min_s_lta_s: 0.5,
        }
    }
}

fn samples(sec: f64) -> usize {
    (sec * SAMPLE_RATE).round() as usize
}

/// Onset index in `x[lo..hi]` minimising the two-segment AIC.
fn aic_onset(channels: &[Vec<f64>], lo: usize, hi: usize) -> usize {
    let n = hi - lo;
    if n < 6 {
        return lo;
    }
    let mut aic = vec![0.0; n];
    for x in channels {
        let seg = &x[lo..hi];
        let (mut s1, mut q1) = (0.0, 0.0);
        let total: f64 = seg.iter().sum();
        let total_sq: f64 = seg.iter().map(|v| v * v).sum();
        for k in 1..n - 1 {
            s1 += seg[k - 1];
            q1 += seg[k - 1] * seg[k - 1];
            let (s2, q2) = (total - s1, total_sq - q1);
            let (n1, n2) = (k as f64, (n - k) as f64);
            let v1 = (q1 / n1 - (s1 / n1).powi(2)).max(1e-30);
            let v2 = (q2 / n2 - (s2 / n2).powi(2)).max(1e-30);
            aic[k] += n1 * v1.ln() + (n2 - 1.0) * v2.ln();
        }
    }
    lo + (2..n - 2).min_by(|&a, &b| aic[a].total_cmp(&aic[b])).unwrap_or(0)
}

fn confidence(peak: f64, trigger: f64) -> f64 {
    (1.0 - trigger / peak).clamp(0.0, 1.0)
}

impl StaLtaPicker {
    /// STA/LTA ratio series of an energy trace; zero where the long-term
    /// window is too short.
    pub fn ratio(&self, energy: &[f64]) -> Vec<f64> {
        let (nsta, nlta, nmin) = (samples(self.sta_s), samples(self.lta_s), samples(self.min_lta_s));
        let mut csum = vec![0.0; energy.len() + 1];
        for (i, e) in energy.iter().enumerate() {
            csum[i + 1] = csum[i] + e;
        }
        (0..energy.len())
            .map(|i| {
                let end = i + 1;
                if end < nmin.max(nsta) {
                    return 0.0;
                }
                let lta_len = end.min(nlta);
                let sta = (csum[end] - csum[end - nsta]) / nsta as f64;
                let lta = (csum[end] - csum[end - lta_len]) / lta_len as f64;
                if lta > 0.0 {
                    sta / lta
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// First trigger-on index at or after `from`, the trigger-off index and
    /// the peak ratio in between.
    fn trigger_window(&self, ratio: &[f64], from: usize) -> Option<(usize, usize, f64)> {
        let on = (from..ratio.len()).find(|&i| ratio[i] > self.trigger)?;
        let off = (on..ratio.len()).find(|&i| ratio[i] < self.detrigger).unwrap_or(ratio.len());
        let peak = ratio[on..off].iter().cloned().fold(0.0, f64::max);
        Some((on, off, peak))
    }

    fn pick_p(&self, z: &[f64]) -> Option<(usize, f64)> {
        let energy: Vec<f64> = z.iter().map(|v| v * v).collect();
        let ratio = self.ratio(&energy);
        let (on, off, peak) = self.trigger_window(&ratio, 0)?;
        let lo = on.saturating_sub(samples(1.5));
        let hi = off.min(on + samples(1.0)).max(on + 2).min(z.len());
        Some((aic_onset(&[z.to_vec()], lo, hi), confidence(peak, self.trigger)))
    }

    fn pick_s(&self, e: &[f64], n: &[f64], p: usize) -> Option<(usize, f64)> {
        let nsta = samples(self.sta_s);
        let min_lta = samples(self.min_s_lta_s);
        let energy: Vec<f64> = e.iter().zip(n).map(|(a, b)| a * a + b * b).collect();
        let start = p + samples(0.2);
        let mut csum = vec![0.0; energy.len() + 1];
        for (i, v) in energy.iter().enumerate() {
            csum[i + 1] = csum[i] + v;
        }
        // STA over the latest window against the mean of the post-P record
        // preceding it.
        let mut ratio = vec![0.0; energy.len()];
        for end in (start + min_lta + nsta)..=energy.len() {
            let sta = (csum[end] - csum[end - nsta]) / nsta as f64;
            let lta = (csum[end - nsta] - csum[start]) / (end - nsta - start) as f64;
            if lta > 0.0 {
                ratio[end - 1] = sta / lta;
            }
        }
        let (on, off, peak) = self.trigger_window(&ratio, start)?;
        let lo = on.saturating_sub(samples(1.0)).max(start);
        let hi = off.min(on + samples(0.5)).max(on + 2).min(e.len());
        Some((aic_onset(&[e.to_vec(), n.to_vec()], lo, hi), confidence(peak, self.trigger)))
    }
}

impl Picker for StaLtaPicker {
    fn pick(&self, trace: &Trace) -> Result<PickResult> {
        let mut out = PickResult::default();
        let Some((p, pc)) = self.pick_p(&trace.channel_f64(2)) else {
            return Ok(out);
        };
        out.p_time = Some(p as f64 / SAMPLE_RATE);
        out.p_confidence = pc;
        if let Some((s, sc)) = self.pick_s(&trace.channel_f64(0), &trace.channel_f64(1), p) {
            if s > p {
                out.s_time = Some(s as f64 / SAMPLE_RATE);
                out.s_confidence = sc;
            }
        }
        Ok(out)
    }
}

/// Request written to an external picker's stdin.
#[derive(Debug, Serialize, Deserialize)]
pub struct PickRequest {
    pub event_id: String,
    pub station_id: String,
    pub sample_rate: f64,
    pub n_channels: usize,
    pub n_samples: usize,
    /// Row-major little-endian float32 samples, base64 encoded.
    pub samples_b64: String,
}

impl PickRequest {
    pub fn new(trace: &Trace) -> Self {
        let bytes: Vec<u8> = trace.samples().iter().flat_map(|v| v.to_le_bytes()).collect();
        Self {
            event_id: trace.event_id.clone(),
            station_id: trace.station_id.clone(),
            sample_rate: SAMPLE_RATE,
            n_channels: N_CHANNELS,
            n_samples: TRACE_LEN,
            samples_b64: base64::engine::general_purpose::STANDARD.encode(bytes),
        }
    }

    pub fn decode_samples(&self) -> Result<Vec<f32>> {
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(&self.samples_b64)
            .map_err(|e| Error::Picker(format!("bad base64 payload: {e}")))?;
        if bytes.len() != 4 * self.n_channels * self.n_samples {
            return Err(Error::shape("pick request payload", 4 * self.n_channels * self.n_samples, bytes.len()));
        }
        Ok(bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect())
    }
}

/// Runs a program once per trace: one JSON [`PickRequest`] on stdin, one
/// [`PickResult`] JSON object on stdout.
#[derive(Debug, Clone)]
pub struct ExternalPicker {
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl Picker for ExternalPicker {
    fn pick(&self, trace: &Trace) -> Result<PickResult> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Picker(format!("cannot start {}: {e}", self.program.display())))?;
        let request = serde_json::to_vec(&PickRequest::new(trace))?;
        {
            let mut stdin = child.stdin.take().expect("piped stdin");
            stdin
                .write_all(&request)
                .map_err(|e| Error::Picker(format!("writing request: {e}")))?;
        }
        let out = child
            .wait_with_output()
            .map_err(|e| Error::Picker(format!("waiting for picker: {e}")))?;
        if !out.status.success() {
            return Err(Error::Picker(format!(
                "picker exited with {}: {}",
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let result: PickResult = serde_json::from_slice(&out.stdout)
            .map_err(|e| Error::Picker(format!("unparseable picker output: {e}")))?;
        result.validate()?;
        Ok(result)
    }
}

/// Arrival-time errors over matched traces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseScore {
    /// Mean absolute error over traces where both the pick and the label
    /// exist; `None` if there are none.
    pub p_mae: Option<f64>,
    pub s_mae: Option<f64>,
    /// Fraction of labeled arrivals picked within the tolerance.
    pub p_hit_rate: Option<f64>,
    pub s_hit_rate: Option<f64>,
    pub matched: usize,
}

pub const PICK_TOLERANCE_S: f64 = 0.5;

/// Score predicted picks against labels, keyed by `(event_id, station_id)`.
/// A hit is an absolute error strictly below `tolerance`.
pub fn phase_mae(
    preds: &BTreeMap<(String, String), PickResult>,
    truths: &BTreeMap<(String, String), PickResult>,
    tolerance: f64,
) -> Result<PhaseScore> {
    let keys: Vec<_> = preds.keys().filter(|k| truths.contains_key(*k)).collect();
    if keys.is_empty() {
        return Err(Error::InvalidInput("no traces shared between predictions and labels".into()));
    }
    let score = |get: fn(&PickResult) -> Option<f64>| {
        let (mut errors, mut hits, mut labeled) = (Vec::new(), 0usize, 0usize);
        for k in &keys {
            let Some(truth) = get(&truths[*k]) else { continue };
            labeled += 1;
            if let Some(pred) = get(&preds[*k]) {
                let e = (pred - truth).abs();
                errors.push(e);
                if e < tolerance {
                    hits += 1;
                }
            }
        }
        let mae = (!errors.is_empty()).then(|| errors.iter().sum::<f64>() / errors.len() as f64);
        let rate = (labeled > 0).then(|| hits as f64 / labeled as f64);
        (mae, rate)
    };
    let (p_mae, p_hit_rate) = score(|r| r.p_time);
    let (s_mae, s_hit_rate) = score(|r| r.s_time);
    Ok(PhaseScore {
        p_mae,
        s_mae,
        p_hit_rate,
        s_hit_rate,
        matched: keys.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{destination_point, RegionNormalization};
    use crate::seisdata::{condition_trace, generate_synthetic_event, EventRecord, StationRecord, SyntheticEventSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn synthetic(distance_km: f64, seed: u64) -> Trace {
        let region = RegionNormalization::default();
        let (lat, lon) = (34.0, -118.0);
        let event = EventRecord {
            event_id: "EV".into(),
            e_lat: lat,
            e_lon: lon,
            e_dep: 8.0,
            e_m: 3.0,
            origin_time: 0.0,
        };
        let (s_lat, s_lon) = destination_point(lat, lon, 1.0, distance_km);
        assert!(region.contains(s_lat, s_lon));
        let station = StationRecord {
            station_id: "ST".into(),
            s_lat,
            s_lon,
        };
        let ev = generate_synthetic_event(&SyntheticEventSpec::new(event, vec![station], seed)).unwrap();
        ev.traces.into_iter().next().unwrap()
    }

    fn noise(seed: u64) -> Trace {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..TRACE_LEN).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let c = condition_trace(&raw, SAMPLE_RATE).unwrap();
        Trace::from_samples(c.samples).unwrap()
    }

    #[test]
    fn picks_synthetic_onsets() {
        // Epicentral distance giving a 60 km hypocentral distance at 8 km depth.
        let t = synthetic((3600.0f64 - 64.0).sqrt(), 3);
        let r = StaLtaPicker::default().pick(&t).unwrap();
        let (p, s) = (t.p_time().unwrap(), t.s_time().unwrap());
        assert!((r.p_time.unwrap() - p).abs() < 0.2, "{r:?} vs {p}");
        assert!((r.s_time.unwrap() - s).abs() < 0.2, "{r:?} vs {s}");
        assert_eq!(r, StaLtaPicker::default().pick(&t).unwrap());
    }

    #[test]
    fn noise_rarely_triggers() {
        let picker = StaLtaPicker::default();
        let absent = (0..100)
            .filter(|&s| {
                let r = picker.pick(&noise(s)).unwrap();
                r.p_time.is_none() && r.s_time.is_none()
            })
            .count();
        assert!(absent >= 95, "{absent}");
    }

    fn keyed(picks: &[(Option<f64>, Option<f64>)]) -> BTreeMap<(String, String), PickResult> {
        picks
            .iter()
            .enumerate()
            .map(|(i, &(p, s))| {
                let r = PickResult {
                    p_time: p,
                    s_time: s,
                    ..Default::default()
                };
                (("E".to_string(), format!("S{i}")), r)
            })
            .collect()
    }

    #[test]
    fn phase_mae_tolerance_rule() {
        let truth = keyed(&[(Some(10.0), Some(17.0)), (Some(5.0), Some(8.0))]);
        let perfect = phase_mae(&truth, &truth, PICK_TOLERANCE_S).unwrap();
        assert_eq!((perfect.p_mae, perfect.p_hit_rate), (Some(0.0), Some(1.0)));
        let shift = |d: f64| keyed(&[(Some(10.0 + d), Some(17.0 + d)), (Some(5.0 + d), Some(8.0 + d))]);
        let near = phase_mae(&shift(0.3), &truth, PICK_TOLERANCE_S).unwrap();
        assert!((near.p_mae.unwrap() - 0.3).abs() < 1e-12 && (near.s_mae.unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(near.p_hit_rate, Some(1.0));
        let far = phase_mae(&shift(0.6), &truth, PICK_TOLERANCE_S).unwrap();
        assert_eq!((far.p_hit_rate, far.s_hit_rate), (Some(0.0), Some(0.0)));
        let missing = phase_mae(&keyed(&[(None, None)]), &truth, PICK_TOLERANCE_S).unwrap();
        assert_eq!((missing.p_mae, missing.p_hit_rate), (None, Some(0.0)));
        let other: BTreeMap<_, _> = [(("X".to_string(), "Y".to_string()), PickResult::default())].into();
        assert!(phase_mae(&other, &truth, PICK_TOLERANCE_S).is_err());
    }

    #[test]
    fn request_round_trip() {
        let t = synthetic(40.0, 1);
        let req = PickRequest::new(&t);
        assert_eq!(req.decode_samples().unwrap(), t.samples());
    }

    #[test]
    fn invalid_pick_rejected() {
        let r = PickResult {
            p_time: Some(5.0),
            s_time: Some(4.0),
            ..Default::default()
        };
        assert!(r.validate().is_err());
    }
}
