use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Catalog, PairedSample, TraceEntry};
use crate::features::{encode_condition, RegionNormalization};
use crate::{Error, Result};

/// How the fixed source observation of an event is chosen.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum SourcePolicy {
    /// Lexicographically first labeled trace by station id, falling back to
    /// the first trace when none is labeled.
    #[default]
    FirstLabeled,
    /// Lexicographically first trace regardless of labels.
    FirstStation,
}

impl SourcePolicy {
    pub(crate) fn choose<'a>(&self, traces: &[&'a TraceEntry]) -> &'a TraceEntry {
        match self {
            SourcePolicy::FirstLabeled => traces
                .iter()
                .find(|t| t.is_labeled())
                .copied()
                .unwrap_or(traces[0]),
            SourcePolicy::FirstStation => traces[0],
        }
    }
}

/// Draws (source, target) pairs of one event.
#[derive(Debug, Clone, Default)]
pub struct PairSampler {
    pub norms: RegionNormalization,
    pub policy: SourcePolicy,
}

impl PairSampler {
    pub fn new(norms: RegionNormalization, policy: SourcePolicy) -> Self {
        Self { norms, policy }
    }

    /// Pick the source and target entries of `event_id` without loading
    /// trace payloads. Returns `(source, target, degenerate)`.
    pub fn choose<'a>(
        &self,
        catalog: &'a Catalog,
        event_id: &str,
        rng_seed: u64,
    ) -> Result<(&'a TraceEntry, &'a TraceEntry, bool)> {
        if catalog.event(event_id).is_none() {
            return Err(Error::NotFound(format!("event {event_id}")));
        }
        let traces = catalog.traces_of(event_id);
        if traces.is_empty() {
            return Err(Error::NotFound(format!("event {event_id} has no traces")));
        }
        let source = self.policy.choose(&traces);
        let others: Vec<&TraceEntry> = traces
            .iter()
            .copied()
            .filter(|t| t.station_id != source.station_id)
            .collect();
        if others.is_empty() {
            return Ok((source, source, true));
        }
        let labeled: Vec<&TraceEntry> = others.iter().copied().filter(|t| t.is_labeled()).collect();
        let pool = if labeled.is_empty() { &others } else { &labeled };
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let target = pool[rng.random_range(0..pool.len())];
        Ok((source, target, false))
    }

    pub fn sample(&self, catalog: &Catalog, event_id: &str, rng_seed: u64) -> Result<PairedSample> {
        let (src, tgt, degenerate) = self.choose(catalog, event_id, rng_seed)?;
        let event = catalog
            .event(event_id)
            .ok_or_else(|| Error::NotFound(format!("event {event_id}")))?;
        let station = catalog
            .station(&tgt.station_id)
            .ok_or_else(|| Error::NotFound(format!("station {}", tgt.station_id)))?;
        let condition = encode_condition(event, station, &self.norms)?;
        Ok(PairedSample {
            source: catalog.load_trace(src)?,
            target: catalog.load_trace(tgt)?,
            condition,
            degenerate,
        })
    }
}

/// Sample a pair with the default source policy.
pub fn sample_pair(
    catalog: &Catalog,
    event_id: &str,
    rng_seed: u64,
    norms: &RegionNormalization,
) -> Result<PairedSample> {
    PairSampler::new(norms.clone(), SourcePolicy::default()).sample(catalog, event_id, rng_seed)
}
