//! Sample every held-out target trace and score it against the recording.

use crate::config::MetricOptions;
use crate::diffusion::{sample_spectrograms, NoiseSchedule, SamplerConfig};
use crate::features::{
    encode_condition, hypocentral_distance, spectrogram_to_waveform_with, waveform_to_spectrogram_with,
    ConditionVector, RegionNormalization,
};
use crate::nets::Nets;
use crate::seisdata::{Catalog, SourcePolicy, Split, Trace, TraceEntry};
use crate::seismetrics::{
    envelope_correlation, gmpe_pga, gmpe_report, pick_phases, psnr, snr, spectrogram_mse, EvalReport, EvalRow,
    GmpePoint, Observation, PickResult, MAX_MAGNITUDE_DISTANCE_KM,
};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub split: Split,
    /// Start sampling from the event's source observation.
    pub with_source: bool,
    pub max_traces: Option<usize>,
    pub batch_size: usize,
    pub source_policy: SourcePolicy,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            split: Split::Test,
            with_source: false,
            max_traces: None,
            batch_size: 4,
            source_policy: SourcePolicy::default(),
        }
    }
}

/// Rows, GMPE points and the synthesized traces in row order.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    pub gmpe: Vec<GmpePoint>,
    pub synthetic: Vec<Trace>,
}

struct Job<'a> {
    source: &'a TraceEntry,
    target: &'a TraceEntry,
    condition: ConditionVector,
}

/// Every non-source trace of every event in the split. The source trace of
/// an event is excluded in both modes so the two are scored on the same set.
fn jobs<'a>(catalog: &'a Catalog, opts: &EvalOptions, norms: &RegionNormalization) -> Result<Vec<Job<'a>>> {
    let mut out = Vec::new();
    for event_id in catalog.event_ids(opts.split) {
        let traces = catalog.traces_of(&event_id);
        if traces.len() < 2 {
            continue;
        }
        let event = catalog.event(&event_id).expect("listed event exists");
        let source = opts.source_policy.choose(&traces);
        for target in traces.into_iter().filter(|t| t.station_id != source.station_id) {
            let station = catalog
                .station(&target.station_id)
                .ok_or_else(|| Error::NotFound(format!("station {}", target.station_id)))?;
            out.push(Job {
                source,
                target,
                condition: encode_condition(event, station, norms)?,
            });
        }
    }
    if let Some(m) = opts.max_traces {
        out.truncate(m);
    }
    Ok(out)
}

pub fn evaluate(
    catalog: &Catalog,
    nets: &Nets,
    schedule: &NoiseSchedule,
    sampler: &SamplerConfig,
    metrics: &MetricOptions,
    norms: &RegionNormalization,
    opts: &EvalOptions,
) -> Result<Evaluation> {
    if opts.batch_size == 0 {
        return Err(Error::Config("evaluation batch size must be positive".into()));
    }
    let jobs = jobs(catalog, opts, norms)?;
    let picker = metrics.picker.build();
    let mut rows = Vec::with_capacity(jobs.len());
    let mut targets = Vec::with_capacity(jobs.len());
    let mut synthetic = Vec::with_capacity(jobs.len());
    for (b, chunk) in jobs.chunks(opts.batch_size).enumerate() {
        let conds: Vec<ConditionVector> = chunk.iter().map(|j| j.condition).collect();
        let sources = if opts.with_source {
            Some(chunk.iter().map(|j| catalog.load_trace(j.source)).collect::<Result<Vec<_>>>()?)
        } else {
            None
        };
        let cfg = SamplerConfig {
            with_source: opts.with_source,
            seed: sampler.seed.wrapping_add(b as u64),
            ..sampler.clone()
        };
        let specs = sample_spectrograms(
            schedule,
            nets.components(),
            &conds,
            sources.as_deref(),
            &nets.latent_shape(),
            &cfg,
            nets.dtype(),
        )?;
        for (job, spec) in chunk.iter().zip(specs) {
            let wave = spectrogram_to_waveform_with(&spec, &cfg.griffin_lim)?;
            let pred = Trace::new(job.target.event_id.clone(), job.target.station_id.clone(), wave, None, None)?;
            let target = catalog.load_trace(job.target)?;
            let mut row = EvalRow {
                event_id: pred.event_id.clone(),
                station_id: pred.station_id.clone(),
                p_mae: None,
                s_mae: None,
                p_hit: None,
                s_hit: None,
                envelope_correlation: envelope_correlation(&pred, &target),
                snr: snr(pred.samples(), target.samples())?,
                psnr: psnr(pred.samples(), target.samples())?,
                spectrogram_mse: spectrogram_mse(
                    &waveform_to_spectrogram_with(&pred, cfg.log_epsilon),
                    &waveform_to_spectrogram_with(&target, cfg.log_epsilon),
                ),
            };
            let picks = pick_phases(&pred, picker.as_ref())?;
            row.set_phase_errors(&picks, &PickResult::from_labels(&target), metrics.pick_tolerance_s);
            log::debug!("{}/{} env {:.3}", row.event_id, row.station_id, row.envelope_correlation);
            rows.push(row);
            targets.push(target);
            synthetic.push(pred);
        }
        log::info!("evaluated {}/{} traces", rows.len(), jobs.len());
    }
    let gmpe = gmpe_points(catalog, &targets, &synthetic, metrics)?;
    Ok(Evaluation {
        report: EvalReport::new(rows),
        gmpe,
        synthetic,
    })
}

/// GMPE points for records inside the magnitude distance range, with the
/// prediction evaluated at the configured site velocity.
fn gmpe_points(catalog: &Catalog, real: &[Trace], synthetic: &[Trace], metrics: &MetricOptions) -> Result<Vec<GmpePoint>> {
    fn observe<'a>(catalog: &'a Catalog, traces: &'a [Trace]) -> Vec<Observation<'a>> {
        traces
            .iter()
            .filter_map(|t| {
                let event = catalog.event(&t.event_id)?;
                let station = catalog.station(&t.station_id)?;
                let r = hypocentral_distance(event, station);
                (r > 0.0 && r <= MAX_MAGNITUDE_DISTANCE_KM).then_some(Observation { trace: t, event, station })
            })
            .collect()
    }
    let table = metrics.gmpe.clone().unwrap_or_default();
    let mut points = gmpe_report(&observe(catalog, real), &observe(catalog, synthetic), &table, &metrics.attenuation)?;
    for p in &mut points {
        p.v_s30 = metrics.v_s30;
        p.pga_predicted = gmpe_pga(&table, p.m_l, p.r_hypo, Some(metrics.v_s30));
    }
    Ok(points)
}
