//! SVG figures.

use std::path::Path;

use candle_core::DType;
use plotters::prelude::*;

use crate::diffusion::{sample, NoiseSchedule, SamplerConfig};
use crate::features::{ConditionVector, Spectrogram, N_FRAMES, N_FREQ, HOP_LENGTH};
use crate::nets::Nets;
use crate::seisdata::{Trace, SAMPLE_RATE, TRACE_LEN};
use crate::seismetrics::{GmpeCoefficients, GmpePoint, PointSource, SectionRow, SpectrumResult, WaveformSynthesizer};
use crate::{Error, Result};

const WIDTH: u32 = 1000;
const CHANNELS: [&str; 3] = ["E", "N", "Z"];
const PALETTE: [RGBColor; 4] = [BLACK, RED, BLUE, RGBColor(0, 140, 0)];

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Io(std::io::Error::other(format!("plot: {e}")))
}

fn prepare(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::at_path(dir, e))?;
    }
    Ok(())
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() || !hi.is_finite() {
        (-1.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 1.0, hi + 1.0)
    } else {
        (lo, hi)
    }
}

/// Three stacked channel panels, one line per labelled series.
pub fn plot_waveforms(series: &[(&str, &[f32])], title: &str, path: &Path) -> Result<()> {
    if series.is_empty() {
        return Err(Error::InvalidInput("nothing to plot".into()));
    }
    for (name, s) in series {
        if s.len() != 3 * TRACE_LEN {
            return Err(Error::shape("plot_waveforms", 3 * TRACE_LEN, format!("{} ({name})", s.len())));
        }
    }
    prepare(path)?;
    let root = SVGBackend::new(path, (WIDTH, 720)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let root = root.titled(title, ("sans-serif", 20)).map_err(plot_err)?;
    for (c, area) in root.split_evenly((3, 1)).into_iter().enumerate() {
        let (lo, hi) = extent(series.iter().flat_map(|(_, s)| s[c * TRACE_LEN..(c + 1) * TRACE_LEN].iter().map(|&v| v as f64)));
        let mut chart = ChartBuilder::on(&area)
            .margin(8)
            .x_label_area_size(30)
            .y_label_area_size(60)
            .caption(CHANNELS[c], ("sans-serif", 14))
            .build_cartesian_2d(0.0..TRACE_LEN as f64 / SAMPLE_RATE, lo..hi)
            .map_err(plot_err)?;
        chart.configure_mesh().x_desc("time (s)").draw().map_err(plot_err)?;
        for (k, (name, s)) in series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            chart
                .draw_series(LineSeries::new(
                    s[c * TRACE_LEN..(c + 1) * TRACE_LEN]
                        .iter()
                        .enumerate()
                        .map(|(i, &v)| (i as f64 / SAMPLE_RATE, v as f64)),
                    color.stroke_width(1),
                ))
                .map_err(plot_err)?
                .label(*name)
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 15, y)], color));
        }
        if series.len() > 1 {
            chart.configure_series_labels().background_style(WHITE.mix(0.8)).draw().map_err(plot_err)?;
        }
    }
    root.present().map_err(plot_err)
}

/// Grey-scale heat map of one channel's log-amplitude spectrogram.
pub fn plot_spectrogram(spec: &Spectrogram, channel: usize, path: &Path) -> Result<()> {
    if channel >= 3 {
        return Err(Error::InvalidInput(format!("channel {channel} out of range")));
    }
    prepare(path)?;
    let (lo, hi) = extent(spec.values().iter().map(|&v| v as f64));
    let root = SVGBackend::new(path, (WIDTH, 400)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let frame_s = HOP_LENGTH as f64 / SAMPLE_RATE;
    let bin_hz = SAMPLE_RATE / 2.0 / N_FREQ as f64;
    let mut chart = ChartBuilder::on(&root)
        .margin(10)
        .caption(format!("log amplitude, channel {}", CHANNELS[channel]), ("sans-serif", 16))
        .x_label_area_size(30)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..N_FRAMES as f64 * frame_s, 0.0..N_FREQ as f64 * bin_hz)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("time (s)").y_desc("frequency (Hz)").draw().map_err(plot_err)?;
    chart
        .draw_series((0..N_FRAMES).flat_map(|t| {
            (0..N_FREQ).map(move |f| {
                let v = (spec.at(channel, f, t) as f64 - lo) / (hi - lo);
                let g = (255.0 * (1.0 - v)).round() as u8;
                Rectangle::new(
                    [(t as f64 * frame_s, f as f64 * bin_hz), ((t + 1) as f64 * frame_s, (f + 1) as f64 * bin_hz)],
                    RGBColor(g, g, g).filled(),
                )
            })
        }))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Vertical-channel record section: each trace normalised and offset by its
/// epicentral distance; observed records in red where available.
pub fn plot_section(rows: &[SectionRow], path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::InvalidInput("empty section".into()));
    }
    prepare(path)?;
    let (d_lo, d_hi) = extent(rows.iter().map(|r| r.distance_km));
    let gap = if rows.len() > 1 { (d_hi - d_lo) / (rows.len() - 1) as f64 } else { 10.0 };
    let root = SVGBackend::new(path, (WIDTH, 800)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .margin(10)
        .caption("record section (Z)", ("sans-serif", 16))
        .x_label_area_size(30)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..TRACE_LEN as f64 / SAMPLE_RATE, (d_lo - gap)..(d_hi + gap))
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("time (s)").y_desc("distance (km)").draw().map_err(plot_err)?;
    let trace_line = |samples: &[f32], offset: f64| {
        let z = &samples[2 * TRACE_LEN..];
        let peak = z.iter().fold(0f32, |m, v| m.max(v.abs())).max(f32::MIN_POSITIVE) as f64;
        z.iter()
            .enumerate()
            .map(|(i, &v)| (i as f64 / SAMPLE_RATE, offset + 0.45 * gap * v as f64 / peak))
            .collect::<Vec<_>>()
    };
    for row in rows {
        if let Some(obs) = &row.observed {
            chart
                .draw_series(LineSeries::new(trace_line(obs, row.distance_km), RED.mix(0.6)))
                .map_err(plot_err)?;
        }
        chart
            .draw_series(LineSeries::new(trace_line(&row.synthetic, row.distance_km), &BLACK))
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)
}

/// Observed PGA against hypocentral distance with the GMPE curve at each
/// magnitude bin centre.
pub fn plot_gmpe(points: &[GmpePoint], table: &GmpeCoefficients, path: &Path) -> Result<()> {
    if points.is_empty() {
        return Err(Error::InvalidInput("no GMPE points".into()));
    }
    prepare(path)?;
    let (r_lo, r_hi) = extent(points.iter().map(|p| p.r_hypo.max(1.0)));
    let (p_lo, p_hi) = extent(points.iter().flat_map(|p| [p.pga_observed, p.pga_predicted]).filter(|v| *v > 0.0));
    let root = SVGBackend::new(path, (800, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .margin(10)
        .caption("PGA vs distance", ("sans-serif", 16))
        .x_label_area_size(30)
        .y_label_area_size(60)
        .build_cartesian_2d((r_lo * 0.8..r_hi * 1.2).log_scale(), (p_lo * 0.5..p_hi * 2.0).log_scale())
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("hypocentral distance (km)").y_desc("PGA (g)").draw().map_err(plot_err)?;
    for (source, color, name) in [(PointSource::Real, BLUE, "real"), (PointSource::Synthetic, RED, "synthetic")] {
        chart
            .draw_series(
                points
                    .iter()
                    .filter(|p| p.source == source && p.pga_observed > 0.0)
                    .map(|p| Circle::new((p.r_hypo.max(1.0), p.pga_observed), 3, color.filled())),
            )
            .map_err(plot_err)?
            .label(name)
            .legend(move |(x, y)| Circle::new((x, y), 3, color.filled()));
    }
    let m_mean = points.iter().map(|p| p.m_l).sum::<f64>() / points.len() as f64;
    let curve: Vec<(f64, f64)> = (0..=50)
        .map(|i| {
            let r = r_lo * 0.8 * ((r_hi * 1.2) / (r_lo * 0.8)).powf(i as f64 / 50.0);
            (r, table.ln_pga(m_mean, r, points[0].v_s30).exp())
        })
        .collect();
    chart
        .draw_series(LineSeries::new(curve, BLACK.stroke_width(2)))
        .map_err(plot_err)?
        .label(format!("GMPE, M {m_mean:.1}"))
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 15, y)], BLACK));
    chart.configure_series_labels().background_style(WHITE.mix(0.8)).draw().map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Smoothed amplitude spectra on log-log axes.
pub fn plot_spectra(series: &[(&str, &SpectrumResult)], path: &Path) -> Result<()> {
    if series.is_empty() {
        return Err(Error::InvalidInput("nothing to plot".into()));
    }
    prepare(path)?;
    let positive = |s: &SpectrumResult| -> Vec<(f64, f64)> {
        s.frequencies
            .iter()
            .zip(&s.amplitude)
            .filter(|(f, a)| **f > 0.0 && **a > 0.0)
            .map(|(f, a)| (*f, *a))
            .collect()
    };
    let lines: Vec<Vec<(f64, f64)>> = series.iter().map(|(_, s)| positive(s)).collect();
    let (f_lo, f_hi) = extent(lines.iter().flatten().map(|p| p.0));
    let (a_lo, a_hi) = extent(lines.iter().flatten().map(|p| p.1));
    let root = SVGBackend::new(path, (800, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .margin(10)
        .caption("amplitude spectrum", ("sans-serif", 16))
        .x_label_area_size(30)
        .y_label_area_size(60)
        .build_cartesian_2d((f_lo..f_hi).log_scale(), (a_lo * 0.5..a_hi * 2.0).log_scale())
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("frequency (Hz)").draw().map_err(plot_err)?;
    for (k, ((name, _), line)) in series.iter().zip(lines).enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        chart
            .draw_series(LineSeries::new(line, color))
            .map_err(plot_err)?
            .label(*name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 15, y)], color));
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.8)).draw().map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Condition-only sampling from a trained model.
pub struct ModelSynthesizer<'a> {
    pub nets: &'a Nets,
    pub schedule: &'a NoiseSchedule,
    pub sampler: SamplerConfig,
}

impl WaveformSynthesizer for ModelSynthesizer<'_> {
    fn synthesize(&self, condition: &ConditionVector, seed: u64) -> Result<Vec<f32>> {
        let cfg = SamplerConfig {
            seed,
            with_source: false,
            ..self.sampler.clone()
        };
        let dtype: DType = self.nets.dtype();
        let trace: Trace = sample(
            self.schedule,
            self.nets.components(),
            condition,
            None,
            &self.nets.latent_shape(),
            &cfg,
            dtype,
        )?;
        Ok(trace.into_samples())
    }
}
