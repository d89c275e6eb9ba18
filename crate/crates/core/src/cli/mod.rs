//! The `seisgen` command line.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 data error,
//! 4 training or sampling failure.

pub mod evaluate;
pub mod importer;
pub mod plot;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::config::{config_schema, RunConfig};
use crate::diffusion::{sample, sample_spectrograms, NoiseSchedule, SamplerConfig, Trainer};
use crate::features::{encode_condition, spectrogram_to_waveform_with, waveform_to_spectrogram, RegionNormalization};
use crate::nets::checkpoint::{load_checkpoint, CheckpointManifest};
use crate::nets::Nets;
use crate::seisdata::{
    export_catalog, import_catalog, read_trace_file, synthetic_catalog, toy_catalog, write_trace_file, EventRecord,
    StationRecord, SyntheticCatalogSpec, Trace,
};
use crate::seismetrics::{
    frequency_content, read_gmpe_csv, residual_summary, section_plot_data, station_line, write_gmpe_csv,
    PointSource,
};
use crate::{Error, Result};

pub use evaluate::{evaluate, EvalOptions, Evaluation};
pub use importer::{import_scedc_csv, write_raw_dump, DatasetSummary};
pub use plot::ModelSynthesizer;

#[derive(Debug, Parser)]
#[command(name = "seisgen", version, about = "Conditional generation of 3-component seismograms")]
pub struct Cli {
    /// Log level (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset.
    SynthData {
        #[arg(long, default_value_t = 20)]
        events: usize,
        /// Stations in the network, or recordings per event with --toy.
        #[arg(long, default_value_t = 10)]
        stations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        /// Small all-training catalog with nearby stations only.
        #[arg(long)]
        toy: bool,
        /// Write the raw dump layout read by build-dataset instead.
        #[arg(long)]
        raw: bool,
    },
    /// Condition a raw waveform dump into a dataset.
    BuildDataset {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = Importer::ScedcCsv)]
        importer: Importer,
    },
    /// Train from a run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Synthesize one waveform per row of a conditions CSV.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Columns s_lat,s_lon,e_lat,e_lon,e_dep,e_m.
        #[arg(long)]
        conditions: PathBuf,
        /// Source observation (.f32, 3 x 6000) to start every row from.
        #[arg(long)]
        source: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
        /// Run configuration supplying sampler settings.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Sample the test split and write metric reports.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        with_source: bool,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        max_traces: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 4)]
        batch_size: usize,
        /// Also write the synthesized traces under out/traces.
        #[arg(long)]
        save_traces: bool,
    },
    /// Draw an SVG figure.
    Plot(PlotArgs),
    /// Write the run configuration JSON schema.
    ConfigSchema {
        #[arg(long, default_value = "docs/config-schema.json")]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Importer {
    ScedcCsv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    Waveform,
    Spectrogram,
    Section,
    Gmpe,
    Spectrum,
}

#[derive(Debug, clap::Args)]
pub struct PlotArgs {
    #[arg(long, value_enum)]
    pub kind: PlotKind,
    #[arg(long)]
    pub out: PathBuf,
    /// Trace files (.f32) for waveform, spectrogram and spectrum plots.
    #[arg(long = "trace")]
    pub traces: Vec<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub channel: usize,
    /// gmpe.csv written by evaluate.
    #[arg(long)]
    pub gmpe_csv: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub event: Option<String>,
    #[arg(long, default_value_t = 8)]
    pub stations: usize,
    #[arg(long, default_value_t = 10.0)]
    pub spacing_km: f64,
    #[arg(long, default_value_t = 90.0)]
    pub bearing_deg: f64,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::Catalog(_)
        | Error::NotFound(_)
        | Error::InvalidInput(_)
        | Error::OutOfRegion { .. }
        | Error::Shape { .. }
        | Error::Csv(_)
        | Error::Io(_)
        | Error::Path { .. }
        | Error::Json(_) => 3,
        Error::Diverged { .. }
        | Error::NonFiniteLoss { .. }
        | Error::SamplerDivergence { .. }
        | Error::Tensor(_)
        | Error::Picker(_) => 4,
    }
}

/// Binary entry point.
pub fn main_entry() -> ! {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    env_logger::Builder::new().parse_filters(&cli.log).format_timestamp(None).init();
    match run(cli.command) {
        Ok(()) => std::process::exit(0),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::SynthData {
            events,
            stations,
            seed,
            output,
            test_fraction,
            toy,
            raw,
        } => synth_data(events, stations, seed, &output, test_fraction, toy, raw),
        Command::BuildDataset { input, output, importer } => {
            let (catalog, summary) = match importer {
                Importer::ScedcCsv => import_scedc_csv(&input)?,
            };
            export_catalog(&catalog, &output)?;
            println!("{summary}");
            Ok(())
        }
        Command::Train { config, max_steps } => train(&config, max_steps),
        Command::Sample {
            checkpoint,
            conditions,
            source,
            out,
            seed,
            steps,
            config,
        } => sample_cmd(&checkpoint, &conditions, source.as_deref(), &out, seed, steps, config.as_deref()),
        Command::Evaluate {
            checkpoint,
            dataset,
            out,
            config,
            with_source,
            steps,
            max_traces,
            seed,
            batch_size,
            save_traces,
        } => {
            let cfg = load_config(config.as_deref())?;
            let (manifest, nets, _) = load_checkpoint(&checkpoint)?;
            let schedule = NoiseSchedule::new(manifest.schedule)?;
            let sampler = sampler_config(&cfg, steps, seed);
            sampler.validate(&schedule)?;
            let catalog = import_catalog(&dataset)?;
            let opts = EvalOptions {
                with_source,
                max_traces: max_traces.or(cfg.metrics.max_traces),
                batch_size,
                source_policy: cfg.train.source_policy.clone(),
                ..Default::default()
            };
            let region = region_of(&manifest, &cfg);
            let eval = evaluate(&catalog, &nets, &schedule, &sampler, &cfg.metrics, &region, &opts)?;
            eval.report.write(&out)?;
            write_gmpe_csv(&eval.gmpe, &out.join("gmpe.csv"))?;
            if save_traces {
                let dir = out.join("traces");
                std::fs::create_dir_all(&dir).map_err(|e| Error::at_path(&dir, e))?;
                for t in &eval.synthetic {
                    write_trace_file(&dir.join(format!("{}_{}.f32", t.event_id, t.station_id)), t.samples())?;
                }
            }
            println!("{}", serde_json::to_string_pretty(&eval.report.aggregates)?);
            for (source, name) in [(PointSource::Real, "real"), (PointSource::Synthetic, "synthetic")] {
                if let Some(s) = residual_summary(&eval.gmpe, source) {
                    println!(
                        "gmpe {name}: n = {}, mean ln residual {:.3}, std {:.3}",
                        s.count, s.mean_ln_residual, s.std_ln_residual
                    );
                }
            }
            Ok(())
        }
        Command::Plot(args) => plot_cmd(&args),
        Command::ConfigSchema { out } => {
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::at_path(dir, e))?;
            }
            let text = serde_json::to_string_pretty(&config_schema())?;
            std::fs::write(&out, text + "\n").map_err(|e| Error::at_path(&out, e))
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_file(p),
        None => Ok(RunConfig::default()),
    }
}

fn sampler_config(cfg: &RunConfig, steps: Option<usize>, seed: Option<u64>) -> SamplerConfig {
    let mut s = cfg.sampler.clone();
    if let Some(n) = steps {
        s.steps = n;
    }
    if let Some(seed) = seed {
        s.seed = seed;
    }
    s
}

/// Region normalisation stored with the model, else the configured one.
fn region_of(manifest: &CheckpointManifest, cfg: &RunConfig) -> RegionNormalization {
    manifest.region.clone().unwrap_or_else(|| cfg.region.clone())
}

fn synth_data(
    events: usize,
    stations: usize,
    seed: u64,
    output: &Path,
    test_fraction: f64,
    toy: bool,
    raw: bool,
) -> Result<()> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(Error::Config(format!("test fraction {test_fraction} outside [0, 1]")));
    }
    let region = RegionNormalization::default();
    let catalog = if toy {
        toy_catalog(events, stations, seed, &region)?
    } else {
        let mut spec = SyntheticCatalogSpec::new(events, stations, seed);
        spec.test_fraction = test_fraction;
        synthetic_catalog(&spec, &region)?
    };
    if raw {
        write_raw_dump(&catalog, output)?;
    } else {
        export_catalog(&catalog, output)?;
    }
    println!("{}", DatasetSummary::of(&catalog, 0));
    Ok(())
}

fn train(config: &Path, max_steps: Option<usize>) -> Result<()> {
    let mut cfg = RunConfig::from_file(config)?;
    if max_steps.is_some() {
        cfg.train.max_steps = max_steps;
        cfg.train.validate()?;
    }
    let catalog = import_catalog(&cfg.dataset)?;
    let mut trainer = match &cfg.resume {
        Some(ckpt) => Trainer::resume(&catalog, ckpt, &cfg.train, &cfg.region)?,
        None => Trainer::new(&catalog, &cfg.model, &cfg.schedule, &cfg.train, &cfg.region, cfg.seed)?,
    };
    log::info!(
        "training from step {} to {} ({} parameters)",
        trainer.step(),
        trainer.total_steps(),
        trainer.nets.store.parameter_count()
    );
    let summary = trainer.run(Some(&cfg.output_dir))?;
    if let Some(last) = summary.records.last() {
        println!("step {} loss {:.6}", last.step, last.loss);
    }
    if let Some(ckpt) = summary.checkpoint {
        println!("checkpoint: {}", ckpt.display());
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct ConditionRow {
    s_lat: f64,
    s_lon: f64,
    e_lat: f64,
    e_lon: f64,
    e_dep: f64,
    e_m: f64,
}

fn sample_cmd(
    checkpoint: &Path,
    conditions: &Path,
    source: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    steps: Option<usize>,
    config: Option<&Path>,
) -> Result<()> {
    let cfg = load_config(config)?;
    let (manifest, nets, _) = load_checkpoint(checkpoint)?;
    let schedule = NoiseSchedule::new(manifest.schedule)?;
    let mut sampler = sampler_config(&cfg, steps, seed);
    sampler.with_source = source.is_some();
    sampler.validate(&schedule)?;
    let region = region_of(&manifest, &cfg);
    let mut reader = csv::Reader::from_path(conditions)?;
    let mut conds = Vec::new();
    for (i, row) in reader.deserialize::<ConditionRow>().enumerate() {
        let row = row.map_err(|e| Error::InvalidInput(format!("conditions row {}: {e}", i + 2)))?;
        let event = EventRecord {
            event_id: format!("row{i}"),
            e_lat: row.e_lat,
            e_lon: row.e_lon,
            e_dep: row.e_dep,
            e_m: row.e_m,
            origin_time: 0.0,
        };
        let station = StationRecord {
            station_id: format!("row{i}"),
            s_lat: row.s_lat,
            s_lon: row.s_lon,
        };
        conds.push(encode_condition(&event, &station, &region)?);
    }
    if conds.is_empty() {
        return Err(Error::InvalidInput(format!("{}: no condition rows", conditions.display())));
    }
    let sources = match source {
        Some(p) => Some(vec![Trace::from_samples(read_trace_file(p)?)?; conds.len()]),
        None => None,
    };
    std::fs::create_dir_all(out).map_err(|e| Error::at_path(out, e))?;
    let specs = sample_spectrograms(
        &schedule,
        nets.components(),
        &conds,
        sources.as_deref(),
        &nets.latent_shape(),
        &sampler,
        nets.dtype(),
    )?;
    for (i, spec) in specs.iter().enumerate() {
        let wave = spectrogram_to_waveform_with(spec, &sampler.griffin_lim)?;
        let path = out.join(format!("sample_{i:04}.f32"));
        write_trace_file(&path, &wave)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn read_traces(paths: &[PathBuf]) -> Result<Vec<(String, Trace)>> {
    if paths.is_empty() {
        return Err(Error::InvalidInput("--trace is required for this plot".into()));
    }
    paths
        .iter()
        .map(|p| {
            let name = p.file_stem().unwrap_or_default().to_string_lossy().to_string();
            Ok((name, Trace::from_samples(read_trace_file(p)?)?))
        })
        .collect()
}

fn plot_cmd(args: &PlotArgs) -> Result<()> {
    match args.kind {
        PlotKind::Waveform => {
            let traces = read_traces(&args.traces)?;
            let series: Vec<(&str, &[f32])> = traces.iter().map(|(n, t)| (n.as_str(), t.samples())).collect();
            plot::plot_waveforms(&series, "waveforms", &args.out)
        }
        PlotKind::Spectrogram => {
            let traces = read_traces(&args.traces)?;
            plot::plot_spectrogram(&waveform_to_spectrogram(&traces[0].1), args.channel, &args.out)
        }
        PlotKind::Spectrum => {
            let traces = read_traces(&args.traces)?;
            let spectra = traces
                .iter()
                .map(|(n, t)| Ok((n.clone(), frequency_content(t)?)))
                .collect::<Result<Vec<_>>>()?;
            let series: Vec<_> = spectra.iter().map(|(n, s)| (n.as_str(), s)).collect();
            plot::plot_spectra(&series, &args.out)
        }
        PlotKind::Gmpe => {
            let path = args
                .gmpe_csv
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("--gmpe-csv is required".into()))?;
            let cfg = load_config(args.config.as_deref())?;
            plot::plot_gmpe(&read_gmpe_csv(path)?, &cfg.gmpe(), &args.out)
        }
        PlotKind::Section => {
            let (Some(ckpt), Some(dataset), Some(event_id)) = (&args.checkpoint, &args.dataset, &args.event) else {
                return Err(Error::InvalidInput("section needs --checkpoint, --dataset and --event".into()));
            };
            let cfg = load_config(args.config.as_deref())?;
            let (manifest, nets, _) = load_checkpoint(ckpt)?;
            let schedule = NoiseSchedule::new(manifest.schedule)?;
            let sampler = sampler_config(&cfg, args.steps, Some(args.seed));
            sampler.validate(&schedule)?;
            let region = region_of(&manifest, &cfg);
            let catalog = import_catalog(dataset)?;
            let event = catalog
                .event(event_id)
                .ok_or_else(|| Error::NotFound(format!("event {event_id}")))?;
            let line = station_line(event, args.bearing_deg.to_radians(), args.spacing_km, args.stations, "VS");
            let observed = catalog
                .traces_of(event_id)
                .into_iter()
                .map(|e| {
                    let station = catalog.station(&e.station_id).cloned().expect("validated catalog");
                    Ok((station, catalog.load_trace(e)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let synth = ModelSynthesizer {
                nets: &nets,
                schedule: &schedule,
                sampler,
            };
            let rows = section_plot_data(event, &line, &observed, &synth, &region, args.spacing_km / 2.0, args.seed)?;
            plot::plot_section(&rows, &args.out)
        }
    }
}

/// Synthesize one trace from a checkpoint; used by the Python bindings.
pub fn sample_one(
    nets: &Nets,
    schedule: &NoiseSchedule,
    sampler: &SamplerConfig,
    event: &EventRecord,
    station: &StationRecord,
    region: &RegionNormalization,
    source: Option<&Trace>,
) -> Result<Trace> {
    let cond = encode_condition(event, station, region)?;
    let cfg = SamplerConfig {
        with_source: source.is_some(),
        ..sampler.clone()
    };
    sample(schedule, nets.components(), &cond, source, &nets.latent_shape(), &cfg, nets.dtype())
}
