//! The run configuration shared by the CLI commands.

use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::diffusion::{SamplerConfig, ScheduleConfig, TrainConfig};
use crate::features::RegionNormalization;
use crate::nets::ModelConfig;
use crate::seismetrics::{Attenuation, GmpeCoefficients, Picker, StaLtaPicker, ExternalPicker, PICK_TOLERANCE_S};
use crate::{Error, Result};

/// Schema identifier written into `docs/config-schema.json`.
pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum PickerChoice {
    StaLta(StaLtaPicker),
    /// Subprocess reading a pick request on stdin and writing a pick result
    /// on stdout.
    External { program: PathBuf, args: Vec<String> },
}

impl Default for PickerChoice {
    fn default() -> Self {
        PickerChoice::StaLta(StaLtaPicker::default())
    }
}

impl PickerChoice {
    pub fn build(&self) -> Box<dyn Picker + Send + Sync> {
        match self {
            PickerChoice::StaLta(p) => Box::new(p.clone()),
            PickerChoice::External { program, args } => Box::new(ExternalPicker {
                program: program.clone(),
                args: args.clone(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct MetricOptions {
    pub picker: PickerChoice,
    pub pick_tolerance_s: f64,
    pub attenuation: Attenuation,
    /// GMPE coefficient table; the shipped defaults when absent.
    pub gmpe: Option<GmpeCoefficients>,
    pub v_s30: f64,
    /// Evaluate at most this many test traces.
    pub max_traces: Option<usize>,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            picker: PickerChoice::default(),
            pick_tolerance_s: PICK_TOLERANCE_S,
            attenuation: Attenuation::default(),
            gmpe: None,
            v_s30: 760.0,
            max_traces: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// Dataset directory in the catalog layout.
    pub dataset: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub region: RegionNormalization,
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
    pub metrics: MetricOptions,
    /// Continue training from this checkpoint.
    pub resume: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_SCHEMA_VERSION,
            dataset: PathBuf::from("data"),
            output_dir: PathBuf::from("runs/default"),
            seed: 0,
            region: RegionNormalization::default(),
            model: ModelConfig::default(),
            schedule: ScheduleConfig::default(),
            train: TrainConfig::default(),
            sampler: SamplerConfig::default(),
            metrics: MetricOptions::default(),
            resume: None,
        }
    }
}

impl RunConfig {
    /// Parse and validate; relative paths resolve against the file's
    /// directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::at_path(path, e))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.dataset, &mut cfg.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(r) = cfg.resume.as_mut() {
            if r.is_relative() {
                *r = base.join(&*r);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "config version {} is not supported (expected {CONFIG_SCHEMA_VERSION})",
                self.version
            )));
        }
        self.region.validate()?;
        self.model.validate()?;
        self.schedule.validate()?;
        self.train.validate()?;
        if self.sampler.steps < 1 || self.sampler.steps > self.schedule.timesteps {
            return Err(Error::Config(format!(
                "sampler steps {} outside 1..={}",
                self.sampler.steps, self.schedule.timesteps
            )));
        }
        if !(self.metrics.pick_tolerance_s > 0.0 && self.metrics.v_s30 > 0.0) {
            return Err(Error::Config("metrics: tolerance and v_s30 must be positive".into()));
        }
        if let Some(g) = &self.metrics.gmpe {
            g.validate()?;
        }
        Ok(())
    }

    pub fn gmpe(&self) -> GmpeCoefficients {
        self.metrics.gmpe.clone().unwrap_or_default()
    }
}

/// JSON schema of [`RunConfig`].
pub fn config_schema() -> serde_json::Value {
    serde_json::to_value(schemars::schema_for!(RunConfig)).expect("schema serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_and_validates() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_fills_defaults_and_resolves_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"dataset": "ds", "seed": 4, "train": {"batch_size": 2}}"#).unwrap();
        let cfg = RunConfig::from_file(&path).unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.train.batch_size, 2);
        assert_eq!(cfg.train.accumulation, 4);
        assert_eq!(cfg.dataset, dir.path().join("ds"));
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"datset": "x"}"#).unwrap();
        assert!(matches!(RunConfig::from_file(&path), Err(Error::Config(_))));
        std::fs::write(&path, r#"{"sampler": {"steps": 5000}}"#).unwrap();
        assert!(matches!(RunConfig::from_file(&path), Err(Error::Config(_))));
        std::fs::write(&path, r#"{"version": 2}"#).unwrap();
        assert!(matches!(RunConfig::from_file(&path), Err(Error::Config(_))));
    }

    #[test]
    fn schema_names_top_level_sections() {
        let schema = config_schema();
        let props = schema["properties"].as_object().unwrap();
        for key in ["dataset", "model", "schedule", "train", "sampler", "metrics", "region", "seed"] {
            assert!(props.contains_key(key), "{key}");
        }
    }
}
