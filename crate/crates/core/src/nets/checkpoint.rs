//! Checkpoint directory: `manifest.json` plus `tensors.safetensors`.
//!
//! Network parameters are stored under `param.`; callers may attach extra
//! tensors (optimizer moments) under their own prefixes.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelConfig, Nets};
use crate::diffusion::ScheduleConfig;
use crate::features::RegionNormalization;
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TENSOR_FILE: &str = "tensors.safetensors";
const PARAM_PREFIX: &str = "param.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
    /// Optimizer steps taken.
    pub step: usize,
    /// Parameter initialisation seed.
    pub seed: u64,
    /// `"f32"` or `"f64"`.
    pub dtype: String,
    /// SHA-256 of the canonical JSON of model and schedule.
    pub config_hash: String,
    /// Training configuration in effect, if written by the trainer.
    #[serde(default)]
    pub train: Option<serde_json::Value>,
    /// Condition normalisation the networks were trained with.
    #[serde(default)]
    pub region: Option<RegionNormalization>,
}

pub fn config_hash(model: &ModelConfig, schedule: &ScheduleConfig) -> String {
    let canonical = serde_json::to_string(&(model, schedule)).expect("config serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

fn dtype_name(dtype: DType) -> Result<&'static str> {
    match dtype {
        DType::F32 => Ok("f32"),
        DType::F64 => Ok("f64"),
        other => Err(Error::Config(format!("unsupported parameter dtype {other:?}"))),
    }
}

fn parse_dtype(name: &str) -> Result<DType> {
    match name {
        "f32" => Ok(DType::F32),
        "f64" => Ok(DType::F64),
        other => Err(Error::Config(format!("unsupported parameter dtype {other}"))),
    }
}

impl CheckpointManifest {
    pub fn new(nets: &Nets, schedule: &ScheduleConfig, step: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            format_version: FORMAT_VERSION,
            model: nets.config.clone(),
            schedule: *schedule,
            step,
            seed,
            dtype: dtype_name(nets.dtype())?.to_string(),
            config_hash: config_hash(&nets.config, schedule),
            train: None,
            region: None,
        })
    }

    pub fn verify(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "checkpoint format version {} is not supported (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let expected = config_hash(&self.model, &self.schedule);
        if expected != self.config_hash {
            return Err(Error::Config(format!(
                "checkpoint config hash mismatch: manifest says {}, config hashes to {expected}",
                self.config_hash
            )));
        }
        Ok(())
    }
}

/// Write a checkpoint. The directory is populated through a temporary
/// sibling and renamed into place, so a crash never leaves a half-written
/// checkpoint under `dir`.
pub fn save_checkpoint(
    dir: &Path,
    manifest: &CheckpointManifest,
    nets: &Nets,
    extra: &[(String, Tensor)],
) -> Result<()> {
    let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(|e| Error::at_path(parent, e))?;
    let name = dir
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("bad checkpoint path {}", dir.display())))?
        .to_string_lossy()
        .into_owned();
    let tmp = parent.join(format!(".{name}.tmp"));
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::at_path(&tmp, e))?;
    }
    fs::create_dir_all(&tmp).map_err(|e| Error::at_path(&tmp, e))?;

    let mut tensors: HashMap<String, Tensor> = nets.store.snapshot(PARAM_PREFIX)?.into_iter().collect();
    for (k, t) in extra {
        if k.starts_with(PARAM_PREFIX) {
            return Err(Error::InvalidInput(format!("extra tensor {k} collides with parameters")));
        }
        tensors.insert(k.clone(), t.clone());
    }
    candle_core::safetensors::save(&tensors, tmp.join(TENSOR_FILE))?;
    let json = serde_json::to_string_pretty(manifest)?;
    fs::write(tmp.join(MANIFEST_FILE), json).map_err(|e| Error::at_path(tmp.join(MANIFEST_FILE), e))?;

    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::at_path(dir, e))?;
    }
    fs::rename(&tmp, dir).map_err(|e| Error::at_path(dir, e))?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::at_path(&path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    manifest.verify()?;
    Ok(manifest)
}

/// Load networks and the extra tensors saved alongside them.
pub fn load_checkpoint(dir: &Path) -> Result<(CheckpointManifest, Nets, HashMap<String, Tensor>)> {
    let manifest = read_manifest(dir)?;
    let dtype = parse_dtype(&manifest.dtype)?;
    let nets = Nets::new(&manifest.model, manifest.schedule.timesteps, manifest.seed, dtype)?;
    let path = dir.join(TENSOR_FILE);
    if !path.exists() {
        return Err(Error::NotFound(path.display().to_string()));
    }
    let tensors = candle_core::safetensors::load(&path, nets.store.device())?;
    nets.store.assign(&tensors, PARAM_PREFIX)?;
    let extra = tensors.into_iter().filter(|(k, _)| !k.starts_with(PARAM_PREFIX)).collect();
    Ok((manifest, nets, extra))
}
