use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use candle_core::{DType, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::loss::{loss_end_to_end, LossBatch, LossOptions, PhaseMode};
use super::optim::{AdamW, AdamWConfig};
use super::tensors::{condition_batch, randn, spectrogram_batch};
use super::{NoiseSchedule, ScheduleConfig};
use crate::features::{
    encode_condition, waveform_to_spectrogram_with, GriffinLimConfig, RegionNormalization, Spectrogram,
    DEFAULT_LOG_EPSILON,
};
use crate::nets::checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
use crate::nets::{ModelConfig, Nets, LATENT_H, LATENT_W};
use crate::seisdata::{Catalog, PairSampler, SourcePolicy, Split};
use crate::{Error, Result};

/// Consecutive non-finite steps tolerated before training aborts.
pub const DIVERGENCE_PATIENCE: usize = 10;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum LrDecay {
    /// Linear decay to zero over the run.
    #[default]
    Linear,
    Constant,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: AdamWConfig,
    pub lr_decay: LrDecay,
    pub batch_size: usize,
    pub accumulation: usize,
    /// Passes over the training events; each event contributes one pair
    /// per pass.
    pub epochs: usize,
    /// Hard cap on optimizer steps, overriding `epochs` when smaller.
    pub max_steps: Option<usize>,
    pub snr_gamma: f64,
    /// Probability of replacing the noised source latent by pure noise
    /// (with t = T), so sampling without a source stays in distribution.
    pub source_dropout: f64,
    /// Global gradient-norm clip.
    pub grad_clip: Option<f64>,
    /// Steps between checkpoints; 0 keeps only the final one.
    pub checkpoint_every: usize,
    pub griffin_lim: GriffinLimConfig,
    pub log_epsilon: f64,
    /// Start the decoder output bias at the mean training log-amplitude.
    pub init_output_bias: bool,
    pub precision: Precision,
    pub source_policy: SourcePolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: AdamWConfig::default(),
            lr_decay: LrDecay::Linear,
            batch_size: 4,
            accumulation: 4,
            epochs: 500,
            max_steps: None,
            snr_gamma: 5.0,
            source_dropout: 0.1,
            grad_clip: None,
            checkpoint_every: 0,
            griffin_lim: GriffinLimConfig::default(),
            log_epsilon: DEFAULT_LOG_EPSILON,
            init_output_bias: true,
            precision: Precision::F32,
            source_policy: SourcePolicy::FirstLabeled,
        }
    }
}

impl TrainConfig {
    /// Small-batch, high learning-rate settings for overfitting a toy
    /// catalog in a few hundred steps.
    pub fn toy() -> Self {
        Self {
            optimizer: AdamWConfig {
                lr: 1e-3,
                weight_decay: 0.0,
                ..AdamWConfig::default()
            },
            lr_decay: LrDecay::Constant,
            batch_size: 2,
            accumulation: 1,
            epochs: 100,
            max_steps: Some(200),
            grad_clip: Some(1.0),
            griffin_lim: GriffinLimConfig {
                iterations: 16,
                ..GriffinLimConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        let bad = |m: &str| Err(Error::Config(format!("train: {m}")));
        if self.batch_size == 0 || self.accumulation == 0 {
            return bad("batch_size and accumulation must be positive");
        }
        if self.epochs == 0 && self.max_steps.is_none() {
            return bad("epochs must be positive");
        }
        if !(0.0..=1.0).contains(&self.source_dropout) {
            return bad("source_dropout must lie in [0, 1]");
        }
        if !(self.snr_gamma > 0.0) {
            return bad("snr_gamma must be positive");
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return bad("grad_clip must be positive");
        }
        if !(self.log_epsilon > 0.0) {
            return bad("log_epsilon must be positive");
        }
        if self.griffin_lim.iterations == 0 {
            return bad("griffin_lim.iterations must be positive");
        }
        Ok(())
    }

    pub fn effective_batch(&self) -> usize {
        self.batch_size * self.accumulation
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    /// NaN when the step was skipped as non-finite.
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub records: Vec<LossRecord>,
    pub checkpoint: Option<PathBuf>,
}

/// Trailing moving average with the given window.
pub fn smoothed(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            let s = &values[lo..=i];
            s.iter().sum::<f64>() / s.len() as f64
        })
        .collect()
}

/// Everything drawn at random for one training item.
#[derive(Debug, Clone)]
struct ItemDraw {
    event_id: String,
    pair_seed: u64,
    t: usize,
    drop_source: bool,
    noise: Tensor,
}

pub struct Trainer<'a> {
    catalog: &'a Catalog,
    pub config: TrainConfig,
    pub schedule: NoiseSchedule,
    pub nets: Nets,
    optimizer: AdamW,
    step: usize,
    seed: u64,
    norms: RegionNormalization,
    sampler: PairSampler,
    events: Vec<String>,
    cache: HashMap<(String, String), Arc<Spectrogram>>,
    bad_steps: usize,
    last_checkpoint: Option<PathBuf>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        catalog: &'a Catalog,
        model: &ModelConfig,
        schedule: &ScheduleConfig,
        config: &TrainConfig,
        norms: &RegionNormalization,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let schedule = NoiseSchedule::new(*schedule)?;
        let nets = Nets::new(model, schedule.timesteps(), seed, config.precision.dtype())?;
        let mut trainer = Self::assemble(catalog, config, schedule, nets, norms, seed)?;
        if config.init_output_bias {
            let mean = trainer.mean_log_amplitude()?;
            trainer.nets.autoencoder.set_output_bias(mean)?;
        }
        Ok(trainer)
    }

    /// Continue from a checkpoint written by [`Trainer::save`].
    pub fn resume(
        catalog: &'a Catalog,
        checkpoint: &Path,
        config: &TrainConfig,
        norms: &RegionNormalization,
    ) -> Result<Self> {
        config.validate()?;
        let (manifest, nets, extra) = load_checkpoint(checkpoint)?;
        if nets.dtype() != config.precision.dtype() {
            return Err(Error::Config("checkpoint precision differs from the training config".into()));
        }
        let schedule = NoiseSchedule::new(manifest.schedule)?;
        let mut trainer = Self::assemble(catalog, config, schedule, nets, norms, manifest.seed)?;
        trainer.optimizer.load_state(manifest.step, &extra);
        trainer.step = manifest.step;
        trainer.last_checkpoint = Some(checkpoint.to_path_buf());
        Ok(trainer)
    }

    fn assemble(
        catalog: &'a Catalog,
        config: &TrainConfig,
        schedule: NoiseSchedule,
        nets: Nets,
        norms: &RegionNormalization,
        seed: u64,
    ) -> Result<Self> {
        let events: Vec<String> = catalog
            .event_ids(Split::Train)
            .into_iter()
            .filter(|e| !catalog.traces_of(e).is_empty())
            .collect();
        if events.is_empty() {
            return Err(Error::Catalog("training split has no events with traces".into()));
        }
        Ok(Self {
            catalog,
            config: config.clone(),
            schedule,
            nets,
            optimizer: AdamW::new(config.optimizer)?,
            step: 0,
            seed,
            norms: norms.clone(),
            sampler: PairSampler::new(norms.clone(), config.source_policy.clone()),
            events,
            cache: HashMap::new(),
            bad_steps: 0,
            last_checkpoint: None,
        })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn total_steps(&self) -> usize {
        let per_epoch = self.events.len().div_ceil(self.config.effective_batch());
        let by_epochs = self.config.epochs * per_epoch;
        match self.config.max_steps {
            Some(m) if self.config.epochs == 0 => m,
            Some(m) => m.min(by_epochs),
            None => by_epochs,
        }
        .max(1)
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        let lr = self.config.optimizer.lr;
        match self.config.lr_decay {
            LrDecay::Constant => lr,
            LrDecay::Linear => lr * (1.0 - step as f64 / self.total_steps() as f64).max(0.0),
        }
    }

    fn spectrogram(&mut self, event_id: &str, station_id: &str) -> Result<Arc<Spectrogram>> {
        let key = (event_id.to_string(), station_id.to_string());
        if let Some(s) = self.cache.get(&key) {
            return Ok(s.clone());
        }
        let trace = self.catalog.trace(event_id, station_id)?;
        let spec = Arc::new(waveform_to_spectrogram_with(&trace, self.config.log_epsilon));
        self.cache.insert(key, spec.clone());
        Ok(spec)
    }

    /// Mean log-amplitude over the training traces (at most 64 of them).
    fn mean_log_amplitude(&mut self) -> Result<f64> {
        let entries: Vec<(String, String)> = self
            .catalog
            .entries_in(Split::Train)
            .into_iter()
            .take(64)
            .map(|e| (e.event_id.clone(), e.station_id.clone()))
            .collect();
        let mut sum = 0.0;
        let mut n = 0usize;
        for (e, s) in entries {
            let spec = self.spectrogram(&e, &s)?;
            sum += spec.values().iter().map(|&v| v as f64).sum::<f64>();
            n += spec.values().len();
        }
        Ok(if n == 0 { 0.0 } else { sum / n as f64 })
    }

    fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.events.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x6f72_6465_72);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        order
    }

    /// Draws for the item with global index `i`; depends only on the seed
    /// and `i`, so a resumed run replays the same data.
    fn draw(&self, i: usize, latent_channels: usize) -> Result<ItemDraw> {
        let n = self.events.len();
        let event_id = self.events[self.epoch_order(i / n)[i % n]].clone();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(i as u64 + 1);
        let pair_seed = rng.random();
        let big_t = self.schedule.timesteps();
        let drop_source = rng.random::<f64>() < self.config.source_dropout;
        let t = if drop_source { big_t } else { rng.random_range(1..=big_t) };
        let noise = randn(
            &mut rng,
            &[latent_channels, LATENT_H, LATENT_W],
            self.nets.dtype(),
        )?;
        Ok(ItemDraw {
            event_id,
            pair_seed,
            t,
            drop_source,
            noise,
        })
    }

    fn micro_batch(&mut self, first_item: usize) -> Result<(LossBatch, Vec<usize>, Tensor, Vec<bool>)> {
        let b = self.config.batch_size;
        let dtype = self.nets.dtype();
        let mut src = Vec::with_capacity(b);
        let mut tgt = Vec::with_capacity(b);
        let mut conds = Vec::with_capacity(b);
        let mut ts = Vec::with_capacity(b);
        let mut noises = Vec::with_capacity(b);
        let mut drops = Vec::with_capacity(b);
        for j in 0..b {
            let d = self.draw(first_item + j, self.nets.config.latent_channels)?;
            let (s, g, _) = self.sampler.choose(self.catalog, &d.event_id, d.pair_seed)?;
            let (s_station, g_station) = (s.station_id.clone(), g.station_id.clone());
            let event = self
                .catalog
                .event(&d.event_id)
                .ok_or_else(|| Error::NotFound(format!("event {}", d.event_id)))?;
            let station = self
                .catalog
                .station(&g_station)
                .ok_or_else(|| Error::NotFound(format!("station {g_station}")))?;
            conds.push(encode_condition(event, station, &self.norms)?);
            src.push(self.spectrogram(&d.event_id, &s_station)?);
            tgt.push(self.spectrogram(&d.event_id, &g_station)?);
            ts.push(d.t);
            noises.push(d.noise);
            drops.push(d.drop_source);
        }
        let batch = LossBatch {
            x_src: spectrogram_batch(&src.iter().map(|s| s.as_ref()).collect::<Vec<_>>(), dtype)?,
            x_tgt: spectrogram_batch(&tgt.iter().map(|s| s.as_ref()).collect::<Vec<_>>(), dtype)?,
            cond: condition_batch(&conds, dtype)?,
        };
        Ok((batch, ts, Tensor::stack(&noises, 0)?, drops))
    }

    /// One optimizer step over `accumulation` micro-batches. Returns the
    /// mean loss, or `None` when the step was skipped as non-finite.
    pub fn train_step(&mut self) -> Result<LossRecord> {
        let lr = self.lr_at(self.step);
        let accum = self.config.accumulation;
        let params = self.nets.store.vars();
        let mut grads: HashMap<String, Tensor> = HashMap::new();
        let mut total = 0.0;
        let mut finite = true;
        let options = LossOptions {
            snr_gamma: self.config.snr_gamma,
            phase: PhaseMode::GriffinLim(self.config.griffin_lim.clone()),
            log_epsilon: self.config.log_epsilon,
        };
        for k in 0..accum {
            let first = (self.step * accum + k) * self.config.batch_size;
            let (batch, t, noise, drops) = self.micro_batch(first)?;
            let loss = match loss_end_to_end(
                &self.schedule,
                &batch,
                &t,
                &noise,
                &drops,
                self.nets.components(),
                &options,
            ) {
                Ok(l) => l,
                Err(Error::NonFiniteLoss { value, timesteps }) => {
                    log::warn!("step {}: non-finite loss {value} at t = {timesteps:?}", self.step);
                    finite = false;
                    break;
                }
                Err(e) => return Err(e),
            };
            total += loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            let g = (loss / accum as f64)?.backward()?;
            for (name, var) in &params {
                if let Some(gi) = g.get(var.as_tensor()) {
                    let acc = match grads.remove(name) {
                        Some(prev) => (prev + gi)?,
                        None => gi.clone(),
                    };
                    grads.insert(name.clone(), acc);
                }
            }
        }
        if finite {
            let sq: f64 = grads
                .values()
                .map(|g| g.to_dtype(DType::F64)?.sqr()?.sum_all()?.to_scalar::<f64>())
                .sum::<candle_core::Result<f64>>()?;
            let norm = sq.sqrt();
            if !norm.is_finite() {
                log::warn!("step {}: non-finite gradient norm", self.step);
                finite = false;
            } else if let Some(clip) = self.config.grad_clip {
                if norm > clip {
                    let scale = clip / norm;
                    for g in grads.values_mut() {
                        *g = (&*g * scale)?;
                    }
                }
            }
        }
        let record = if finite {
            self.optimizer.step(&params, &grads, lr)?;
            self.bad_steps = 0;
            LossRecord {
                step: self.step,
                loss: total / accum as f64,
                lr,
            }
        } else {
            self.bad_steps += 1;
            LossRecord {
                step: self.step,
                loss: f64::NAN,
                lr,
            }
        };
        self.step += 1;
        if self.bad_steps >= DIVERGENCE_PATIENCE {
            return Err(Error::Diverged {
                step: self.step,
                last_good: self.last_checkpoint.clone(),
            });
        }
        Ok(record)
    }

    pub fn manifest(&self) -> Result<CheckpointManifest> {
        let mut m = CheckpointManifest::new(&self.nets, &self.schedule.config, self.step, self.seed)?;
        m.train = Some(serde_json::to_value(&self.config)?);
        m.region = Some(self.norms.clone());
        Ok(m)
    }

    pub fn save(&mut self, dir: &Path) -> Result<()> {
        save_checkpoint(dir, &self.manifest()?, &self.nets, &self.optimizer.state_tensors())?;
        self.last_checkpoint = Some(dir.to_path_buf());
        Ok(())
    }

    /// Train until `total_steps`, appending to `out/loss.csv` and writing
    /// checkpoints to `out/checkpoints/step_XXXXXXXX` and `out/checkpoint`.
    pub fn run(&mut self, out: Option<&Path>) -> Result<TrainSummary> {
        self.run_until(self.total_steps(), out)
    }

    pub fn run_until(&mut self, until: usize, out: Option<&Path>) -> Result<TrainSummary> {
        let mut writer = match out {
            Some(dir) => {
                fs::create_dir_all(dir).map_err(|e| Error::at_path(dir, e))?;
                let path = dir.join("loss.csv");
                let fresh = self.step == 0 || !path.exists();
                let file = OpenOptions::new()
                    .create(true)
                    .write(true)
                    .append(!fresh)
                    .truncate(fresh)
                    .open(&path)
                    .map_err(|e| Error::at_path(&path, e))?;
                let mut w = csv::Writer::from_writer(file);
                if fresh {
                    w.write_record(["step", "loss", "lr"])?;
                }
                Some(w)
            }
            None => None,
        };
        let mut records = Vec::new();
        while self.step < until {
            let rec = self.train_step()?;
            log::info!("step {} loss {:.6} lr {:.3e}", rec.step, rec.loss, rec.lr);
            if let Some(w) = writer.as_mut() {
                w.write_record([rec.step.to_string(), rec.loss.to_string(), rec.lr.to_string()])?;
                w.flush()?;
            }
            records.push(rec);
            if let (Some(dir), true) = (out, self.config.checkpoint_every > 0) {
                if self.step % self.config.checkpoint_every == 0 {
                    self.save(&dir.join("checkpoints").join(format!("step_{:08}", self.step)))?;
                }
            }
        }
        let checkpoint = match out {
            Some(dir) => {
                let path = dir.join("checkpoint");
                self.save(&path)?;
                Some(path)
            }
            None => None,
        };
        Ok(TrainSummary { records, checkpoint })
    }
}

/// Read a `step,loss,lr` log.
pub fn read_loss_log(path: &Path) -> Result<Vec<LossRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| Ok(row?)).collect()
}
