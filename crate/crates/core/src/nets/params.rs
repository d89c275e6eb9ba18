//! Named parameter storage with deterministic, order-independent init.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Const(f64),
    /// Uniform in `+-1/sqrt(fan_in)`, the default for conv and linear weights.
    FanIn(usize),
    Normal(f64),
}

/// Parameters keyed by dotted path. Each one is seeded from the store seed
/// and its own name, so adding a layer does not perturb the others.
#[derive(Clone)]
pub struct ParamStore {
    vars: Arc<Mutex<BTreeMap<String, Var>>>,
    seed: u64,
    dtype: DType,
    device: Device,
}

impl std::fmt::Debug for ParamStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamStore")
            .field("params", &self.len())
            .field("dtype", &self.dtype)
            .finish()
    }
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a
    name.bytes().fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self {
            vars: Arc::default(),
            seed,
            dtype,
            device: Device::Cpu,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn root(&self) -> ParamPath {
        ParamPath {
            store: self.clone(),
            prefix: String::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.vars.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn parameter_count(&self) -> usize {
        self.vars.lock().unwrap().values().map(|v| v.elem_count()).sum()
    }

    /// Sorted `(name, var)` pairs.
    pub fn vars(&self) -> Vec<(String, Var)> {
        self.vars.lock().unwrap().iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    /// Parameters whose name starts with `prefix`.
    pub fn vars_with_prefix(&self, prefix: &str) -> Vec<(String, Var)> {
        self.vars().into_iter().filter(|(k, _)| k.starts_with(prefix)).collect()
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.vars.lock().unwrap().get(name).cloned()
    }

    fn init_tensor(&self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ name_hash(name));
        let data: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Const(c) => vec![c; n],
            Init::FanIn(fan_in) => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            }
            Init::Normal(std) => (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect(),
        };
        Ok(Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?)
    }

    /// Fetch or create a parameter. A second request for the same name must
    /// agree on the shape.
    pub fn param(&self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        if let Some(v) = self.get(name) {
            if v.dims() != shape {
                return Err(Error::shape("parameter", format!("{name} {shape:?}"), format!("{:?}", v.dims())));
            }
            return Ok(v.as_tensor().clone());
        }
        let var = Var::from_tensor(&self.init_tensor(name, shape, init)?)?;
        let t = var.as_tensor().clone();
        self.vars.lock().unwrap().insert(name.to_string(), var);
        Ok(t)
    }

    /// Overwrite values in place from a tensor map; every stored parameter
    /// must be present with a matching shape.
    pub fn assign(&self, tensors: &std::collections::HashMap<String, Tensor>, prefix: &str) -> Result<()> {
        for (name, var) in self.vars() {
            let key = format!("{prefix}{name}");
            let t = tensors.get(&key).ok_or_else(|| Error::NotFound(format!("tensor {key} in checkpoint")))?;
            if t.dims() != var.dims() {
                return Err(Error::shape("checkpoint tensor", format!("{:?}", var.dims()), format!("{:?}", t.dims())));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    pub fn snapshot(&self, prefix: &str) -> Result<Vec<(String, Tensor)>> {
        self.vars()
            .into_iter()
            .map(|(k, v)| Ok((format!("{prefix}{k}"), v.as_tensor().copy()?)))
            .collect()
    }

    pub fn save_safetensors(&self, path: &Path) -> Result<()> {
        let map: std::collections::HashMap<String, Tensor> = self.snapshot("")?.into_iter().collect();
        candle_core::safetensors::save(&map, path)?;
        Ok(())
    }

    pub fn load_safetensors(&self, path: &Path) -> Result<()> {
        let map = candle_core::safetensors::load(path, &self.device)?;
        self.assign(&map, "")
    }
}

/// A prefix into a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct ParamPath {
    store: ParamStore,
    prefix: String,
}

impl ParamPath {
    pub fn sub(&self, name: impl std::fmt::Display) -> Self {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        Self {
            store: self.store.clone(),
            prefix,
        }
    }

    pub fn get(&self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        self.store.param(&self.sub(name).prefix, shape, init)
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }

    pub fn device(&self) -> &Device {
        &self.store.device
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_order_independent() {
        let a = ParamStore::new(7, DType::F32);
        let wa = a.root().sub("x").get("w", &[3, 4], Init::FanIn(4)).unwrap();
        a.root().sub("y").get("w", &[2], Init::Normal(1.0)).unwrap();
        let b = ParamStore::new(7, DType::F32);
        b.root().sub("y").get("w", &[2], Init::Normal(1.0)).unwrap();
        let wb = b.root().sub("x").get("w", &[3, 4], Init::FanIn(4)).unwrap();
        assert_eq!(wa.to_vec2::<f32>().unwrap(), wb.to_vec2::<f32>().unwrap());
        assert_eq!(a.parameter_count(), 14);
    }

    #[test]
    fn shape_conflict_is_an_error() {
        let s = ParamStore::new(0, DType::F32);
        s.root().get("w", &[2], Init::Zeros).unwrap();
        assert!(s.root().get("w", &[3], Init::Zeros).is_err());
    }

    #[test]
    fn safetensors_round_trip() {
        let s = ParamStore::new(1, DType::F32);
        s.root().sub("a").get("w", &[5, 5], Init::Normal(0.3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.safetensors");
        s.save_safetensors(&p).unwrap();
        let t = ParamStore::new(2, DType::F32);
        t.root().sub("a").get("w", &[5, 5], Init::Zeros).unwrap();
        t.load_safetensors(&p).unwrap();
        let x = s.get("a.w").unwrap().to_vec2::<f32>().unwrap();
        assert_eq!(x, t.get("a.w").unwrap().to_vec2::<f32>().unwrap());
    }
}
