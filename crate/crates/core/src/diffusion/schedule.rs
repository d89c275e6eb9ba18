use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Linear-β DDPM schedule parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            timesteps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.timesteps < 1 {
            return Err(Error::Config("schedule: timesteps must be at least 1".into()));
        }
        let ok = |b: f64| b > 0.0 && b < 1.0;
        if !(ok(self.beta_start) && ok(self.beta_end) && self.beta_start <= self.beta_end) {
            return Err(Error::Config("schedule: need 0 < beta_start <= beta_end < 1".into()));
        }
        Ok(())
    }
}

/// Tables indexed by `t - 1` for `t = 1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub config: ScheduleConfig,
    pub beta: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    /// Posterior standard deviation; zero at t = 1.
    pub sigma: Vec<f64>,
    /// Posterior mean coefficient on the x0 estimate.
    pub coef_x0: Vec<f64>,
    /// Posterior mean coefficient on x_t.
    pub coef_xt: Vec<f64>,
}

pub fn make_schedule(timesteps: usize) -> Result<NoiseSchedule> {
    NoiseSchedule::new(ScheduleConfig {
        timesteps,
        ..ScheduleConfig::default()
    })
}

impl NoiseSchedule {
    pub fn new(config: ScheduleConfig) -> Result<Self> {
        config.validate()?;
        let n = config.timesteps;
        let beta: Vec<f64> = (0..n)
            .map(|i| {
                if n == 1 {
                    config.beta_start
                } else {
                    config.beta_start + (config.beta_end - config.beta_start) * i as f64 / (n - 1) as f64
                }
            })
            .collect();
        let mut alpha_bar = Vec::with_capacity(n);
        let mut acc = 1.0;
        for b in &beta {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        let mut sigma = vec![0.0; n];
        let mut coef_x0 = vec![1.0; n];
        let mut coef_xt = vec![0.0; n];
        for i in 1..n {
            let prev = alpha_bar[i - 1];
            let var = beta[i] * (1.0 - prev) / (1.0 - alpha_bar[i]);
            sigma[i] = var.sqrt();
            coef_x0[i] = prev.sqrt() * beta[i] / (1.0 - alpha_bar[i]);
            coef_xt[i] = (1.0 - beta[i]).sqrt() * (1.0 - prev) / (1.0 - alpha_bar[i]);
        }
        Ok(Self {
            config,
            beta,
            alpha_bar,
            sigma,
            coef_x0,
            coef_xt,
        })
    }

    pub fn timesteps(&self) -> usize {
        self.config.timesteps
    }

    fn index(&self, t: usize) -> Result<usize> {
        if t < 1 || t > self.timesteps() {
            return Err(Error::InvalidInput(format!(
                "timestep {t} outside 1..={}",
                self.timesteps()
            )));
        }
        Ok(t - 1)
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bar[self.index(t)?])
    }

    pub fn snr(&self, t: usize) -> Result<f64> {
        let a = self.alpha_bar(t)?;
        Ok(a / (1.0 - a))
    }

    /// min(SNR, γ)/SNR.
    pub fn snr_weight(&self, t: usize, gamma: f64) -> Result<f64> {
        let s = self.snr(t)?;
        Ok(s.min(gamma) / s)
    }

    /// (coefficient on x0, coefficient on x_t, σ) of the reverse step at t.
    pub fn posterior(&self, t: usize) -> Result<(f64, f64, f64)> {
        let i = self.index(t)?;
        Ok((self.coef_x0[i], self.coef_xt[i], self.sigma[i]))
    }
}
