//! Shared training plumbing: options, per-epoch records and the batch
//! gradient reduction.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::odeint::Scheme;
use crate::paramcore::AdamConfig;

/// Optimizer and discretization settings common to every task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    pub iterations: usize,
    pub batch: usize,
    /// Iterations per logged epoch.
    pub log_every: usize,
    pub scheme: Scheme,
    pub train_steps: usize,
    pub eval_steps: usize,
    pub adam: AdamConfig,
    /// Learning rate at the last iteration as a fraction of `adam.lr`;
    /// intermediate rates interpolate geometrically.
    pub lr_decay: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            iterations: 2000,
            batch: 64,
            log_every: 50,
            scheme: Scheme::Rk4,
            train_steps: 32,
            eval_steps: 64,
            adam: AdamConfig::default(),
            lr_decay: 1.0,
        }
    }
}

impl TrainOptions {
    /// Learning rate used at iteration `it` (zero based).
    pub fn lr_at(&self, it: usize) -> f64 {
        if self.iterations <= 1 {
            return self.adam.lr;
        }
        self.adam.lr * self.lr_decay.powf(it as f64 / (self.iterations - 1) as f64)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("iterations", self.iterations),
            ("batch", self.batch),
            ("log_every", self.log_every),
            ("train_steps", self.train_steps),
            ("eval_steps", self.eval_steps),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("`{name}` must be at least 1")));
            }
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && a.eps > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return Err(Error::Config("invalid adam settings".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("`lr_decay` must lie in (0, 1], got {}", self.lr_decay)));
        }
        Ok(())
    }
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub iteration: usize,
    pub loss: f64,
    #[serde(flatten)]
    pub metrics: BTreeMap<String, f64>,
}

/// Sums per-item `(loss, gradient)` contributions computed in parallel.
/// The reduction runs in item order so the result does not depend on
/// thread scheduling.
pub fn reduce_batch<T, F>(items: &[T], num_params: usize, f: F) -> Result<(f64, Vec<f64>)>
where
    T: Sync,
    F: Fn(&T, &mut [f64]) -> Result<f64> + Sync,
{
    let parts: Vec<Result<(f64, Vec<f64>)>> = items
        .par_iter()
        .map(|item| {
            let mut g = vec![0.0; num_params];
            let l = f(item, &mut g)?;
            Ok((l, g))
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; num_params];
    for part in parts {
        let (l, g) = part?;
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((loss, grad))
}

/// Signals divergence when the loss is not finite.
pub fn check_loss(loss: f64, iteration: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            iteration,
            reason: format!("loss = {loss}"),
        })
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Linear-interpolated empirical quantile, `q` in `[0, 1]`.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}
