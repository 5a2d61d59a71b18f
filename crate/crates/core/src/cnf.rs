//! Continuous normalizing flows. The generator is the time-1 map of the neural
//! ODE started from a standard normal draw; densities come from integrating
//! backward from the data point while accumulating the divergence.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::distributions::{gauss_logpdf, gauss_sample, GaussianMixture};
use crate::dynamics::FieldSpec;
use crate::error::{Error, Result};
use crate::odeint::{backprop_into, integrate, AugmentedState, FieldHook, Scheme, Trajectory, C_OT, LOGDET, NUM_ACC};
use crate::paramcore::{adam_step, seeded_rng, OptState, ParamVector, Rng};
use crate::train::{check_loss, mean, reduce_batch, EpochRecord, TrainOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct CnfModel {
    pub field: FieldSpec,
    pub params: ParamVector,
    /// Weight of the transport cost `int |f|^2 / 2 dt`.
    pub alpha: f64,
}

impl CnfModel {
    pub fn new(field: FieldSpec, params: ParamVector, alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("transport weight must be finite and >= 0, got {alpha}")));
        }
        if params.len() != field.num_params() {
            return Err(Error::Dimension {
                what: "flow parameters",
                expected: field.num_params(),
                got: params.len(),
            });
        }
        Ok(CnfModel { field, params, alpha })
    }

    pub fn zeros(field: FieldSpec, alpha: f64) -> Result<Self> {
        CnfModel::new(field, ParamVector::zeros(Arc::new(field.layout())), alpha)
    }

    pub fn init(field: FieldSpec, alpha: f64, rng: &mut Rng) -> Result<Self> {
        CnfModel::new(field, ParamVector::init_uniform(Arc::new(field.layout()), rng), alpha)
    }

    pub fn hook(&self) -> FieldHook<'_> {
        FieldHook::new(&self.field, self.params.data())
    }

    /// Forward map `x -> z(1)`.
    pub fn generate(&self, x: &[f64], steps: usize, scheme: Scheme) -> Result<Trajectory> {
        integrate(&self.hook(), &AugmentedState::new(x.to_vec()), 0.0, 1.0, steps, scheme)
    }
}

/// `log p(y)` under the flow and the backward trajectory `w(1) = y -> w(0)`.
/// The backward `logdet` accumulator equals `log det` of the inverse map.
pub fn cnf_logdensity(model: &CnfModel, y: &[f64], steps: usize, scheme: Scheme) -> Result<(f64, Trajectory)> {
    if y.len() != model.field.n {
        return Err(Error::Dimension {
            what: "data point",
            expected: model.field.n,
            got: y.len(),
        });
    }
    let traj = integrate(&model.hook(), &AugmentedState::new(y.to_vec()), 1.0, 0.0, steps, scheme)?;
    let end = traj.last();
    Ok((gauss_logpdf(&end.z) + end.logdet, traj))
}

/// Batch means of the loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CnfLossParts {
    /// Negative log-likelihood including the Gaussian normalization.
    pub nll: f64,
    /// Mean transport cost, before multiplication by alpha.
    pub transport: f64,
}

/// Mean of `|w(0)|^2/2 - logdet + alpha c_ot + n/2 log(2 pi)` and its gradient.
pub fn cnf_loss(model: &CnfModel, batch: &[Vec<f64>], steps: usize, scheme: Scheme) -> Result<(f64, ParamVector)> {
    let (loss, grad, _) = cnf_loss_parts(model, batch, steps, scheme)?;
    Ok((loss, grad))
}

pub fn cnf_loss_parts(
    model: &CnfModel,
    batch: &[Vec<f64>],
    steps: usize,
    scheme: Scheme,
) -> Result<(f64, ParamVector, CnfLossParts)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let n = model.field.n;
    let scale = 1.0 / batch.len() as f64;
    let hook = model.hook();
    let np = model.params.len();
    // slot 0: NLL part, slot 1: transport part; gradient after
    let (_, acc) = reduce_batch(batch, np + 2, |y, g| {
        let (logp, traj) = cnf_logdensity(model, y, steps, scheme)?;
        let end = traj.last();
        let mut cot = vec![0.0; n + NUM_ACC];
        for i in 0..n {
            cot[i] = end.z[i] * scale;
        }
        cot[n + LOGDET] = -scale;
        cot[n + C_OT] = model.alpha * scale;
        backprop_into(&hook, &traj, &cot, &mut g[2..])?;
        g[0] = -logp * scale;
        g[1] = end.c_ot * scale;
        Ok(0.0)
    })?;
    let parts = CnfLossParts {
        nll: acc[0],
        transport: acc[1],
    };
    let loss = parts.nll + model.alpha * parts.transport;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss("flow loss".into()));
    }
    Ok((loss, model.params.with_data(acc[2..].to_vec())?, parts))
}

/// Draws `count` reference points and pushes them through the generator.
pub fn cnf_sample(model: &CnfModel, count: usize, rng: &mut Rng, steps: usize, scheme: Scheme) -> Result<Vec<Trajectory>> {
    let xs: Vec<Vec<f64>> = (0..count).map(|_| gauss_sample(model.field.n, rng)).collect();
    use rayon::prelude::*;
    xs.par_iter()
        .map(|x| {
            let mut t = model.generate(x, steps, scheme)?;
            t.drop_stages();
            Ok(t)
        })
        .collect()
}

/// Mean over paths of `max_i dist(p_i, chord) / |chord|`, where the chord joins
/// the first and last point. Degenerate chords (shorter than 1e-9) count as 0.
pub fn straightness(paths: &[Vec<Vec<f64>>]) -> f64 {
    if paths.is_empty() {
        return 0.0;
    }
    let per_path = |p: &Vec<Vec<f64>>| -> f64 {
        let (a, b) = (&p[0], &p[p.len() - 1]);
        let ab: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
        let len2: f64 = ab.iter().map(|v| v * v).sum();
        if len2.sqrt() < 1e-9 {
            return 0.0;
        }
        let worst = p
            .iter()
            .map(|q| {
                let aq: Vec<f64> = q.iter().zip(a).map(|(x, y)| x - y).collect();
                let s = (aq.iter().zip(&ab).map(|(u, v)| u * v).sum::<f64>() / len2).clamp(0.0, 1.0);
                aq.iter()
                    .zip(&ab)
                    .map(|(u, v)| (u - s * v).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max);
        worst / len2.sqrt()
    };
    paths.iter().map(per_path).sum::<f64>() / paths.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CnfConfig {
    pub alpha: f64,
    pub width: usize,
    pub intervals: usize,
    pub target: GaussianMixture,
    /// Size of the fixed validation set scored at every epoch.
    pub validation: usize,
}

impl Default for CnfConfig {
    fn default() -> Self {
        CnfConfig {
            alpha: 0.1,
            width: 16,
            intervals: 8,
            target: GaussianMixture::ring(8, 4.0, 0.4).expect("valid ring"),
            validation: 512,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CnfRun {
    pub model: CnfModel,
    pub history: Vec<EpochRecord>,
}

/// Maximum likelihood training on fresh target samples every iteration.
pub fn train_cnf(cfg: &CnfConfig, opts: &TrainOptions, seed: u64) -> Result<CnfRun> {
    opts.validate()?;
    let mut rng = seeded_rng(seed);
    let field = FieldSpec::new(cfg.target.dim(), cfg.width, cfg.intervals)?;
    let mut model = CnfModel::init(field, cfg.alpha, &mut rng)?;
    let validation = cfg.target.sample(cfg.validation.max(1), &mut rng);
    let mut state = OptState::new(opts.adam, model.params.len());
    let mut history = Vec::new();
    for it in 0..opts.iterations {
        let batch = cfg.target.sample(opts.batch, &mut rng);
        let (loss, grad) = cnf_loss(&model, &batch, opts.train_steps, opts.scheme).map_err(|e| Error::Diverged {
            iteration: it,
            reason: e.to_string(),
        })?;
        check_loss(loss, it)?;
        state.config.lr = opts.lr_at(it);
        adam_step(&mut model.params, &grad, &mut state)?;
        if (it + 1) % opts.log_every == 0 || it + 1 == opts.iterations {
            let (vloss, _, parts) = cnf_loss_parts(&model, &validation, opts.train_steps, opts.scheme)?;
            history.push(EpochRecord {
                epoch: history.len(),
                iteration: it + 1,
                loss: vloss,
                metrics: BTreeMap::from([
                    ("nll".to_string(), parts.nll),
                    ("transport".to_string(), parts.transport),
                ]),
            });
        }
    }
    Ok(CnfRun { model, history })
}

/// Mean negative log-likelihood of `points` (no gradient).
pub fn eval_nll(model: &CnfModel, points: &[Vec<f64>], steps: usize, scheme: Scheme) -> Result<f64> {
    use rayon::prelude::*;
    let nll: Vec<f64> = points
        .par_iter()
        .map(|y| Ok(-cnf_logdensity(model, y, steps, scheme)?.0))
        .collect::<Result<_>>()?;
    Ok(mean(&nll))
}
