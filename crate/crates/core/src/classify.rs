//! Binary classification with an affine readout of the terminal ODE state,
//! `F(x) = W z(1) + b` where `z(0)` is the input padded with zeros.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::distributions::{make_circles, LabeledDataset};
use crate::dynamics::FieldSpec;
use crate::error::{Error, Result};
use crate::odeint::{backprop_into, integrate, AugmentedState, FieldHook, Scheme, Trajectory, NUM_ACC};
use crate::paramcore::{adam_step, seeded_rng, Layout, OptState, ParamVector, Rng, Shape};
use crate::train::{check_loss, quantile, reduce_batch, EpochRecord, TrainOptions};

/// Zero-pads `x` with `pad` extra coordinates.
pub fn augment(x: &[f64], pad: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(x.len() + pad);
    v.extend_from_slice(x);
    v.resize(x.len() + pad, 0.0);
    v
}

/// Numerically stable `log(1 + exp(x))`.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Cross-entropy of a logit against a 0/1 label.
pub fn bce_with_logit(logit: f64, label: u8) -> f64 {
    softplus(logit) - label as f64 * logit
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub field: FieldSpec,
    pub input_dim: usize,
    pub pad: usize,
    /// Field blocks followed by the readout blocks `W` (1 x d) and `b`.
    pub params: ParamVector,
}

impl ClassifierModel {
    pub fn layout(field: &FieldSpec) -> Layout {
        let readout = Layout::new([("W", Shape::Matrix(1, field.n)), ("b", Shape::Vector(1))])
            .expect("distinct names");
        field.layout().concat(&readout).expect("distinct names")
    }

    pub fn zeros(input_dim: usize, pad: usize, width: usize, intervals: usize) -> Result<Self> {
        let field = FieldSpec::new(input_dim + pad, width, intervals)?;
        Ok(ClassifierModel {
            params: ParamVector::zeros(Arc::new(Self::layout(&field))),
            field,
            input_dim,
            pad,
        })
    }

    pub fn init(input_dim: usize, pad: usize, width: usize, intervals: usize, rng: &mut Rng) -> Result<Self> {
        let field = FieldSpec::new(input_dim + pad, width, intervals)?;
        Ok(ClassifierModel {
            params: ParamVector::init_uniform(Arc::new(Self::layout(&field)), rng),
            field,
            input_dim,
            pad,
        })
    }

    pub fn theta(&self) -> &[f64] {
        &self.params.data()[..self.field.num_params()]
    }

    fn readout(&self) -> (&[f64], f64) {
        let p = self.field.num_params();
        let d = self.field.n;
        (&self.params.data()[p..p + d], self.params.data()[p + d])
    }

    /// Terminal features `z(1)` of the padded input.
    pub fn features(&self, x: &[f64], steps: usize, scheme: Scheme) -> Result<Trajectory> {
        if x.len() != self.input_dim {
            return Err(Error::Dimension {
                what: "classifier input",
                expected: self.input_dim,
                got: x.len(),
            });
        }
        let hook = FieldHook::features_only(&self.field, self.theta());
        integrate(&hook, &AugmentedState::new(augment(x, self.pad)), 0.0, 1.0, steps, scheme)
    }

    pub fn probability(&self, x: &[f64], steps: usize, scheme: Scheme) -> Result<f64> {
        Ok(sigmoid(classify_forward(self, x, steps, scheme)?.0))
    }
}

/// Logit `W z(1) + b` together with the feature trajectory.
pub fn classify_forward(
    model: &ClassifierModel,
    x: &[f64],
    steps: usize,
    scheme: Scheme,
) -> Result<(f64, Trajectory)> {
    let traj = model.features(x, steps, scheme)?;
    let (w, b) = model.readout();
    let logit = b + w.iter().zip(traj.last_z()).map(|(a, z)| a * z).sum::<f64>();
    Ok((logit, traj))
}

/// Mean binary cross-entropy over `batch` and its exact parameter gradient.
pub fn classify_loss(
    model: &ClassifierModel,
    batch: &LabeledDataset,
    steps: usize,
    scheme: Scheme,
) -> Result<(f64, ParamVector)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let items: Vec<(&Vec<f64>, u8)> = batch.points.iter().zip(batch.labels.iter().copied()).collect();
    let scale = 1.0 / batch.len() as f64;
    let np = model.params.len();
    let pf = model.field.num_params();
    let d = model.field.n;
    let (w, _) = model.readout();
    let hook = FieldHook::features_only(&model.field, model.theta());

    let (loss, grad) = reduce_batch(&items, np, |(x, y), g| {
        let (logit, traj) = classify_forward(model, x, steps, scheme)?;
        let dlogit = (sigmoid(logit) - *y as f64) * scale;
        let mut cot = vec![0.0; d + NUM_ACC];
        for i in 0..d {
            cot[i] = dlogit * w[i];
        }
        backprop_into(&hook, &traj, &cot, &mut g[..pf])?;
        for (gi, z) in g[pf..pf + d].iter_mut().zip(traj.last_z()) {
            *gi += dlogit * z;
        }
        g[pf + d] += dlogit;
        Ok(bce_with_logit(logit, *y) * scale)
    })?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss("classification loss".into()));
    }
    Ok((loss, model.params.with_data(grad)?))
}

/// Fraction of points whose thresholded logit matches the label.
pub fn eval_accuracy(model: &ClassifierModel, data: &LabeledDataset, steps: usize, scheme: Scheme) -> Result<f64> {
    let mut correct = 0usize;
    for (x, &y) in data.points.iter().zip(&data.labels) {
        let (logit, _) = classify_forward(model, x, steps, scheme)?;
        if ((logit > 0.0) as u8) == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CirclesConfig {
    pub count: usize,
    pub inner: f64,
    pub outer: f64,
    pub noise: f64,
}

impl Default for CirclesConfig {
    fn default() -> Self {
        CirclesConfig {
            count: 512,
            inner: 1.0,
            outer: 2.0,
            noise: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifyConfig {
    /// Number of zero coordinates appended to each input.
    pub pad: usize,
    pub width: usize,
    pub intervals: usize,
    pub data: CirclesConfig,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        ClassifyConfig {
            pad: 1,
            width: 16,
            intervals: 8,
            data: CirclesConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClassifyRun {
    pub model: ClassifierModel,
    pub dataset: LabeledDataset,
    pub history: Vec<EpochRecord>,
}

/// Adam on minibatches drawn without replacement from a fixed circles dataset.
pub fn train_classifier(cfg: &ClassifyConfig, opts: &TrainOptions, seed: u64) -> Result<ClassifyRun> {
    let mut rng = seeded_rng(seed);
    let d = &cfg.data;
    let dataset = make_circles(d.count, d.inner, d.outer, d.noise, &mut rng)?;
    let model = ClassifierModel::init(2, cfg.pad, cfg.width, cfg.intervals, &mut rng)?;
    train_classifier_on(model, dataset, opts, &mut rng)
}

pub fn train_classifier_on(
    mut model: ClassifierModel,
    dataset: LabeledDataset,
    opts: &TrainOptions,
    rng: &mut Rng,
) -> Result<ClassifyRun> {
    opts.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let mut state = OptState::new(opts.adam, model.params.len());
    let mut history = Vec::new();
    let batch = opts.batch.min(dataset.len());
    for it in 0..opts.iterations {
        let idx = sample(rng, dataset.len(), batch).into_vec();
        let (loss, grad) = classify_loss(&model, &dataset.subset(&idx), opts.train_steps, opts.scheme)
            .map_err(|e| Error::Diverged {
                iteration: it,
                reason: e.to_string(),
            })?;
        check_loss(loss, it)?;
        state.config.lr = opts.lr_at(it);
        adam_step(&mut model.params, &grad, &mut state)?;
        if (it + 1) % opts.log_every == 0 || it + 1 == opts.iterations {
            history.push(classify_record(&model, &dataset, opts, history.len(), it + 1)?);
        }
    }
    Ok(ClassifyRun {
        model,
        dataset,
        history,
    })
}

fn classify_record(
    model: &ClassifierModel,
    data: &LabeledDataset,
    opts: &TrainOptions,
    epoch: usize,
    iteration: usize,
) -> Result<EpochRecord> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (x, &y) in data.points.iter().zip(&data.labels) {
        let (logit, _) = classify_forward(model, x, opts.train_steps, opts.scheme)?;
        loss += bce_with_logit(logit, y);
        correct += (((logit > 0.0) as u8) == y) as usize;
    }
    let n = data.len() as f64;
    Ok(EpochRecord {
        epoch,
        iteration,
        loss: loss / n,
        metrics: BTreeMap::from([("accuracy".to_string(), correct as f64 / n)]),
    })
}

/// Hinge-loss linear probe on frozen features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub w: Vec<f64>,
    pub b: f64,
    pub accuracy: f64,
    /// 1% quantile of the signed distances `y (w.z + b) / |w|`, labels in {-1, 1}.
    pub margin: f64,
}

/// Fits `min lambda/2 |w|^2 + mean hinge(1 - y (w.z + b))` by deterministic
/// full-batch subgradient descent with iterate averaging.
pub fn linear_probe(features: &[Vec<f64>], labels: &[u8]) -> LinearProbe {
    let d = features[0].len();
    let n = features.len() as f64;
    let lambda = 1e-3;
    let iters = 3000;
    let (mut w, mut b) = (vec![0.0; d], 0.0);
    let (mut wa, mut ba) = (vec![0.0; d], 0.0);
    let sign = |l: u8| if l == 1 { 1.0 } else { -1.0 };
    for t in 1..=iters {
        let eta = 1.0 / (lambda * (t as f64 + 100.0));
        let mut gw: Vec<f64> = w.iter().map(|v| lambda * v).collect();
        let mut gb = 0.0;
        for (z, &l) in features.iter().zip(labels) {
            let y = sign(l);
            let s = y * (b + w.iter().zip(z).map(|(a, c)| a * c).sum::<f64>());
            if s < 1.0 {
                for (g, zi) in gw.iter_mut().zip(z) {
                    *g -= y * zi / n;
                }
                gb -= y / n;
            }
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= eta.min(1.0) * g;
        }
        b -= eta.min(1.0) * gb;
        if t > iters / 2 {
            for (a, v) in wa.iter_mut().zip(&w) {
                *a += v;
            }
            ba += b;
        }
    }
    let cnt = (iters - iters / 2) as f64;
    for a in wa.iter_mut() {
        *a /= cnt;
    }
    ba /= cnt;
    let norm = wa.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let dist: Vec<f64> = features
        .iter()
        .zip(labels)
        .map(|(z, &l)| sign(l) * (ba + wa.iter().zip(z).map(|(a, c)| a * c).sum::<f64>()) / norm)
        .collect();
    let accuracy = dist.iter().filter(|&&s| s > 0.0).count() as f64 / n;
    LinearProbe {
        margin: quantile(&dist, 0.01),
        w: wa,
        b: ba,
        accuracy,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paramcore::{grad_check, GradCheckOptions};

    #[test]
    fn padding() {
        assert_eq!(augment(&[1.5, -2.0], 0), vec![1.5, -2.0]);
        assert_eq!(augment(&[1.5, -2.0], 1), vec![1.5, -2.0, 0.0]);
        assert_eq!(augment(&[1.0, 2.0], 3).len(), 5);
    }

    #[test]
    fn losses() {
        assert!((bce_with_logit(0.0, 1) - 2f64.ln()).abs() < 1e-15);
        assert!((bce_with_logit(0.0, 0) - 0.6931472).abs() < 1e-7);
        assert!(bce_with_logit(20.0, 1) < 1e-8);
        assert!(bce_with_logit(-20.0, 0) < 1e-8);
        assert!(bce_with_logit(800.0, 0).is_finite());
    }

    #[test]
    fn zero_model_is_uninformative() {
        let model = ClassifierModel::zeros(2, 1, 4, 2).unwrap();
        let (logit, _) = classify_forward(&model, &[0.3, 0.4], 8, Scheme::Rk4).unwrap();
        assert_eq!(logit, 0.0);
        assert_eq!(model.probability(&[0.3, 0.4], 8, Scheme::Rk4).unwrap(), 0.5);
    }

    #[test]
    fn identity_flow_logit() {
        let mut model = ClassifierModel::zeros(2, 1, 4, 2).unwrap();
        model.params.block_mut("W").unwrap().data.copy_from_slice(&[0.5, -1.0, 3.0]);
        model.params.block_mut("b").unwrap().data[0] = 0.25;
        let (logit, _) = classify_forward(&model, &[2.0, 1.0], 8, Scheme::Rk4).unwrap();
        assert_eq!(logit, 0.5 * 2.0 - 1.0 + 0.25);
    }

    #[test]
    fn gradient_passes_finite_differences() {
        let mut rng = seeded_rng(21);
        let data = make_circles(8, 1.0, 2.0, 0.1, &mut rng).unwrap();
        for pad in [0, 1] {
            let model = ClassifierModel::init(2, pad, 8, 2, &mut rng).unwrap();
            let (_, grad) = classify_loss(&model, &data, 8, Scheme::Rk4).unwrap();
            let loss = |p: &ParamVector| {
                let mut m = model.clone();
                m.params = p.clone();
                Ok(classify_loss(&m, &data, 8, Scheme::Rk4)?.0)
            };
            let err = grad_check(loss, &model.params, &grad, &GradCheckOptions::high_order()).unwrap();
            assert!(err < 1e-5, "pad {pad}: {err}");
        }
    }

    #[test]
    fn degenerate_labels() {
        let mut rng = seeded_rng(1);
        let mut data = make_circles(40, 1.0, 2.0, 0.1, &mut rng).unwrap();
        data.labels.fill(1);
        let model = ClassifierModel::init(2, 0, 4, 1, &mut rng).unwrap();
        let opts = TrainOptions {
            iterations: 300,
            batch: 16,
            log_every: 100,
            train_steps: 4,
            adam: crate::paramcore::AdamConfig { lr: 0.05, ..Default::default() },
            ..Default::default()
        };
        let run = train_classifier_on(model, data.clone(), &opts, &mut rng).unwrap();
        assert_eq!(eval_accuracy(&run.model, &data, 4, Scheme::Rk4).unwrap(), 1.0);
        let last = run.history.last().unwrap();
        assert!(last.loss < 0.05, "{}", last.loss);
        assert!(run.history.windows(2).all(|w| w[1].loss < w[0].loss));
    }

    #[test]
    fn probe_on_separable_data() {
        let feats = vec![vec![-2.0, 0.0], vec![-1.0, 1.0], vec![1.0, 0.5], vec![2.0, -1.0]];
        let probe = linear_probe(&feats, &[0, 0, 1, 1]);
        assert_eq!(probe.accuracy, 1.0);
        assert!(probe.margin > 0.5);
    }
}
