use serde::{Deserialize, Serialize};

use super::params::ParamVector;
use crate::error::{Error, Result};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates and step counter of an Adam run.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl OptState {
    pub fn new(config: AdamConfig, len: usize) -> Self {
        OptState {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut ParamVector, grad: &ParamVector, state: &mut OptState) -> Result<()> {
    let n = params.len();
    for (what, got) in [
        ("gradient", grad.len()),
        ("first moment", state.m.len()),
        ("second moment", state.v.len()),
    ] {
        if got != n {
            return Err(Error::Dimension {
                what,
                expected: n,
                got,
            });
        }
    }
    if let Some(index) = grad.data().iter().position(|g| !g.is_finite()) {
        let block = grad
            .layout()
            .block_at(index)
            .map(|b| b.name.clone())
            .unwrap_or_default();
        return Err(Error::NonFiniteGradient { block, index });
    }

    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    state.step += 1;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);
    for ((p, &g), (m, v)) in params
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::paramcore::{Layout, Shape};

    fn scalar(v: f64) -> ParamVector {
        let layout = Arc::new(Layout::new([("x", Shape::Vector(1))]).unwrap());
        ParamVector::from_data(layout, vec![v]).unwrap()
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut p = scalar(0.3);
        let g = scalar(0.0);
        let mut st = OptState::new(AdamConfig::default(), 1);
        st.m[0] = 0.0;
        for _ in 0..5 {
            adam_step(&mut p, &g, &mut st).unwrap();
        }
        assert_eq!(p.data()[0], 0.3);
        assert_eq!(st.step, 5);
    }

    #[test]
    fn first_step_closed_form() {
        let cfg = AdamConfig {
            lr: 0.1,
            ..Default::default()
        };
        let mut p = scalar(0.0);
        let mut st = OptState::new(cfg, 1);
        adam_step(&mut p, &scalar(1.0), &mut st).unwrap();
        // m_hat = g, v_hat = g^2
        let expected = -0.1 * 1.0 / (1.0 + 1e-8);
        assert!((p.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_decreases() {
        let mut p = scalar(0.0);
        let mut st = OptState::new(AdamConfig::default(), 1);
        let g = scalar(1.0);
        adam_step(&mut p, &g, &mut st).unwrap();
        let first = p.data()[0];
        adam_step(&mut p, &g, &mut st).unwrap();
        assert!(first < 0.0 && p.data()[0] < first);
    }

    #[test]
    fn non_finite_gradient_names_block() {
        let layout = Arc::new(
            Layout::new([("W0", Shape::Matrix(1, 2)), ("b0", Shape::Vector(2))]).unwrap(),
        );
        let mut p = ParamVector::zeros(layout.clone());
        let g = ParamVector::from_data(layout, vec![0.0, 0.0, 1.0, f64::NAN]).unwrap();
        let mut st = OptState::new(AdamConfig::default(), 4);
        let err = adam_step(&mut p, &g, &mut st).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { ref block, index: 3 } if block == "b0"));
        assert_eq!(st.step, 0);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut p = scalar(0.25);
            let mut st = OptState::new(AdamConfig::default(), 1);
            for i in 0..20 {
                adam_step(&mut p, &scalar((i as f64).sin()), &mut st).unwrap();
            }
            p.data()[0].to_bits()
        };
        assert_eq!(run(), run());
    }
}
