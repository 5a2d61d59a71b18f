use rand::seq::index::sample;

use super::params::ParamVector;
use super::seeded_rng;
use crate::error::{Error, Result};

/// Finite-difference formula used by [`grad_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`.
    Central,
    /// Fourth-order central difference on `x +- h, x +- 2h`.
    FivePoint,
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Difference step.
    pub h: f64,
    pub stencil: Stencil,
    /// Check at most this many coordinates, drawn without replacement.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-6,
            stencil: Stencil::Central,
            max_coords: None,
            seed: 0,
        }
    }
}

impl GradCheckOptions {
    /// Fourth-order stencil with `h = 1e-3`. Its truncation error is far below the
    /// roundoff floor of the two-point rule at `h = 1e-6` (about `1e-16 |L| / h`),
    /// which matters for coordinates whose derivative is tiny.
    pub fn high_order() -> Self {
        GradCheckOptions {
            h: 1e-3,
            stencil: Stencil::FivePoint,
            ..Default::default()
        }
    }
}

/// Worst-case relative error between `analytic` and central finite differences
/// of `loss` at `params`. The denominator is `max(|a|, |fd|, 1e-8)`.
pub fn grad_check<F>(
    mut loss: F,
    params: &ParamVector,
    analytic: &ParamVector,
    opts: &GradCheckOptions,
) -> Result<f64>
where
    F: FnMut(&ParamVector) -> Result<f64>,
{
    if analytic.len() != params.len() {
        return Err(Error::Dimension {
            what: "analytic gradient",
            expected: params.len(),
            got: analytic.len(),
        });
    }
    let coords: Vec<usize> = match opts.max_coords {
        Some(m) if m < params.len() => {
            let mut rng = seeded_rng(opts.seed);
            let mut idx = sample(&mut rng, params.len(), m).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..params.len()).collect(),
    };

    let mut probe = params.clone();
    let mut eval = |p: &ParamVector| -> Result<f64> {
        let v = loss(p)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteLoss("finite-difference probe".into()))
        }
    };
    let mut worst = 0.0f64;
    for i in coords {
        let x = params.data()[i];
        let mut at = |offset: f64| -> Result<f64> {
            probe.data_mut()[i] = x + offset;
            let v = eval(&probe);
            probe.data_mut()[i] = x;
            v
        };
        let h = opts.h;
        let fd = match opts.stencil {
            Stencil::Central => (at(h)? - at(-h)?) / (2.0 * h),
            Stencil::FivePoint => {
                (8.0 * (at(h)? - at(-h)?) - (at(2.0 * h)? - at(-2.0 * h)?)) / (12.0 * h)
            }
        };
        let a = analytic.data()[i];
        let denom = a.abs().max(fd.abs()).max(1e-8);
        worst = worst.max((a - fd).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::paramcore::{Layout, Shape};

    fn point() -> ParamVector {
        let layout = Arc::new(Layout::new([("x", Shape::Vector(4))]).unwrap());
        ParamVector::from_data(layout, vec![0.3, -1.2, 2.0, 0.05]).unwrap()
    }

    fn half_sq(p: &ParamVector) -> Result<f64> {
        Ok(0.5 * p.data().iter().map(|v| v * v).sum::<f64>())
    }

    #[test]
    fn quadratic() {
        let p = point();
        let err = grad_check(half_sq, &p, &p, &GradCheckOptions::default()).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn sine_sum() {
        let p = point();
        let g = p.with_data(p.data().iter().map(|v| v.cos()).collect()).unwrap();
        let loss = |q: &ParamVector| Ok(q.data().iter().map(|v| v.sin()).sum::<f64>());
        let err = grad_check(loss, &p, &g, &GradCheckOptions::default()).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let p = point();
        let g = p.with_data(p.data().iter().map(|v| 2.0 * v).collect()).unwrap();
        let err = grad_check(half_sq, &p, &g, &GradCheckOptions::default()).unwrap();
        // |2x - x| / max(|2x|, |x|)
        assert!((err - 0.5).abs() < 1e-6, "{err}");
    }

    #[test]
    fn five_point_stencil() {
        let p = point();
        let g = p.with_data(p.data().iter().map(|v| 3.0 * v * v).collect()).unwrap();
        let loss = |q: &ParamVector| Ok(q.data().iter().map(|v| v.powi(3)).sum::<f64>());
        let err = grad_check(loss, &p, &g, &GradCheckOptions::high_order()).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn non_finite_loss_fails() {
        let p = point();
        let r = grad_check(|_| Ok(f64::NAN), &p, &p, &GradCheckOptions::default());
        assert!(matches!(r, Err(Error::NonFiniteLoss(_))));
    }

    #[test]
    fn coordinate_subset() {
        let p = point();
        let mut calls = 0;
        let opts = GradCheckOptions {
            max_coords: Some(2),
            seed: 9,
            ..Default::default()
        };
        let err = grad_check(
            |q| {
                calls += 1;
                half_sq(q)
            },
            &p,
            &p,
            &opts,
        )
        .unwrap();
        assert_eq!(calls, 4);
        assert!(err < 1e-8);
    }
}
