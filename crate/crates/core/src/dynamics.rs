//! One-hidden-layer tanh networks: the velocity field `f(z) = W1 tanh(W0 z + b0) + b1`
//! with piecewise-constant weights in time, and the scalar value network
//! `Phi(t, x) = w1 . tanh(W0 (t, x) + b0) + b1`.
//!
//! Everything downstream needs exact derivatives, so both networks expose their
//! Jacobian quantities analytically together with reverse-mode products.

use crate::error::{Error, Result};
use crate::paramcore::{Layout, Shape};

/// tanh and its first three derivatives at a pre-activation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TanhDerivs {
    pub t: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

impl TanhDerivs {
    pub fn at(a: f64) -> Self {
        let t = a.tanh();
        let d1 = 1.0 - t * t;
        TanhDerivs {
            t,
            d1,
            d2: -2.0 * t * d1,
            d3: -2.0 * d1 * (1.0 - 3.0 * t * t),
        }
    }
}

fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            got,
        })
    }
}

/// Architecture of the velocity field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldSpec {
    /// State dimension.
    pub n: usize,
    /// Hidden width.
    pub k: usize,
    /// Number of equal time intervals with their own weights.
    pub nt: usize,
}

struct Offsets {
    w0: usize,
    b0: usize,
    w1: usize,
    b1: usize,
}

struct Hidden {
    off: Offsets,
    d: Vec<TanhDerivs>,
}

impl FieldSpec {
    pub fn new(n: usize, k: usize, nt: usize) -> Result<Self> {
        if n == 0 || k == 0 || nt == 0 {
            return Err(Error::InvalidArgument(format!(
                "field sizes must be positive (n={n}, k={k}, intervals={nt})"
            )));
        }
        Ok(FieldSpec { n, k, nt })
    }

    pub fn autonomous(n: usize, k: usize) -> Result<Self> {
        FieldSpec::new(n, k, 1)
    }

    pub fn params_per_interval(&self) -> usize {
        2 * self.n * self.k + self.k + self.n
    }

    pub fn num_params(&self) -> usize {
        self.nt * self.params_per_interval()
    }

    /// Blocks `W0.i`, `b0.i`, `W1.i`, `b1.i` for every interval `i`.
    pub fn layout(&self) -> Layout {
        let (n, k) = (self.n, self.k);
        Layout::new((0..self.nt).flat_map(|i| {
            [
                (format!("W0.{i}"), Shape::Matrix(k, n)),
                (format!("b0.{i}"), Shape::Vector(k)),
                (format!("W1.{i}"), Shape::Matrix(n, k)),
                (format!("b1.{i}"), Shape::Vector(n)),
            ]
        }))
        .expect("field block names are unique")
    }

    /// Interval whose weights are active at time `t`; right-continuous.
    pub fn interval(&self, t: f64) -> Result<usize> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::TimeOutOfRange(t));
        }
        Ok(((t * self.nt as f64).floor() as usize).min(self.nt - 1))
    }

    fn offsets(&self, interval: usize) -> Offsets {
        let (n, k) = (self.n, self.k);
        let base = interval * self.params_per_interval();
        Offsets {
            w0: base,
            b0: base + k * n,
            w1: base + k * n + k,
            b1: base + 2 * k * n + k,
        }
    }

    fn hidden(&self, theta: &[f64], t: f64, z: &[f64]) -> Result<Hidden> {
        check_dim("field parameters", self.num_params(), theta.len())?;
        check_dim("field state", self.n, z.len())?;
        let off = self.offsets(self.interval(t)?);
        let n = self.n;
        let d = (0..self.k)
            .map(|j| {
                let row = &theta[off.w0 + j * n..off.w0 + (j + 1) * n];
                let a = theta[off.b0 + j] + row.iter().zip(z).map(|(w, x)| w * x).sum::<f64>();
                TanhDerivs::at(a)
            })
            .collect();
        Ok(Hidden { off, d })
    }

    /// `W1[i, j] * W0[j, i]` summed over `i`, per hidden unit `j`.
    fn trace_weights(&self, theta: &[f64], off: &Offsets) -> Vec<f64> {
        let (n, k) = (self.n, self.k);
        (0..k)
            .map(|j| {
                (0..n)
                    .map(|i| theta[off.w1 + i * k + j] * theta[off.w0 + j * n + i])
                    .sum()
            })
            .collect()
    }

    fn output(&self, theta: &[f64], h: &Hidden) -> Vec<f64> {
        let k = self.k;
        (0..self.n)
            .map(|i| {
                let row = &theta[h.off.w1 + i * k..h.off.w1 + (i + 1) * k];
                theta[h.off.b1 + i] + row.iter().zip(&h.d).map(|(w, d)| w * d.t).sum::<f64>()
            })
            .collect()
    }

    pub fn eval(&self, theta: &[f64], t: f64, z: &[f64]) -> Result<Vec<f64>> {
        let h = self.hidden(theta, t, z)?;
        Ok(self.output(theta, &h))
    }

    /// Velocity and divergence in one pass.
    pub fn eval_with_trace(&self, theta: &[f64], t: f64, z: &[f64]) -> Result<(Vec<f64>, f64)> {
        let h = self.hidden(theta, t, z)?;
        let c = self.trace_weights(theta, &h.off);
        let tr = h.d.iter().zip(&c).map(|(d, c)| d.d1 * c).sum();
        Ok((self.output(theta, &h), tr))
    }

    /// Row-major `n x n` Jacobian `W1 diag(tanh'(a)) W0`.
    pub fn jacobian(&self, theta: &[f64], t: f64, z: &[f64]) -> Result<Vec<f64>> {
        let h = self.hidden(theta, t, z)?;
        let (n, k) = (self.n, self.k);
        let mut jac = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                jac[r * n + c] = (0..k)
                    .map(|j| theta[h.off.w1 + r * k + j] * h.d[j].d1 * theta[h.off.w0 + j * n + c])
                    .sum();
            }
        }
        Ok(jac)
    }

    pub fn trace(&self, theta: &[f64], t: f64, z: &[f64]) -> Result<f64> {
        Ok(self.eval_with_trace(theta, t, z)?.1)
    }

    /// Accumulates `d/dz` and `d/dtheta` of `v . f(z) + c * tr(df/dz)` into
    /// `grad_z` and `grad_theta`.
    #[allow(clippy::too_many_arguments)]
    pub fn vjp(
        &self,
        theta: &[f64],
        t: f64,
        z: &[f64],
        v: &[f64],
        c: f64,
        grad_z: &mut [f64],
        grad_theta: &mut [f64],
    ) -> Result<()> {
        check_dim("velocity cotangent", self.n, v.len())?;
        check_dim("state gradient", self.n, grad_z.len())?;
        check_dim("parameter gradient", self.num_params(), grad_theta.len())?;
        let h = self.hidden(theta, t, z)?;
        let (n, k) = (self.n, self.k);
        let off = &h.off;
        let tw = self.trace_weights(theta, off);

        for i in 0..n {
            grad_theta[off.b1 + i] += v[i];
        }
        for j in 0..k {
            let d = h.d[j];
            let mut u = 0.0;
            for i in 0..n {
                let w1 = theta[off.w1 + i * k + j];
                u += w1 * v[i];
                grad_theta[off.w1 + i * k + j] += v[i] * d.t + c * d.d1 * theta[off.w0 + j * n + i];
                grad_theta[off.w0 + j * n + i] += c * d.d1 * w1;
            }
            let ga = u * d.d1 + c * d.d2 * tw[j];
            grad_theta[off.b0 + j] += ga;
            for i in 0..n {
                let w0 = theta[off.w0 + j * n + i];
                grad_theta[off.w0 + j * n + i] += ga * z[i];
                grad_z[i] += ga * w0;
            }
        }
        Ok(())
    }

    /// Residual layer `z + f(z)`; only defined for time-independent weights.
    pub fn resnet_step(&self, theta: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        if self.nt != 1 {
            return Err(Error::InvalidArgument(
                "residual layer needs an autonomous field (one interval)".into(),
            ));
        }
        let f = self.eval(theta, 0.0, z)?;
        Ok(z.iter().zip(f).map(|(a, b)| a + b).collect())
    }
}

/// Architecture of the scalar value network; its input is `(t, x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueNetSpec {
    pub n: usize,
    pub k: usize,
}

/// `Phi` and the derivatives the feedback form and HJB residual need.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueDerivs {
    pub phi: f64,
    pub dt: f64,
    pub grad: Vec<f64>,
    pub lap: f64,
}

/// Cotangents for the four outputs of [`ValueNetSpec::eval`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValueCotangent {
    pub phi: f64,
    pub dt: f64,
    pub grad: Vec<f64>,
    pub lap: f64,
}

impl ValueCotangent {
    pub fn zeros(n: usize) -> Self {
        ValueCotangent {
            phi: 0.0,
            dt: 0.0,
            grad: vec![0.0; n],
            lap: 0.0,
        }
    }
}

// Offsets inside the value-net parameter slice.
impl ValueNetSpec {
    pub fn new(n: usize, k: usize) -> Result<Self> {
        if n == 0 || k == 0 {
            return Err(Error::InvalidArgument(format!(
                "value network sizes must be positive (n={n}, k={k})"
            )));
        }
        Ok(ValueNetSpec { n, k })
    }

    fn input_dim(&self) -> usize {
        self.n + 1
    }

    pub fn num_params(&self) -> usize {
        self.k * self.input_dim() + 2 * self.k + 1
    }

    pub fn layout(&self) -> Layout {
        Layout::new([
            ("W0", Shape::Matrix(self.k, self.input_dim())),
            ("b0", Shape::Vector(self.k)),
            ("w1", Shape::Matrix(1, self.k)),
            ("b1", Shape::Vector(1)),
        ])
        .expect("value block names are unique")
    }

    fn hidden(&self, theta: &[f64], t: f64, x: &[f64]) -> Result<Vec<TanhDerivs>> {
        check_dim("value parameters", self.num_params(), theta.len())?;
        check_dim("value state", self.n, x.len())?;
        let m = self.input_dim();
        let b0 = self.k * m;
        Ok((0..self.k)
            .map(|j| {
                let row = &theta[j * m..(j + 1) * m];
                let a = theta[b0 + j]
                    + row[0] * t
                    + row[1..].iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                TanhDerivs::at(a)
            })
            .collect())
    }

    pub fn eval(&self, theta: &[f64], t: f64, x: &[f64]) -> Result<ValueDerivs> {
        let d = self.hidden(theta, t, x)?;
        let (n, k, m) = (self.n, self.k, self.input_dim());
        let w1 = &theta[k * m + k..k * m + 2 * k];
        let mut out = ValueDerivs {
            phi: theta[k * m + 2 * k],
            dt: 0.0,
            grad: vec![0.0; n],
            lap: 0.0,
        };
        for j in 0..k {
            let row = &theta[j * m..(j + 1) * m];
            let g = w1[j] * d[j].d1;
            out.phi += w1[j] * d[j].t;
            out.dt += g * row[0];
            let mut q = 0.0;
            for i in 0..n {
                out.grad[i] += g * row[i + 1];
                q += row[i + 1] * row[i + 1];
            }
            out.lap += w1[j] * d[j].d2 * q;
        }
        Ok(out)
    }

    /// Accumulates the gradients of `<cot, eval(t, x)>` with respect to `x`,
    /// `t` and the parameters.
    #[allow(clippy::too_many_arguments)]
    pub fn vjp(
        &self,
        theta: &[f64],
        t: f64,
        x: &[f64],
        cot: &ValueCotangent,
        grad_x: &mut [f64],
        grad_t: &mut f64,
        grad_theta: &mut [f64],
    ) -> Result<()> {
        check_dim("value gradient cotangent", self.n, cot.grad.len())?;
        check_dim("state gradient", self.n, grad_x.len())?;
        check_dim("parameter gradient", self.num_params(), grad_theta.len())?;
        let d = self.hidden(theta, t, x)?;
        let (n, k, m) = (self.n, self.k, self.input_dim());
        let (b0, w1o, b1) = (k * m, k * m + k, k * m + 2 * k);
        // cotangent of the input-gradient (t, x) as one m-vector
        let mut gin = Vec::with_capacity(m);
        gin.push(cot.dt);
        gin.extend_from_slice(&cot.grad);

        grad_theta[b1] += cot.phi;
        for j in 0..k {
            let row = &theta[j * m..(j + 1) * m];
            let w1 = theta[w1o + j];
            let dj = d[j];
            let mj: f64 = row.iter().zip(&gin).map(|(w, g)| w * g).sum();
            let qj: f64 = row[1..].iter().map(|w| w * w).sum();

            grad_theta[w1o + j] += cot.phi * dj.t + dj.d1 * mj + cot.lap * dj.d2 * qj;
            let ga = w1 * (cot.phi * dj.d1 + dj.d2 * mj + cot.lap * dj.d3 * qj);
            grad_theta[b0 + j] += ga;

            let input = std::iter::once(t).chain(x.iter().copied());
            for (l, u) in input.enumerate() {
                let mut g = w1 * dj.d1 * gin[l] + ga * u;
                if l > 0 {
                    g += 2.0 * w1 * cot.lap * dj.d2 * row[l];
                }
                grad_theta[j * m + l] += g;
            }
            *grad_t += ga * row[0];
            for i in 0..n {
                grad_x[i] += ga * row[i + 1];
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paramcore::{seeded_rng, ParamVector};
    use rand::Rng;
    use std::sync::Arc;

    fn random_theta(len: usize, scale: f64, seed: u64) -> Vec<f64> {
        let mut rng = seeded_rng(seed);
        (0..len).map(|_| rng.random_range(-scale..scale)).collect()
    }

    fn scalar_field() -> (FieldSpec, Vec<f64>) {
        // W0 = 1, b0 = 0, W1 = 1, b1 = 0
        (FieldSpec::autonomous(1, 1).unwrap(), vec![1.0, 0.0, 1.0, 0.0])
    }

    fn fd(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn tanh_identities() {
        for &a in &[-2.0, -0.3, 0.0, 0.7, 1.9] {
            let d = TanhDerivs::at(a);
            assert!(d.t.abs() < 1.0 && d.d1 > 0.0 && d.d1 <= 1.0);
            assert!((fd(|x| x.tanh(), a) - d.d1).abs() < 1e-7);
            assert!((fd(|x| TanhDerivs::at(x).d1, a) - d.d2).abs() < 1e-7);
            assert!((fd(|x| TanhDerivs::at(x).d2, a) - d.d3).abs() < 1e-7);
        }
    }

    #[test]
    fn zero_network() {
        let spec = FieldSpec::new(3, 4, 2).unwrap();
        let theta = vec![0.0; spec.num_params()];
        let z = [0.4, -1.0, 2.0];
        assert_eq!(spec.eval(&theta, 0.3, &z).unwrap(), vec![0.0; 3]);
        assert_eq!(spec.jacobian(&theta, 0.3, &z).unwrap(), vec![0.0; 9]);
        assert_eq!(spec.trace(&theta, 0.3, &z).unwrap(), 0.0);
    }

    #[test]
    fn scalar_evaluations() {
        let (spec, theta) = scalar_field();
        let f = spec.eval(&theta, 0.0, &[0.5]).unwrap()[0];
        assert!((f - 0.4621171573).abs() < 1e-10);
        let j = spec.jacobian(&theta, 0.0, &[0.5]).unwrap()[0];
        assert!((j - 0.7864477330).abs() < 1e-10);
        assert!((spec.trace(&theta, 0.0, &[0.5]).unwrap() - 0.7864477330).abs() < 1e-10);
        let r = spec.resnet_step(&theta, &[0.5]).unwrap()[0];
        assert!((r - 0.9621171573).abs() < 1e-10);
    }

    #[test]
    fn bias_only_field() {
        let spec = FieldSpec::autonomous(2, 3).unwrap();
        let mut p = ParamVector::zeros(Arc::new(spec.layout()));
        p.block_mut("W0.0").unwrap().data.fill(0.8);
        p.block_mut("b1.0").unwrap().data.copy_from_slice(&[0.3, -0.2]);
        assert_eq!(spec.eval(p.data(), 0.0, &[1.0, 5.0]).unwrap(), vec![0.3, -0.2]);
    }

    #[test]
    fn jacobian_at_origin_is_product() {
        let spec = FieldSpec::autonomous(2, 3).unwrap();
        let mut theta = random_theta(spec.num_params(), 1.0, 4);
        let off = spec.offsets(0);
        theta[off.b0..off.b0 + 3].fill(0.0);
        let jac = spec.jacobian(&theta, 0.0, &[0.0, 0.0]).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                let e: f64 = (0..3).map(|j| theta[off.w1 + r * 3 + j] * theta[off.w0 + j * 2 + c]).sum();
                assert_eq!(jac[r * 2 + c], e);
            }
        }
    }

    #[test]
    fn trace_matches_jacobian_and_divergence() {
        let spec = FieldSpec::new(3, 5, 2).unwrap();
        for seed in 0..20 {
            let theta = random_theta(spec.num_params(), 1.0, seed);
            let z = random_theta(3, 1.5, seed + 100);
            let t = 0.7;
            let jac = spec.jacobian(&theta, t, &z).unwrap();
            let tr = spec.trace(&theta, t, &z).unwrap();
            assert!((tr - (jac[0] + jac[4] + jac[8])).abs() < 1e-14);
            let div: f64 = (0..3)
                .map(|i| {
                    fd(
                        |s| {
                            let mut zz = z.clone();
                            zz[i] = s;
                            spec.eval(&theta, t, &zz).unwrap()[i]
                        },
                        z[i],
                    )
                })
                .sum();
            assert!((div - tr).abs() < 1e-6);
        }
    }

    #[test]
    fn piecewise_constant_in_time() {
        let spec = FieldSpec::new(2, 3, 4).unwrap();
        let theta = random_theta(spec.num_params(), 1.0, 1);
        let z = [0.3, -0.4];
        let a = spec.eval(&theta, 0.25, &z).unwrap();
        let b = spec.eval(&theta, 0.4999, &z).unwrap();
        let before = spec.eval(&theta, 0.2499, &z).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, before);
        assert_eq!(spec.interval(1.0).unwrap(), 3);
        assert!(matches!(spec.eval(&theta, 1.5, &z), Err(Error::TimeOutOfRange(_))));
        assert!(matches!(spec.eval(&theta, 0.1, &[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn field_vjp_trivial_cases() {
        let spec = FieldSpec::autonomous(2, 3).unwrap();
        let theta = random_theta(spec.num_params(), 1.0, 2);
        let z = [0.1, 0.2];
        let mut gz = [0.0; 2];
        let mut gt = vec![0.0; spec.num_params()];
        spec.vjp(&theta, 0.0, &z, &[0.0, 0.0], 0.0, &mut gz, &mut gt).unwrap();
        assert!(gz.iter().chain(&gt).all(|&v| v == 0.0));
        spec.vjp(&theta, 0.0, &z, &[1.0, 0.0], 0.0, &mut gz, &mut gt).unwrap();
        let off = spec.offsets(0);
        assert_eq!(&gt[off.b1..off.b1 + 2], &[1.0, 0.0]);
    }

    #[test]
    fn field_vjp_matches_finite_differences() {
        let spec = FieldSpec::new(3, 4, 2).unwrap();
        for seed in 0..20 {
            let theta = random_theta(spec.num_params(), 1.0, seed);
            let z = random_theta(3, 1.0, seed + 50);
            let v = random_theta(3, 1.0, seed + 70);
            let c = 0.7;
            let t = 0.6;
            let scalar = |th: &[f64], zz: &[f64]| {
                let (f, tr) = spec.eval_with_trace(th, t, zz).unwrap();
                f.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() + c * tr
            };
            let mut gz = vec![0.0; 3];
            let mut gt = vec![0.0; spec.num_params()];
            spec.vjp(&theta, t, &z, &v, c, &mut gz, &mut gt).unwrap();
            for p in 0..theta.len() {
                let num = fd(
                    |s| {
                        let mut th = theta.clone();
                        th[p] = s;
                        scalar(&th, &z)
                    },
                    theta[p],
                );
                assert!(rel(gt[p], num) < 1e-5 || (gt[p] - num).abs() < 1e-9, "param {p}");
            }
            for i in 0..3 {
                let num = fd(
                    |s| {
                        let mut zz = z.clone();
                        zz[i] = s;
                        scalar(&theta, &zz)
                    },
                    z[i],
                );
                assert!(rel(gz[i], num) < 1e-5 || (gz[i] - num).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn value_zero_and_constant() {
        let spec = ValueNetSpec::new(2, 3).unwrap();
        let mut theta = vec![0.0; spec.num_params()];
        let v = spec.eval(&theta, 0.5, &[1.0, 2.0]).unwrap();
        assert_eq!((v.phi, v.dt, v.grad.clone(), v.lap), (0.0, 0.0, vec![0.0, 0.0], 0.0));
        *theta.last_mut().unwrap() = 1.25;
        let v = spec.eval(&theta, 0.5, &[1.0, 2.0]).unwrap();
        assert_eq!((v.phi, v.dt, v.grad, v.lap), (1.25, 0.0, vec![0.0, 0.0], 0.0));
    }

    #[test]
    fn value_derivatives_match_finite_differences() {
        let spec = ValueNetSpec::new(2, 5).unwrap();
        for seed in 0..20 {
            let theta = random_theta(spec.num_params(), 1.0, seed);
            let x = random_theta(2, 1.0, seed + 30);
            let t = 0.37;
            let v = spec.eval(&theta, t, &x).unwrap();
            let phi = |t: f64, x: &[f64]| spec.eval(&theta, t, x).unwrap().phi;
            assert!((fd(|s| phi(s, &x), t) - v.dt).abs() < 1e-6);
            let mut lap = 0.0;
            for i in 0..2 {
                let g = fd(
                    |s| {
                        let mut xx = x.clone();
                        xx[i] = s;
                        phi(t, &xx)
                    },
                    x[i],
                );
                assert!((g - v.grad[i]).abs() < 1e-6);
                let h = 1e-4;
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                lap += (phi(t, &xp) - 2.0 * v.phi + phi(t, &xm)) / (h * h);
            }
            assert!((lap - v.lap).abs() < 1e-5, "{lap} vs {}", v.lap);
        }
    }

    fn value_scalar(spec: &ValueNetSpec, th: &[f64], t: f64, x: &[f64], cot: &ValueCotangent) -> f64 {
        let v = spec.eval(th, t, x).unwrap();
        cot.phi * v.phi
            + cot.dt * v.dt
            + cot.lap * v.lap
            + v.grad.iter().zip(&cot.grad).map(|(a, b)| a * b).sum::<f64>()
    }

    #[test]
    fn value_vjp_matches_finite_differences() {
        let spec = ValueNetSpec::new(2, 4).unwrap();
        let mut seeds_checked = 0;
        for seed in 0..20 {
            let theta = random_theta(spec.num_params(), 1.0, seed);
            let x = random_theta(2, 1.0, seed + 10);
            let t = 0.8;
            let r = random_theta(5, 1.0, seed + 20);
            let cot = ValueCotangent {
                phi: r[0],
                dt: r[1],
                grad: vec![r[2], r[3]],
                lap: r[4],
            };
            let mut gx = vec![0.0; 2];
            let mut gtime = 0.0;
            let mut gth = vec![0.0; spec.num_params()];
            spec.vjp(&theta, t, &x, &cot, &mut gx, &mut gtime, &mut gth).unwrap();
            for p in 0..theta.len() {
                let num = fd(
                    |s| {
                        let mut th = theta.clone();
                        th[p] = s;
                        value_scalar(&spec, &th, t, &x, &cot)
                    },
                    theta[p],
                );
                assert!(rel(gth[p], num) < 1e-5 || (gth[p] - num).abs() < 1e-9, "p{p}");
            }
            for i in 0..2 {
                let num = fd(
                    |s| {
                        let mut xx = x.clone();
                        xx[i] = s;
                        value_scalar(&spec, &theta, t, &xx, &cot)
                    },
                    x[i],
                );
                assert!(rel(gx[i], num) < 1e-5 || (gx[i] - num).abs() < 1e-9);
            }
            let num = fd(|s| value_scalar(&spec, &theta, s, &x, &cot), t);
            assert!(rel(gtime, num) < 1e-5 || (gtime - num).abs() < 1e-9);
            seeds_checked += 1;
        }
        assert_eq!(seeds_checked, 20);
    }

    #[test]
    fn value_vjp_zero_cotangent() {
        let spec = ValueNetSpec::new(3, 4).unwrap();
        let theta = random_theta(spec.num_params(), 1.0, 5);
        let mut gx = vec![0.0; 3];
        let mut gt = 0.0;
        let mut gth = vec![0.0; spec.num_params()];
        spec.vjp(&theta, 0.2, &[0.1, 0.2, 0.3], &ValueCotangent::zeros(3), &mut gx, &mut gt, &mut gth)
            .unwrap();
        assert!(gx.iter().chain(&gth).all(|&v| v == 0.0) && gt == 0.0);
    }
}
