//! Fixed-step Euler / RK4 integration of the augmented state
//! `(z, logdet, c_ot, c_run, c_hjb)` and exact reverse-mode differentiation of
//! the discrete map.
//!
//! `z` and `logdet` advance with the signed step; the three cost accumulators
//! advance with `|h|`, so costs stay nonnegative when integrating backward.

use serde::{Deserialize, Serialize};

use crate::dynamics::FieldSpec;
use crate::error::{Error, Result};

/// Number of scalar accumulators carried next to `z`.
pub const NUM_ACC: usize = 4;
pub const LOGDET: usize = 0;
pub const C_OT: usize = 1;
pub const C_RUN: usize = 2;
pub const C_HJB: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub z: Vec<f64>,
    /// Accumulated divergence of the velocity, signed with the direction of time.
    pub logdet: f64,
    pub c_ot: f64,
    pub c_run: f64,
    pub c_hjb: f64,
}

impl AugmentedState {
    pub fn new(z: Vec<f64>) -> Self {
        AugmentedState {
            z,
            logdet: 0.0,
            c_ot: 0.0,
            c_run: 0.0,
            c_hjb: 0.0,
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.z.clone();
        v.extend_from_slice(&[self.logdet, self.c_ot, self.c_run, self.c_hjb]);
        v
    }

    pub fn from_slice(y: &[f64]) -> Self {
        let n = y.len() - NUM_ACC;
        AugmentedState {
            z: y[..n].to_vec(),
            logdet: y[n + LOGDET],
            c_ot: y[n + C_OT],
            c_run: y[n + C_RUN],
            c_hjb: y[n + C_HJB],
        }
    }
}

/// Time at which a right-hand side is evaluated. `step_mid` is the midpoint of
/// the enclosing integration step; piecewise-constant weights are selected
/// with it so that every stage of a step sees the same weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageTime {
    pub t: f64,
    pub step_mid: f64,
}

impl StageTime {
    pub fn at(t: f64) -> Self {
        StageTime { t, step_mid: t }
    }
}

/// Right-hand side of the augmented system and its vector-Jacobian product.
pub trait RhsHook: Sync {
    /// Dimension of `z`.
    fn dim(&self) -> usize;

    fn num_params(&self) -> usize;

    /// Writes `d/dt` of the full augmented vector (`dim() + NUM_ACC` entries).
    fn rhs(&self, time: StageTime, y: &[f64], dy: &mut [f64]) -> Result<()>;

    /// Accumulates the gradients of `<cot, rhs(y)>` with respect to `y` and the
    /// parameters.
    fn rhs_vjp(
        &self,
        time: StageTime,
        y: &[f64],
        cot: &[f64],
        grad_y: &mut [f64],
        grad_params: &mut [f64],
    ) -> Result<()>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Euler,
    #[default]
    Rk4,
}

impl Scheme {
    fn stages(self) -> usize {
        match self {
            Scheme::Euler => 1,
            Scheme::Rk4 => 4,
        }
    }
}

/// Stage inputs of one step, kept for the reverse sweep.
#[derive(Debug, Clone)]
struct StepCache {
    inputs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub scheme: Scheme,
    pub times: Vec<f64>,
    states: Vec<Vec<f64>>,
    cache: Vec<StepCache>,
    n: usize,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn step_size(&self) -> f64 {
        (self.times[self.steps()] - self.times[0]) / self.steps() as f64
    }

    /// Full augmented vector at grid point `i`.
    pub fn raw_state(&self, i: usize) -> &[f64] {
        &self.states[i]
    }

    pub fn state(&self, i: usize) -> AugmentedState {
        AugmentedState::from_slice(&self.states[i])
    }

    pub fn z(&self, i: usize) -> &[f64] {
        &self.states[i][..self.n]
    }

    pub fn last(&self) -> AugmentedState {
        self.state(self.steps())
    }

    pub fn last_z(&self) -> &[f64] {
        self.z(self.steps())
    }

    /// Points `(t, z(t))` on the grid.
    pub fn space_time_path(&self) -> Vec<Vec<f64>> {
        self.times
            .iter()
            .enumerate()
            .map(|(i, &t)| std::iter::once(t).chain(self.z(i).iter().copied()).collect())
            .collect()
    }

    pub fn has_stages(&self) -> bool {
        self.cache.len() == self.steps()
    }

    /// Frees the stage cache; the trajectory can no longer be backpropagated.
    pub fn drop_stages(&mut self) {
        self.cache.clear();
        self.cache.shrink_to_fit();
    }
}

fn step_scale(n: usize, h: f64) -> Vec<f64> {
    (0..n + NUM_ACC)
        .map(|i| if i <= n + LOGDET { h } else { h.abs() })
        .collect()
}

fn stage_layout(scheme: Scheme) -> (&'static [f64], &'static [f64]) {
    // (stage time fractions, final weights)
    match scheme {
        Scheme::Euler => (&[0.0], &[1.0]),
        Scheme::Rk4 => (&[0.0, 0.5, 0.5, 1.0], &[1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0]),
    }
}

/// Integrates from `t0` to `t1` (either direction) in `steps` uniform steps.
pub fn integrate<H: RhsHook + ?Sized>(
    hook: &H,
    init: &AugmentedState,
    t0: f64,
    t1: f64,
    steps: usize,
    scheme: Scheme,
) -> Result<Trajectory> {
    let n = hook.dim();
    if init.z.len() != n {
        return Err(Error::Dimension {
            what: "initial state",
            expected: n,
            got: init.z.len(),
        });
    }
    if steps == 0 {
        return Err(Error::InvalidArgument("step count must be at least 1".into()));
    }
    let h = (t1 - t0) / steps as f64;
    let scale = step_scale(n, h);
    let (fracs, weights) = stage_layout(scheme);
    let m = n + NUM_ACC;

    let y0 = init.to_vec();
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState { step: 0 });
    }
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut cache = Vec::with_capacity(steps);
    times.push(t0);
    states.push(y0);

    let mut k: Vec<Vec<f64>> = vec![vec![0.0; m]; scheme.stages()];
    for s in 0..steps {
        let t = t0 + s as f64 * h;
        let mid = t + 0.5 * h;
        let y = &states[s];
        let mut inputs = Vec::with_capacity(scheme.stages());
        for st in 0..scheme.stages() {
            // RK4 stage input: y + (frac * scale) . k_{st-1}
            let input: Vec<f64> = if st == 0 {
                y.clone()
            } else {
                (0..m)
                    .map(|i| y[i] + fracs[st] * scale[i] * k[st - 1][i])
                    .collect()
            };
            let time = StageTime {
                t: t + fracs[st] * h,
                step_mid: mid,
            };
            hook.rhs(time, &input, &mut k[st])?;
            inputs.push(input);
        }
        let next: Vec<f64> = (0..m)
            .map(|i| y[i] + scale[i] * (0..k.len()).map(|st| weights[st] * k[st][i]).sum::<f64>())
            .collect();
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { step: s + 1 });
        }
        times.push(if s + 1 == steps { t1 } else { t0 + (s + 1) as f64 * h });
        states.push(next);
        cache.push(StepCache { inputs });
    }
    Ok(Trajectory {
        scheme,
        times,
        states,
        cache,
        n,
    })
}

/// Maps `y` at `t = 1` back to `t = 0`.
pub fn invert_map<H: RhsHook + ?Sized>(
    hook: &H,
    y: &[f64],
    steps: usize,
    scheme: Scheme,
) -> Result<Vec<f64>> {
    let traj = integrate(hook, &AugmentedState::new(y.to_vec()), 1.0, 0.0, steps, scheme)?;
    Ok(traj.last_z().to_vec())
}

/// Reverse sweep through the recorded steps. Accumulates the parameter
/// gradient of `<terminal_cot, y_N>` into `grad_params` and returns the
/// gradient with respect to the initial augmented vector.
pub fn backprop_into<H: RhsHook + ?Sized>(
    hook: &H,
    traj: &Trajectory,
    terminal_cot: &[f64],
    grad_params: &mut [f64],
) -> Result<Vec<f64>> {
    let n = traj.n;
    let m = n + NUM_ACC;
    if terminal_cot.len() != m {
        return Err(Error::Dimension {
            what: "terminal cotangent",
            expected: m,
            got: terminal_cot.len(),
        });
    }
    if grad_params.len() != hook.num_params() {
        return Err(Error::Dimension {
            what: "parameter gradient",
            expected: hook.num_params(),
            got: grad_params.len(),
        });
    }
    let steps = traj.steps();
    let h = traj.step_size();
    let scale = step_scale(n, h);
    let (fracs, weights) = stage_layout(traj.scheme);
    let ns = traj.scheme.stages();

    let mut ybar = terminal_cot.to_vec();
    let mut kbar = vec![vec![0.0; m]; ns];
    let mut stage_grad = vec![0.0; m];
    for s in (0..steps).rev() {
        let cache = traj.cache.get(s).ok_or(Error::MissingStages(s))?;
        if cache.inputs.len() != ns {
            return Err(Error::MissingStages(s));
        }
        let t = traj.times[0] + s as f64 * h;
        let mid = t + 0.5 * h;
        for st in 0..ns {
            for i in 0..m {
                kbar[st][i] = weights[st] * scale[i] * ybar[i];
            }
        }
        for st in (0..ns).rev() {
            stage_grad.fill(0.0);
            let time = StageTime {
                t: t + fracs[st] * h,
                step_mid: mid,
            };
            hook.rhs_vjp(time, &cache.inputs[st], &kbar[st], &mut stage_grad, grad_params)?;
            for i in 0..m {
                ybar[i] += stage_grad[i];
            }
            if st > 0 {
                for i in 0..m {
                    kbar[st - 1][i] += fracs[st] * scale[i] * stage_grad[i];
                }
            }
        }
    }
    Ok(ybar)
}

/// Gradients `(d/dparams, d/dinit)` of `<terminal_cot, y_N>`.
pub fn backprop_trajectory<H: RhsHook + ?Sized>(
    hook: &H,
    traj: &Trajectory,
    terminal_cot: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut gp = vec![0.0; hook.num_params()];
    let gy = backprop_into(hook, traj, terminal_cot, &mut gp)?;
    Ok((gp, gy))
}

/// Neural velocity field as an integrator hook. Optionally tracks the
/// divergence in `logdet` and the kinetic energy `|f|^2 / 2` in `c_ot`.
#[derive(Debug, Clone, Copy)]
pub struct FieldHook<'a> {
    pub spec: &'a FieldSpec,
    pub theta: &'a [f64],
    pub trace: bool,
    pub transport: bool,
}

impl<'a> FieldHook<'a> {
    pub fn new(spec: &'a FieldSpec, theta: &'a [f64]) -> Self {
        FieldHook {
            spec,
            theta,
            trace: true,
            transport: true,
        }
    }

    pub fn features_only(spec: &'a FieldSpec, theta: &'a [f64]) -> Self {
        FieldHook {
            spec,
            theta,
            trace: false,
            transport: false,
        }
    }
}

impl RhsHook for FieldHook<'_> {
    fn dim(&self) -> usize {
        self.spec.n
    }

    fn num_params(&self) -> usize {
        self.spec.num_params()
    }

    fn rhs(&self, time: StageTime, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let n = self.spec.n;
        let (f, tr) = if self.trace {
            self.spec.eval_with_trace(self.theta, time.step_mid, &y[..n])?
        } else {
            (self.spec.eval(self.theta, time.step_mid, &y[..n])?, 0.0)
        };
        dy.fill(0.0);
        if self.transport {
            dy[n + C_OT] = 0.5 * f.iter().map(|v| v * v).sum::<f64>();
        }
        dy[..n].copy_from_slice(&f);
        dy[n + LOGDET] = tr;
        Ok(())
    }

    fn rhs_vjp(
        &self,
        time: StageTime,
        y: &[f64],
        cot: &[f64],
        grad_y: &mut [f64],
        grad_params: &mut [f64],
    ) -> Result<()> {
        let n = self.spec.n;
        let z = &y[..n];
        let mut v = cot[..n].to_vec();
        if self.transport && cot[n + C_OT] != 0.0 {
            let f = self.spec.eval(self.theta, time.step_mid, z)?;
            for (vi, fi) in v.iter_mut().zip(f) {
                *vi += cot[n + C_OT] * fi;
            }
        }
        let c = if self.trace { cot[n + LOGDET] } else { 0.0 };
        self.spec
            .vjp(self.theta, time.step_mid, z, &v, c, &mut grad_y[..n], grad_params)
    }
}

/// Linear field `dz/dt = A z` with `A` (row-major) as its parameters; the
/// divergence `tr A` goes to `logdet`. Closed-form reference problems use it.
#[derive(Debug, Clone)]
pub struct LinearField {
    pub n: usize,
    pub a: Vec<f64>,
}

impl LinearField {
    pub fn new(n: usize, a: Vec<f64>) -> Result<Self> {
        if a.len() != n * n {
            return Err(Error::Dimension {
                what: "linear field matrix",
                expected: n * n,
                got: a.len(),
            });
        }
        Ok(LinearField { n, a })
    }

    /// `[[0, 1], [-1, 0]]`: rotation with `z(t) = (cos t, -sin t)` from `(1, 0)`.
    pub fn rotation() -> Self {
        LinearField {
            n: 2,
            a: vec![0.0, 1.0, -1.0, 0.0],
        }
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let n = d.len();
        let mut a = vec![0.0; n * n];
        for (i, v) in d.iter().enumerate() {
            a[i * n + i] = *v;
        }
        LinearField { n, a }
    }
}

impl RhsHook for LinearField {
    fn dim(&self) -> usize {
        self.n
    }

    fn num_params(&self) -> usize {
        self.n * self.n
    }

    fn rhs(&self, _time: StageTime, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let n = self.n;
        dy.fill(0.0);
        for r in 0..n {
            dy[r] = (0..n).map(|c| self.a[r * n + c] * y[c]).sum();
        }
        dy[n + LOGDET] = (0..n).map(|i| self.a[i * n + i]).sum();
        Ok(())
    }

    fn rhs_vjp(
        &self,
        _time: StageTime,
        y: &[f64],
        cot: &[f64],
        grad_y: &mut [f64],
        grad_params: &mut [f64],
    ) -> Result<()> {
        let n = self.n;
        for r in 0..n {
            for c in 0..n {
                grad_y[c] += self.a[r * n + c] * cot[r];
                grad_params[r * n + c] += cot[r] * y[c];
            }
            grad_params[r * n + r] += cot[n + LOGDET];
        }
        Ok(())
    }
}
