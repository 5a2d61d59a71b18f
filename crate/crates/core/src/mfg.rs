//! Potential mean field games solved along agent trajectories.
//!
//! A scalar value network `Phi(t, x)` defines the control through the feedback
//! form `f = -grad_p H(x, grad Phi)`. For the quadratic running costs used here
//! `H(x, p) = |p|^2 / (2 alpha) - Q(x)`, so `f = -grad Phi / alpha` and its
//! divergence is `-lap Phi / alpha`. Agents carry their log-density, running
//! cost and squared HJB residual as accumulators.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{gauss_logpdf, sample_reference, GaussianMixture, ObstacleCost};
use crate::dynamics::{ValueCotangent, ValueNetSpec};
use crate::error::{Error, Result};
use crate::odeint::{
    backprop_into, integrate, AugmentedState, RhsHook, Scheme, StageTime, Trajectory, C_HJB, C_RUN, LOGDET,
    NUM_ACC,
};
use crate::paramcore::{adam_step, seeded_rng, OptState, ParamVector, Rng};
use crate::train::{check_loss, mean, EpochRecord, TrainOptions};

/// Lower bound applied to transported log-densities before they enter a cost.
pub const LOG_RHO_FLOOR: f64 = -40.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Relaxed dynamic optimal transport: `L = alpha/2 |f|^2`, `G = KL(rho, rho_Y)`.
    Ot,
    /// Crowd motion: `L = alpha/2 |f|^2 + Q(x)`, `F = lambda int rho log rho`, plus
    /// the same KL terminal cost.
    Crowd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfgScenario {
    pub variant: Variant,
    pub alpha: f64,
    /// HJB penalty weight.
    pub beta: f64,
    pub target: GaussianMixture,
    /// Used by the crowd variant only.
    pub obstacle: ObstacleCost,
    /// Entropy weight of the crowd variant.
    pub entropy_weight: f64,
    /// Weight of the KL terminal cost.
    pub terminal_weight: f64,
}

impl MfgScenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidArgument(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.beta >= 0.0 && self.entropy_weight >= 0.0 && self.terminal_weight >= 0.0) {
            return Err(Error::InvalidArgument("beta and cost weights must be nonnegative".into()));
        }
        if self.obstacle.center.len() != self.target.dim() {
            return Err(Error::Dimension {
                what: "obstacle center",
                expected: self.target.dim(),
                got: self.obstacle.center.len(),
            });
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    fn obstacle(&self) -> Option<&ObstacleCost> {
        match self.variant {
            Variant::Ot => None,
            Variant::Crowd => Some(&self.obstacle),
        }
    }

    /// Obstacle cost `Q(x)`; zero for optimal transport.
    pub fn state_cost(&self, x: &[f64]) -> f64 {
        self.obstacle().map_or(0.0, |o| o.eval(x))
    }

    /// `F(x, rho)` and its derivative with respect to `log rho`.
    fn interaction(&self, log_rho: f64) -> (f64, f64) {
        match self.variant {
            Variant::Ot => (0.0, 0.0),
            Variant::Crowd => {
                let (lr, d) = clamp_log_rho(log_rho);
                (self.entropy_weight * (lr + 1.0), self.entropy_weight * d)
            }
        }
    }

    /// Terminal cost `G(x, rho)` with derivatives in `x` and `log rho`.
    fn terminal(&self, x: &[f64], log_rho: f64) -> (f64, Vec<f64>, f64) {
        let w = self.terminal_weight;
        let (lr, d) = clamp_log_rho(log_rho);
        let g = w * (lr - self.target.logpdf(x) + 1.0);
        let gx = self.target.grad_logpdf(x).into_iter().map(|v| -w * v).collect();
        (g, gx, w * d)
    }
}

fn clamp_log_rho(v: f64) -> (f64, f64) {
    if v > LOG_RHO_FLOOR {
        (v, 1.0)
    } else {
        (LOG_RHO_FLOOR, 0.0)
    }
}

/// `H(x, p) = sup_f { -p.f - L(x, f) }` for the quadratic running costs.
pub fn hamiltonian(variant: Variant, alpha: f64, obstacle: Option<&ObstacleCost>, x: &[f64], p: &[f64]) -> f64 {
    let kinetic = p.iter().map(|v| v * v).sum::<f64>() / (2.0 * alpha);
    match (variant, obstacle) {
        (Variant::Crowd, Some(o)) => kinetic - o.eval(x),
        _ => kinetic,
    }
}

/// Running cost `L(x, f)`.
pub fn running_cost(variant: Variant, alpha: f64, obstacle: Option<&ObstacleCost>, x: &[f64], f: &[f64]) -> f64 {
    let kinetic = 0.5 * alpha * f.iter().map(|v| v * v).sum::<f64>();
    match (variant, obstacle) {
        (Variant::Crowd, Some(o)) => kinetic + o.eval(x),
        _ => kinetic,
    }
}

/// `-grad_p H(x, p)`; independent of `x` for the costs above.
pub fn feedback_from_costate(alpha: f64, p: &[f64]) -> Vec<f64> {
    p.iter().map(|v| -v / alpha).collect()
}

/// Optimal control `f* = -grad Phi / alpha` and its divergence `-lap Phi / alpha`.
pub fn feedback_field(value: &ValueNetSpec, theta: &[f64], alpha: f64, t: f64, x: &[f64]) -> Result<(Vec<f64>, f64)> {
    let v = value.eval(theta, t, x)?;
    Ok((feedback_from_costate(alpha, &v.grad), -v.lap / alpha))
}

/// `-d_t Phi + H(x, grad Phi) - F(x, rho)`.
pub fn hjb_residual(
    value: &ValueNetSpec,
    theta: &[f64],
    scenario: &MfgScenario,
    t: f64,
    x: &[f64],
    log_rho: f64,
) -> Result<f64> {
    let v = value.eval(theta, t, x)?;
    let h = hamiltonian(scenario.variant, scenario.alpha, scenario.obstacle(), x, &v.grad);
    Ok(-v.dt + h - scenario.interaction(log_rho).0)
}

/// Agent dynamics under the feedback control, for one agent whose initial
/// log-density is `log_rho0`. `logdet` holds the accumulated divergence, so
/// `log rho(t) = log_rho0 - logdet(t)`.
pub struct MfgHook<'a> {
    pub value: &'a ValueNetSpec,
    pub theta: &'a [f64],
    pub scenario: &'a MfgScenario,
    pub log_rho0: f64,
}

struct Pointwise {
    v: crate::dynamics::ValueDerivs,
    residual: f64,
    dfdl: f64,
}

impl MfgHook<'_> {
    fn pointwise(&self, t: f64, y: &[f64]) -> Result<(Pointwise, f64, f64)> {
        let n = self.value.n;
        let z = &y[..n];
        let v = self.value.eval(self.theta, t, z)?;
        let sc = self.scenario;
        let kinetic = v.grad.iter().map(|g| g * g).sum::<f64>() / (2.0 * sc.alpha);
        let q = sc.state_cost(z);
        let (f, dfdl) = sc.interaction(self.log_rho0 - y[n + LOGDET]);
        let residual = -v.dt + kinetic - q - f;
        let run = kinetic + q + f;
        Ok((Pointwise { v, residual, dfdl }, run, q))
    }
}

impl RhsHook for MfgHook<'_> {
    fn dim(&self) -> usize {
        self.value.n
    }

    fn num_params(&self) -> usize {
        self.value.num_params()
    }

    fn rhs(&self, time: StageTime, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let n = self.value.n;
        let alpha = self.scenario.alpha;
        let (pw, run, _) = self.pointwise(time.t, y)?;
        dy.fill(0.0);
        for i in 0..n {
            dy[i] = -pw.v.grad[i] / alpha;
        }
        dy[n + LOGDET] = -pw.v.lap / alpha;
        dy[n + C_RUN] = run;
        dy[n + C_HJB] = pw.residual * pw.residual;
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
        let n = self.value.n;
        let alpha = self.scenario.alpha;
        let (pw, _, _) = self.pointwise(time.t, y)?;
        let (vrun, vres) = (cot[n + C_RUN], 2.0 * pw.residual * cot[n + C_HJB]);
        let vc = ValueCotangent {
            phi: 0.0,
            dt: -vres,
            grad: (0..n)
                .map(|i| (-cot[i] + (vrun + vres) * pw.v.grad[i]) / alpha)
                .collect(),
            lap: -cot[n + LOGDET] / alpha,
        };
        let mut gt = 0.0;
        self.value
            .vjp(self.theta, time.t, &y[..n], &vc, &mut grad_y[..n], &mut gt, grad_params)?;
        // obstacle enters the running cost with + and the residual with -
        if let Some(o) = self.scenario.obstacle() {
            let w = vrun - vres;
            for (g, q) in grad_y[..n].iter_mut().zip(o.grad(&y[..n])) {
                *g += w * q;
            }
        }
        // F depends on log rho = log_rho0 - logdet
        grad_y[n + LOGDET] -= (vrun - vres) * pw.dfdl;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfgModel {
    pub value: ValueNetSpec,
    pub params: ParamVector,
}

impl MfgModel {
    pub fn zeros(value: ValueNetSpec) -> Self {
        MfgModel {
            params: ParamVector::zeros(Arc::new(value.layout())),
            value,
        }
    }

    pub fn init(value: ValueNetSpec, rng: &mut Rng) -> Self {
        MfgModel {
            params: ParamVector::init_uniform(Arc::new(value.layout()), rng),
            value,
        }
    }

    pub fn hook<'a>(&'a self, scenario: &'a MfgScenario, x0: &[f64]) -> MfgHook<'a> {
        MfgHook {
            value: &self.value,
            theta: self.params.data(),
            scenario,
            log_rho0: gauss_logpdf(x0),
        }
    }

    /// Agent trajectory from `x0` over `[0, 1]`.
    pub fn simulate(&self, scenario: &MfgScenario, x0: &[f64], steps: usize, scheme: Scheme) -> Result<Trajectory> {
        integrate(&self.hook(scenario, x0), &AugmentedState::new(x0.to_vec()), 0.0, 1.0, steps, scheme)
    }
}

/// Per-agent outcomes and the objective decomposition of one batch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MfgBatchResult {
    pub terminal_states: Vec<Vec<f64>>,
    pub terminal_log_rho: Vec<f64>,
    pub running_costs: Vec<f64>,
    /// Per agent: integrated squared residual plus squared terminal mismatch.
    pub penalties: Vec<f64>,
    pub running: f64,
    pub terminal: f64,
    /// Mean penalty before multiplication by beta.
    pub penalty: f64,
    pub beta: f64,
    pub objective: f64,
}

struct AgentOutcome {
    z1: Vec<f64>,
    log_rho1: f64,
    run: f64,
    terminal: f64,
    penalty: f64,
}

fn agent(
    model: &MfgModel,
    scenario: &MfgScenario,
    x0: &[f64],
    steps: usize,
    scheme: Scheme,
    scale: f64,
    grad: Option<&mut [f64]>,
) -> Result<AgentOutcome> {
    let n = model.value.n;
    let hook = model.hook(scenario, x0);
    let traj = integrate(&hook, &AugmentedState::new(x0.to_vec()), 0.0, 1.0, steps, scheme)?;
    let end = traj.last();
    let log_rho1 = hook.log_rho0 - end.logdet;
    let (g, gx, gl) = scenario.terminal(&end.z, log_rho1);
    let phi1 = model.value.eval(model.params.data(), 1.0, &end.z)?.phi;
    let mismatch = phi1 - g;
    let out = AgentOutcome {
        z1: end.z.clone(),
        log_rho1,
        run: end.c_run,
        terminal: g,
        penalty: end.c_hjb + mismatch * mismatch,
    };
    if let Some(grad) = grad {
        let beta = scenario.beta;
        let dg = (1.0 - 2.0 * beta * mismatch) * scale;
        let mut cot = vec![0.0; n + NUM_ACC];
        let mut vc = ValueCotangent::zeros(n);
        vc.phi = 2.0 * beta * mismatch * scale;
        let mut gt = 0.0;
        model
            .value
            .vjp(model.params.data(), 1.0, &end.z, &vc, &mut cot[..n], &mut gt, grad)?;
        for i in 0..n {
            cot[i] += dg * gx[i];
        }
        cot[n + LOGDET] = -dg * gl;
        cot[n + C_RUN] = scale;
        cot[n + C_HJB] = beta * scale;
        backprop_into(&hook, &traj, &cot, grad)?;
    }
    Ok(out)
}

/// Mean of `running + terminal + beta * penalty` over agents started at `xs`,
/// with its exact parameter gradient.
pub fn mfg_objective(
    model: &MfgModel,
    scenario: &MfgScenario,
    xs: &[Vec<f64>],
    steps: usize,
    scheme: Scheme,
) -> Result<(f64, ParamVector, MfgBatchResult)> {
    scenario.validate()?;
    if xs.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let scale = 1.0 / xs.len() as f64;
    let np = model.params.len();
    let outcomes: Vec<Result<(AgentOutcome, Vec<f64>)>> = xs
        .par_iter()
        .map(|x| {
            let mut g = vec![0.0; np];
            let o = agent(model, scenario, x, steps, scheme, scale, Some(&mut g))?;
            Ok((o, g))
        })
        .collect();
    let mut grad = vec![0.0; np];
    let mut agents = Vec::with_capacity(xs.len());
    for r in outcomes {
        let (o, g) = r?;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
        agents.push(o);
    }
    let result = summarize(agents, scenario.beta);
    if !result.objective.is_finite() {
        return Err(Error::NonFiniteLoss("mean field game objective".into()));
    }
    Ok((result.objective, model.params.with_data(grad)?, result))
}

/// Objective decomposition without the gradient.
pub fn mfg_evaluate(
    model: &MfgModel,
    scenario: &MfgScenario,
    xs: &[Vec<f64>],
    steps: usize,
    scheme: Scheme,
) -> Result<MfgBatchResult> {
    let agents = xs
        .par_iter()
        .map(|x| agent(model, scenario, x, steps, scheme, 1.0, None))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(agents, scenario.beta))
}

fn summarize(agents: Vec<AgentOutcome>, beta: f64) -> MfgBatchResult {
    let running_costs: Vec<f64> = agents.iter().map(|a| a.run).collect();
    let penalties: Vec<f64> = agents.iter().map(|a| a.penalty).collect();
    let running = mean(&running_costs);
    let terminal = mean(&agents.iter().map(|a| a.terminal).collect::<Vec<_>>());
    let penalty = mean(&penalties);
    MfgBatchResult {
        terminal_log_rho: agents.iter().map(|a| a.log_rho1).collect(),
        terminal_states: agents.into_iter().map(|a| a.z1).collect(),
        running_costs,
        penalties,
        running,
        terminal,
        penalty,
        beta,
        objective: running + terminal + beta * penalty,
    }
}

/// Monte-Carlo estimate of `KL(rho(1), rho_Y)` from agents' terminal states
/// and their transported log-densities.
pub fn terminal_kl(result: &MfgBatchResult, target: &GaussianMixture) -> f64 {
    mean(
        &result
            .terminal_states
            .iter()
            .zip(&result.terminal_log_rho)
            .map(|(z, lr)| lr - target.logpdf(z))
            .collect::<Vec<_>>(),
    )
}

/// HJB residuals at every grid point of an agent trajectory.
pub fn trajectory_residuals(
    model: &MfgModel,
    scenario: &MfgScenario,
    traj: &Trajectory,
    log_rho0: f64,
) -> Result<Vec<f64>> {
    (0..=traj.steps())
        .map(|i| {
            let s = traj.state(i);
            hjb_residual(&model.value, model.params.data(), scenario, traj.times[i], &s.z, log_rho0 - s.logdet)
        })
        .collect()
}

/// Mean `|residual|` over agents and grid points.
pub fn mean_abs_residual(
    model: &MfgModel,
    scenario: &MfgScenario,
    xs: &[Vec<f64>],
    steps: usize,
    scheme: Scheme,
) -> Result<f64> {
    let per_agent = xs
        .par_iter()
        .map(|x| {
            let traj = model.simulate(scenario, x, steps, scheme)?;
            let r = trajectory_residuals(model, scenario, &traj, gauss_logpdf(x))?;
            Ok(mean(&r.iter().map(|v| v.abs()).collect::<Vec<_>>()))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean(&per_agent))
}

/// Mean over agents of the largest obstacle cost met along the trajectory.
pub fn mean_max_obstacle(obstacle: &ObstacleCost, trajs: &[Trajectory]) -> f64 {
    mean(
        &trajs
            .iter()
            .map(|t| (0..=t.steps()).map(|i| obstacle.eval(t.z(i))).fold(0.0, f64::max))
            .collect::<Vec<_>>(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MfgConfig {
    /// No default: `ot` or `crowd` must be chosen explicitly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<Variant>,
    #[serde(default = "MfgConfig::default_alpha")]
    pub alpha: f64,
    #[serde(default = "MfgConfig::default_beta")]
    pub beta: f64,
    #[serde(default = "MfgConfig::default_entropy")]
    pub entropy_weight: f64,
    #[serde(default = "MfgConfig::default_terminal")]
    pub terminal_weight: f64,
    #[serde(default = "MfgConfig::default_width")]
    pub width: usize,
    #[serde(default = "MfgConfig::default_target")]
    pub target: GaussianMixture,
    #[serde(default = "MfgConfig::default_obstacle")]
    pub obstacle: ObstacleCost,
    #[serde(default = "MfgConfig::default_validation")]
    pub validation: usize,
}

impl MfgConfig {
    fn default_alpha() -> f64 {
        0.05
    }
    fn default_beta() -> f64 {
        1.0
    }
    fn default_entropy() -> f64 {
        0.1
    }
    fn default_terminal() -> f64 {
        1.0
    }
    fn default_width() -> usize {
        16
    }
    fn default_target() -> GaussianMixture {
        GaussianMixture::equal(vec![vec![0.0, 4.0]], 1.0).expect("valid mixture")
    }
    fn default_obstacle() -> ObstacleCost {
        ObstacleCost::new(vec![0.0, 2.0], 50.0, 0.5).expect("valid obstacle")
    }
    fn default_validation() -> usize {
        512
    }

    pub fn with_variant(variant: Variant) -> Self {
        MfgConfig {
            variant: Some(variant),
            alpha: Self::default_alpha(),
            beta: Self::default_beta(),
            entropy_weight: Self::default_entropy(),
            terminal_weight: Self::default_terminal(),
            width: Self::default_width(),
            target: Self::default_target(),
            obstacle: Self::default_obstacle(),
            validation: Self::default_validation(),
        }
    }

    pub fn scenario(&self) -> Result<MfgScenario> {
        let variant = self
            .variant
            .ok_or_else(|| Error::Config("missing required key `mfg.variant` (ot or crowd)".into()))?;
        let sc = MfgScenario {
            variant,
            alpha: self.alpha,
            beta: self.beta,
            target: self.target.clone(),
            obstacle: self.obstacle.clone(),
            entropy_weight: self.entropy_weight,
            terminal_weight: self.terminal_weight,
        };
        sc.validate()?;
        Ok(sc)
    }
}

#[derive(Debug, Clone)]
pub struct MfgRun {
    pub model: MfgModel,
    pub scenario: MfgScenario,
    pub history: Vec<EpochRecord>,
    /// Mean |HJB residual| on the validation agents before training.
    pub initial_residual: f64,
}

/// Trains the value network on fresh reference samples each iteration.
pub fn train_mfg(cfg: &MfgConfig, opts: &TrainOptions, seed: u64) -> Result<MfgRun> {
    opts.validate()?;
    let scenario = cfg.scenario()?;
    let mut rng = seeded_rng(seed);
    let n = scenario.dim();
    let mut model = MfgModel::init(ValueNetSpec::new(n, cfg.width)?, &mut rng);
    let validation = sample_reference(n, cfg.validation.max(1), &mut rng);
    let initial_residual = mean_abs_residual(&model, &scenario, &validation, opts.train_steps, opts.scheme)?;
    let mut state = OptState::new(opts.adam, model.params.len());
    let mut history = Vec::new();
    for it in 0..opts.iterations {
        let xs = sample_reference(n, opts.batch, &mut rng);
        let (obj, grad, _) =
            mfg_objective(&model, &scenario, &xs, opts.train_steps, opts.scheme).map_err(|e| Error::Diverged {
                iteration: it,
                reason: e.to_string(),
            })?;
        check_loss(obj, it)?;
        state.config.lr = opts.lr_at(it);
        adam_step(&mut model.params, &grad, &mut state)?;
        if (it + 1) % opts.log_every == 0 || it + 1 == opts.iterations {
            let res = mfg_evaluate(&model, &scenario, &validation, opts.train_steps, opts.scheme)?;
            let r = mean_abs_residual(&model, &scenario, &validation, opts.train_steps, opts.scheme)?;
            history.push(EpochRecord {
                epoch: history.len(),
                iteration: it + 1,
                loss: res.objective,
                metrics: BTreeMap::from([
                    ("running".to_string(), res.running),
                    ("terminal".to_string(), res.terminal),
                    ("penalty".to_string(), res.penalty),
                    ("hjb_abs_residual".to_string(), r),
                    ("kl".to_string(), terminal_kl(&res, &scenario.target)),
                ]),
            });
        }
    }
    Ok(MfgRun {
        model,
        scenario,
        history,
        initial_residual,
    })
}
