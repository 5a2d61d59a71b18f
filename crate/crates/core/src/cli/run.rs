//! Subcommand execution and artifact layout.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::classify::{eval_accuracy, train_classifier, ClassifierModel, ClassifyConfig};
use crate::cli::config::{task_name, RunConfig, Task};
use crate::cli::export::{
    columns, export_trajectories, load_params, save_params, write_file, write_points, write_table, Cell,
    TrajectoryColumns,
};
use crate::cnf::{cnf_sample, eval_nll, straightness, train_cnf, CnfModel};
use crate::distributions::{gauss_logpdf, make_circles, sample_reference, LabeledDataset};
use crate::dynamics::{FieldSpec, ValueNetSpec};
use crate::error::{Error, Result};
use crate::mfg::{
    mean_abs_residual, mean_max_obstacle, mfg_evaluate, terminal_kl, train_mfg, trajectory_residuals, MfgModel,
    MfgScenario,
};
use crate::odeint::{invert_map, Trajectory, C_OT, C_RUN};
use crate::paramcore::{seeded_rng, ParamVector};
use crate::train::{median, EpochRecord};

pub const CONFIG_FILE: &str = "config.resolved.toml";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const MODEL_FILE: &str = "model.txt";

/// Offset separating evaluation streams from the training stream of a seed.
const EVAL_STREAM: u64 = 0x5eed_0001;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    Eval,
    Sample,
    Export,
}

#[derive(Debug, Clone)]
pub enum TrainedModel {
    Classify(ClassifierModel),
    Cnf(CnfModel),
    Mfg(MfgModel, MfgScenario),
}

impl TrainedModel {
    pub fn params(&self) -> &ParamVector {
        match self {
            TrainedModel::Classify(m) => &m.params,
            TrainedModel::Cnf(m) => &m.params,
            TrainedModel::Mfg(m, _) => &m.params,
        }
    }

    fn params_mut(&mut self) -> &mut ParamVector {
        match self {
            TrainedModel::Classify(m) => &mut m.params,
            TrainedModel::Cnf(m) => &mut m.params,
            TrainedModel::Mfg(m, _) => &mut m.params,
        }
    }
}

/// Zero-parameter model with the sizes given by `cfg`.
pub fn empty_model(cfg: &RunConfig) -> Result<TrainedModel> {
    Ok(match cfg.task {
        Task::Classify => {
            let c = &cfg.classify;
            TrainedModel::Classify(ClassifierModel::zeros(2, c.pad, c.width, c.intervals)?)
        }
        Task::Cnf => {
            let c = &cfg.cnf;
            TrainedModel::Cnf(CnfModel::zeros(FieldSpec::new(c.target.dim(), c.width, c.intervals)?, c.alpha)?)
        }
        Task::Mfg => {
            let m = cfg.mfg()?;
            let sc = m.scenario()?;
            TrainedModel::Mfg(MfgModel::zeros(ValueNetSpec::new(sc.dim(), m.width)?), sc)
        }
    })
}

pub fn load_model(cfg: &RunConfig, path: &Path) -> Result<TrainedModel> {
    let mut model = empty_model(cfg)?;
    let layout: Arc<_> = model.params().layout().clone();
    *model.params_mut() = load_params(path, task_name(cfg.task), &layout)?;
    Ok(model)
}

/// Training data for classification, regenerated from the seed exactly as
/// the trainer draws it.
pub fn classify_dataset(c: &ClassifyConfig, seed: u64) -> Result<LabeledDataset> {
    let d = &c.data;
    make_circles(d.count, d.inner, d.outer, d.noise, &mut seeded_rng(seed))
}

/// Runs `cmd` and returns the scalar summary it reports.
pub fn run(cmd: Command, cfg: &RunConfig, model_path: Option<&Path>) -> Result<BTreeMap<String, f64>> {
    cfg.validate()?;
    let out = &cfg.out;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let resolved = out.join(CONFIG_FILE);
    std::fs::write(&resolved, cfg.to_toml()?).map_err(|e| Error::io(&resolved, e))?;
    let model_path = model_path.map(Path::to_path_buf).unwrap_or_else(|| out.join(MODEL_FILE));
    match cmd {
        Command::Train => {
            let (model, history) = train(cfg)?;
            write_metrics(&out.join(METRICS_FILE), &history)?;
            save_params(&out.join(MODEL_FILE), task_name(cfg.task), model.params())?;
            write_exports(cfg, &model)?;
            let mut summary = BTreeMap::new();
            if let Some(last) = history.last() {
                summary.insert("loss".into(), last.loss);
                summary.extend(last.metrics.clone());
            }
            Ok(summary)
        }
        Command::Eval => {
            let summary = evaluate(cfg, &load_model(cfg, &model_path)?)?;
            let path = out.join("eval.json");
            let text = serde_json::to_string_pretty(&summary).expect("plain map serializes");
            std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
            Ok(summary)
        }
        Command::Sample => {
            let model = load_model(cfg, &model_path)?;
            sample(cfg, &model)?;
            Ok(BTreeMap::from([("samples".to_string(), cfg.samples as f64)]))
        }
        Command::Export => {
            let model = load_model(cfg, &model_path)?;
            write_exports(cfg, &model)?;
            Ok(BTreeMap::new())
        }
    }
}

pub fn train(cfg: &RunConfig) -> Result<(TrainedModel, Vec<EpochRecord>)> {
    Ok(match cfg.task {
        Task::Classify => {
            let run = train_classifier(&cfg.classify, &cfg.train, cfg.seed)?;
            (TrainedModel::Classify(run.model), run.history)
        }
        Task::Cnf => {
            let run = train_cnf(&cfg.cnf, &cfg.train, cfg.seed)?;
            (TrainedModel::Cnf(run.model), run.history)
        }
        Task::Mfg => {
            let run = train_mfg(cfg.mfg()?, &cfg.train, cfg.seed)?;
            (TrainedModel::Mfg(run.model, run.scenario), run.history)
        }
    })
}

/// One JSON object per line: `epoch`, `iteration`, `loss` and task metrics.
pub fn write_metrics(path: &Path, history: &[EpochRecord]) -> Result<()> {
    write_file(path, |w| {
        for rec in history {
            let line = serde_json::to_string(rec).map_err(std::io::Error::other)?;
            writeln!(w, "{line}")?;
        }
        Ok(())
    })
}

fn evaluate(cfg: &RunConfig, model: &TrainedModel) -> Result<BTreeMap<String, f64>> {
    let (steps, scheme) = (cfg.train.eval_steps, cfg.train.scheme);
    let mut rng = seeded_rng(cfg.seed ^ EVAL_STREAM);
    let mut s = BTreeMap::new();
    match model {
        TrainedModel::Classify(m) => {
            let data = classify_dataset(&cfg.classify, cfg.seed)?;
            s.insert("accuracy".into(), eval_accuracy(m, &data, steps, scheme)?);
            let (loss, _) = crate::classify::classify_loss(m, &data, steps, scheme)?;
            s.insert("loss".into(), loss);
        }
        TrainedModel::Cnf(m) => {
            let held_out = cfg.cnf.target.sample(cfg.samples, &mut rng);
            s.insert("nll".into(), eval_nll(m, &held_out, steps, scheme)?);
            let xs = sample_reference(m.field.n, cfg.samples, &mut rng);
            let errs = xs
                .par_iter()
                .map(|x| {
                    let y = m.generate(x, steps, scheme)?.last_z().to_vec();
                    let back = invert_map(&m.hook(), &y, steps, scheme)?;
                    Ok(back.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
                })
                .collect::<Result<Vec<f64>>>()?;
            s.insert("inverse_error_median".into(), median(&errs));
        }
        TrainedModel::Mfg(m, sc) => {
            let xs = sample_reference(sc.dim(), cfg.samples, &mut rng);
            let res = mfg_evaluate(m, sc, &xs, steps, scheme)?;
            s.insert("objective".into(), res.objective);
            s.insert("running".into(), res.running);
            s.insert("terminal".into(), res.terminal);
            s.insert("penalty".into(), res.penalty);
            s.insert("kl".into(), terminal_kl(&res, &sc.target));
            s.insert("hjb_abs_residual".into(), mean_abs_residual(m, sc, &xs, steps, scheme)?);
            let trajs = agent_trajectories(m, sc, &xs, cfg)?;
            s.insert("straightness".into(), straightness(&z_paths(&trajs)));
            s.insert("max_obstacle".into(), mean_max_obstacle(&sc.obstacle, &trajs));
        }
    }
    Ok(s)
}

fn sample(cfg: &RunConfig, model: &TrainedModel) -> Result<()> {
    let out = &cfg.out;
    let (steps, scheme) = (cfg.train.eval_steps, cfg.train.scheme);
    let mut rng = seeded_rng(cfg.seed ^ EVAL_STREAM);
    match model {
        TrainedModel::Classify(_) => Err(Error::InvalidArgument(
            "`sample` applies to the cnf and mfg tasks; use `export` for classification".into(),
        )),
        TrainedModel::Cnf(m) => {
            let trajs = cnf_sample(m, cfg.samples, &mut rng, steps, scheme)?;
            write_cnf_samples(out, &trajs)
        }
        TrainedModel::Mfg(m, sc) => {
            let xs = sample_reference(sc.dim(), cfg.samples, &mut rng);
            let trajs = agent_trajectories(m, sc, &xs, cfg)?;
            write_agents(out, m, sc, &xs, &trajs)
        }
    }
}

/// Task-specific CSV files for plotting.
pub fn write_exports(cfg: &RunConfig, model: &TrainedModel) -> Result<()> {
    let out = &cfg.out;
    let (steps, scheme) = (cfg.train.eval_steps, cfg.train.scheme);
    match model {
        TrainedModel::Classify(m) => {
            let data = classify_dataset(&cfg.classify, cfg.seed)?;
            write_points(&out.join("dataset.csv"), "x", &data.points, Some(&data.labels))?;
            let trajs = data
                .points
                .par_iter()
                .map(|x| m.features(x, steps, scheme))
                .collect::<Result<Vec<_>>>()?;
            let feats: Vec<Vec<f64>> = trajs.iter().map(|t| t.last_z().to_vec()).collect();
            write_points(&out.join("features.csv"), "z", &feats, Some(&data.labels))?;
            export_trajectories(&out.join("trajectories.csv"), &trajs, TrajectoryColumns::NONE)?;
            let g = cfg.grid;
            let axis: Vec<f64> = (0..g).map(|i| -3.0 + 6.0 * i as f64 / (g - 1) as f64).collect();
            let pts: Vec<[f64; 2]> = axis.iter().flat_map(|&a| axis.iter().map(move |&b| [b, a])).collect();
            let probs = pts
                .par_iter()
                .map(|p| m.probability(p, steps, scheme))
                .collect::<Result<Vec<f64>>>()?;
            let header = vec!["x1".into(), "x2".into(), "probability".into()];
            let rows = pts.iter().zip(&probs).map(|(p, &q)| vec![Cell::F(p[0]), Cell::F(p[1]), Cell::F(q)]);
            write_table(&out.join("grid.csv"), &header, rows)
        }
        TrainedModel::Cnf(m) => {
            let mut rng = seeded_rng(cfg.seed ^ EVAL_STREAM);
            let target = cfg.cnf.target.sample(cfg.samples, &mut rng);
            write_points(&out.join("dataset.csv"), "x", &target, None)?;
            let trajs = cnf_sample(m, cfg.samples, &mut rng, steps, scheme)?;
            write_cnf_samples(out, &trajs)
        }
        TrainedModel::Mfg(m, sc) => {
            let mut rng = seeded_rng(cfg.seed ^ EVAL_STREAM);
            let xs = sample_reference(sc.dim(), cfg.samples, &mut rng);
            let trajs = agent_trajectories(m, sc, &xs, cfg)?;
            write_agents(out, m, sc, &xs, &trajs)
        }
    }
}

fn write_cnf_samples(out: &Path, trajs: &[Trajectory]) -> Result<()> {
    let samples: Vec<Vec<f64>> = trajs.iter().map(|t| t.last_z().to_vec()).collect();
    write_points(&out.join("samples.csv"), "z", &samples, None)?;
    let cols = TrajectoryColumns {
        logdet: true,
        cost: Some(C_OT),
    };
    export_trajectories(&out.join("trajectories.csv"), trajs, cols)
}

fn agent_trajectories(m: &MfgModel, sc: &MfgScenario, xs: &[Vec<f64>], cfg: &RunConfig) -> Result<Vec<Trajectory>> {
    xs.par_iter()
        .map(|x| {
            let mut t = m.simulate(sc, x, cfg.train.eval_steps, cfg.train.scheme)?;
            t.drop_stages();
            Ok(t)
        })
        .collect()
}

fn z_paths(trajs: &[Trajectory]) -> Vec<Vec<Vec<f64>>> {
    trajs
        .iter()
        .map(|t| (0..=t.steps()).map(|i| t.z(i).to_vec()).collect())
        .collect()
}

/// `trajectories.csv` plus `agents.csv` with `traj_id,t,z1..zn,logrho,residual`.
fn write_agents(out: &Path, m: &MfgModel, sc: &MfgScenario, xs: &[Vec<f64>], trajs: &[Trajectory]) -> Result<()> {
    let cols = TrajectoryColumns {
        logdet: true,
        cost: Some(C_RUN),
    };
    export_trajectories(&out.join("trajectories.csv"), trajs, cols)?;
    let n = sc.dim();
    let mut header: Vec<String> = vec!["traj_id".into(), "t".into()];
    header.extend(columns("z", n));
    header.extend(["logrho".to_string(), "residual".to_string()]);
    let mut rows = Vec::new();
    for (id, (traj, x)) in trajs.iter().zip(xs).enumerate() {
        let log_rho0 = gauss_logpdf(x);
        let res = trajectory_residuals(m, sc, traj, log_rho0)?;
        for (i, r) in res.iter().enumerate() {
            let s = traj.state(i);
            let mut row = vec![Cell::I(id as u64), Cell::F(traj.times[i])];
            row.extend(s.z.iter().map(|&v| Cell::F(v)));
            row.push(Cell::F(log_rho0 - s.logdet));
            row.push(Cell::F(*r));
            rows.push(row);
        }
    }
    write_table(&out.join("agents.csv"), &header, rows)
}
