use std::path::Path;
use std::process::Command as Proc;

use ctdl_core::cli::{parse_config, run, Command, Overrides, RunConfig, Task, CONFIG_FILE, METRICS_FILE, MODEL_FILE};

fn small(task: Task, out: &Path, extra: &[&str]) -> RunConfig {
    let mut set: Vec<String> = [
        "train.iterations=6",
        "train.log_every=2",
        "train.batch=8",
        "train.train_steps=4",
        "train.eval_steps=4",
        "samples=5",
        "grid=4",
        "classify.data.count=24",
        "classify.width=4",
        "classify.intervals=2",
        "cnf.width=4",
        "cnf.intervals=2",
        "cnf.validation=8",
        "mfg.width=4",
        "mfg.validation=8",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    set.extend(extra.iter().map(|s| s.to_string()));
    if task != Task::Mfg {
        set.retain(|s| !s.starts_with("mfg."));
    }
    let ov = Overrides {
        task: Some(task),
        seed: Some(3),
        out: Some(out.to_path_buf()),
        set,
        ..Default::default()
    };
    parse_config(None, &ov).unwrap()
}

fn lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().map(String::from).collect()
}

#[test]
fn classify_run_writes_feature_and_grid_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(Task::Classify, dir.path(), &[]);
    run(Command::Train, &cfg, None).unwrap();
    let metrics = lines(&dir.path().join(METRICS_FILE));
    assert_eq!(metrics.len(), 3);
    let rec: serde_json::Value = serde_json::from_str(&metrics[0]).unwrap();
    for key in ["epoch", "iteration", "loss", "accuracy"] {
        assert!(rec.get(key).is_some(), "{key} missing in {rec}");
    }
    let feats = lines(&dir.path().join("features.csv"));
    assert_eq!(feats[0], "z1,z2,z3,label");
    assert_eq!(feats.len(), 25);
    let grid = lines(&dir.path().join("grid.csv"));
    assert_eq!(grid[0], "x1,x2,probability");
    assert_eq!(grid.len(), 1 + 16);
    let first: Vec<f64> = grid[1].split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(&first[..2], &[-3.0, -3.0]);
    assert!((0.0..=1.0).contains(&first[2]));
    assert_eq!(lines(&dir.path().join("dataset.csv"))[0], "x1,x2,label");
    let eval = run(Command::Eval, &cfg, None).unwrap();
    assert!((0.0..=1.0).contains(&eval["accuracy"]));
}

#[test]
fn cnf_run_writes_samples_and_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(Task::Cnf, dir.path(), &[]);
    run(Command::Train, &cfg, None).unwrap();
    let samples = lines(&dir.path().join("samples.csv"));
    assert_eq!(samples[0], "z1,z2");
    assert_eq!(samples.len(), 6);
    let traj = lines(&dir.path().join("trajectories.csv"));
    assert_eq!(traj[0], "traj_id,t,z1,z2,logdet,cost");
    assert_eq!(traj.len(), 1 + 5 * 5);
    for l in &traj[1..] {
        assert_eq!(l.split(',').count(), 6);
        assert!(l.split(',').all(|v| !v.is_empty()));
    }
    let eval = run(Command::Eval, &cfg, None).unwrap();
    assert!(eval["nll"].is_finite() && eval["inverse_error_median"] < 1e-3);
    std::fs::remove_file(dir.path().join("samples.csv")).unwrap();
    run(Command::Sample, &cfg, None).unwrap();
    assert_eq!(lines(&dir.path().join("samples.csv")).len(), 6);
}

#[test]
fn mfg_run_exports_agents() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(Task::Mfg, dir.path(), &["mfg.variant=crowd"]);
    run(Command::Train, &cfg, None).unwrap();
    let agents = lines(&dir.path().join("agents.csv"));
    assert_eq!(agents[0], "traj_id,t,z1,z2,logrho,residual");
    assert_eq!(agents.len(), 1 + 5 * 5);
    let rec: serde_json::Value = serde_json::from_str(&lines(&dir.path().join(METRICS_FILE))[0]).unwrap();
    for key in ["running", "terminal", "penalty", "hjb_abs_residual"] {
        assert!(rec.get(key).is_some(), "{key} missing");
    }
    let eval = run(Command::Eval, &cfg, None).unwrap();
    assert!(eval["objective"].is_finite());
}

#[test]
fn identical_seed_gives_identical_metrics() {
    for task in [Task::Classify, Task::Cnf, Task::Mfg] {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let extra: &[&str] = if task == Task::Mfg { &["mfg.variant=ot"] } else { &[] };
        run(Command::Train, &small(task, a.path(), extra), None).unwrap();
        run(Command::Train, &small(task, b.path(), extra), None).unwrap();
        for f in [METRICS_FILE, MODEL_FILE] {
            let (x, y) = (std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
            assert_eq!(x, y, "{task:?} {f}");
        }
    }
}

#[test]
fn echoed_config_reparses() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(Task::Mfg, dir.path(), &["mfg.variant=ot", "mfg.alpha=0.3"]);
    run(Command::Train, &cfg, None).unwrap();
    let again = parse_config(Some(&dir.path().join(CONFIG_FILE)), &Overrides::default()).unwrap();
    assert_eq!(again, cfg);
}

#[test]
fn export_matches_training_exports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(Task::Classify, dir.path(), &[]);
    run(Command::Train, &cfg, None).unwrap();
    let before = std::fs::read(dir.path().join("grid.csv")).unwrap();
    std::fs::remove_file(dir.path().join("grid.csv")).unwrap();
    run(Command::Export, &cfg, None).unwrap();
    assert_eq!(std::fs::read(dir.path().join("grid.csv")).unwrap(), before);
}

#[test]
fn loading_with_other_sizes_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(Task::Cnf, dir.path(), &[]);
    run(Command::Train, &cfg, None).unwrap();
    let wider = small(Task::Cnf, dir.path(), &["cnf.width=5"]);
    let err = run(Command::Eval, &wider, None).unwrap_err().to_string();
    assert!(err.contains("layout"), "{err}");
}

#[test]
fn binary_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.toml");
    std::fs::write(
        &cfg_path,
        "task = \"cnf\"\nseed = 1\n[train]\niterations = 3\nlog_every = 1\nbatch = 4\ntrain_steps = 3\neval_steps = 3\n[cnf]\nwidth = 3\nintervals = 1\nvalidation = 4\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let bin = env!("CARGO_BIN_EXE_ctdl");
    let status = Proc::new(bin)
        .args(["train", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&out)
        .args(["--set", "samples=3", "--set", "train.iterations=2"])
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    assert_eq!(lines(&out.join(METRICS_FILE)).len(), 2);
    let resolved = std::fs::read_to_string(out.join(CONFIG_FILE)).unwrap();
    assert!(resolved.contains("iterations = 2"), "{resolved}");

    let status = Proc::new(bin)
        .args(["eval-nll", "--config"])
        .arg(out.join(CONFIG_FILE))
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&status.stdout).unwrap();
    assert!(summary["nll"].as_f64().unwrap().is_finite());

    let status = Proc::new(bin).args(["train", "--task", "mfg", "--out"]).arg(&out).output().unwrap();
    assert!(!status.status.success());
    assert!(String::from_utf8_lossy(&status.stderr).contains("variant"));
}
