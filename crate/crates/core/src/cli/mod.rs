//! The `ctdl` command line: `train`, `eval`, `sample` and `export`.

mod config;
mod export;
mod run;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{parse_config, parse_config_text, task_name, Overrides, RunConfig, Task};
pub use export::{
    columns, export_trajectories, load_params, num, params_from_str, params_to_string, save_params,
    trajectory_header, write_points, write_trajectories, TrajectoryColumns,
};
pub use run::{
    classify_dataset, empty_model, load_model, run, train, write_exports, write_metrics, Command, TrainedModel,
    CONFIG_FILE, METRICS_FILE, MODEL_FILE,
};

use crate::mfg::Variant;

#[derive(Debug, Parser)]
#[command(name = "ctdl", version, about = "Neural ODE classification, normalizing flows and mean field games")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Train a model and write metrics, parameters and plot exports.
    Train(Common),
    /// Score a saved model (accuracy, held-out NLL, objective parts).
    #[command(alias = "eval-nll")]
    Eval(Common),
    /// Draw samples or agent trajectories from a saved model.
    Sample(Common),
    /// Rewrite the CSV exports of a saved model.
    Export(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub task: Option<Task>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Mean field game variant.
    #[arg(long, value_enum)]
    pub variant: Option<Variant>,
    /// Parameter file for eval/sample/export (default: <out>/model.txt).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Dotted override such as `train.iterations=200`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl Sub {
    fn split(&self) -> (Command, &Common) {
        match self {
            Sub::Train(c) => (Command::Train, c),
            Sub::Eval(c) => (Command::Eval, c),
            Sub::Sample(c) => (Command::Sample, c),
            Sub::Export(c) => (Command::Export, c),
        }
    }
}

/// Parses `args`, runs the command and prints its summary as JSON.
pub fn main_with_args<I, T>(args: I) -> crate::Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).unwrap_or_else(|e| e.exit());
    let (cmd, c) = cli.command.split();
    let ov = Overrides {
        task: c.task,
        seed: c.seed,
        out: c.out.clone(),
        variant: c.variant,
        set: c.set.clone(),
    };
    let cfg = parse_config(c.config.as_deref(), &ov)?;
    let summary = run(cmd, &cfg, c.model.as_deref())?;
    println!("{}", serde_json::to_string(&summary).expect("plain map serializes"));
    Ok(())
}
