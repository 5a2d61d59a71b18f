//! Run configuration: TOML file, command-line flags and dotted overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classify::ClassifyConfig;
use crate::cnf::CnfConfig;
use crate::error::{Error, Result};
use crate::mfg::{MfgConfig, Variant};
use crate::train::TrainOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classify,
    Cnf,
    Mfg,
}

/// Everything needed to reproduce a run.
///
/// Only `task` is required, plus `mfg.variant` for the mean field game. Unknown
/// keys are rejected at every level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Number of samples or agents written by `sample` and by training exports.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Points per axis of the classification prediction grid.
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default)]
    pub train: TrainOptions,
    #[serde(default)]
    pub classify: ClassifyConfig,
    #[serde(default)]
    pub cnf: CnfConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mfg: Option<MfgConfig>,
}

fn default_seed() -> u64 {
    0
}
fn default_out() -> PathBuf {
    PathBuf::from("runs/latest")
}
fn default_samples() -> usize {
    256
}
fn default_grid() -> usize {
    61
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub task: Option<Task>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub variant: Option<Variant>,
    /// `key.path=value` assignments, applied last.
    pub set: Vec<String>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.samples == 0 {
            return Err(Error::Config("`samples` must be at least 1".into()));
        }
        if self.grid < 2 {
            return Err(Error::Config("`grid` must be at least 2".into()));
        }
        match self.task {
            Task::Classify => {
                let c = &self.classify;
                if c.width == 0 || c.intervals == 0 || c.data.count < 2 {
                    return Err(Error::Config(
                        "`classify.width`, `classify.intervals` must be positive and `classify.data.count` at least 2"
                            .into(),
                    ));
                }
            }
            Task::Cnf => {
                let c = &self.cnf;
                if !(c.alpha >= 0.0 && c.alpha.is_finite()) {
                    return Err(Error::Config(format!("`cnf.alpha` must be finite and >= 0, got {}", c.alpha)));
                }
                if c.width == 0 || c.intervals == 0 || c.validation == 0 {
                    return Err(Error::Config(
                        "`cnf.width`, `cnf.intervals` and `cnf.validation` must be positive".into(),
                    ));
                }
            }
            Task::Mfg => {
                let m = self
                    .mfg
                    .as_ref()
                    .ok_or_else(|| Error::Config("task `mfg` requires an `[mfg]` block with `variant`".into()))?;
                if m.width == 0 {
                    return Err(Error::Config("`mfg.width` must be positive".into()));
                }
                m.scenario()?;
            }
        }
        Ok(())
    }

    pub fn mfg(&self) -> Result<&MfgConfig> {
        self.mfg
            .as_ref()
            .ok_or_else(|| Error::Config("task `mfg` requires an `[mfg]` block with `variant`".into()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        parse_config_text(text, &Overrides::default())
    }
}

/// Reads `path` (if any), applies `ov` and validates.
pub fn parse_config(path: Option<&Path>, ov: &Overrides) -> Result<RunConfig> {
    let table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", p.display(), e.message())))?
        }
        None => toml::Table::new(),
    };
    parse_table(table, ov)
}

/// Like [`parse_config`] for configuration text already in memory.
pub fn parse_config_text(text: &str, ov: &Overrides) -> Result<RunConfig> {
    parse_table(toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?, ov)
}

fn parse_table(mut table: toml::Table, ov: &Overrides) -> Result<RunConfig> {
    if let Some(task) = ov.task {
        table.insert("task".into(), toml::Value::String(task_name(task).into()));
    }
    if let Some(seed) = ov.seed {
        let seed = i64::try_from(seed).map_err(|_| Error::Config(format!("seed {seed} too large")))?;
        table.insert("seed".into(), toml::Value::Integer(seed));
    }
    if let Some(out) = &ov.out {
        table.insert("out".into(), toml::Value::String(out.display().to_string()));
    }
    if let Some(v) = ov.variant {
        let name = match v {
            Variant::Ot => "ot",
            Variant::Crowd => "crowd",
        };
        set_path(&mut table, "mfg.variant", toml::Value::String(name.into()))?;
    }
    for assignment in &ov.set {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key.path=value")))?;
        set_path(&mut table, key.trim(), parse_value(value.trim()))?;
    }
    if !table.contains_key("task") {
        return Err(Error::Config("missing required key `task` (classify, cnf or mfg)".into()));
    }
    let cfg: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
    if cfg.task == Task::Mfg {
        match &cfg.mfg {
            None => return Err(Error::Config("missing required key `mfg.variant` (ot or crowd)".into())),
            Some(m) if m.variant.is_none() => {
                return Err(Error::Config("missing required key `mfg.variant` (ot or crowd)".into()))
            }
            _ => {}
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn task_name(task: Task) -> &'static str {
    match task {
        Task::Classify => "classify",
        Task::Cnf => "cnf",
        Task::Mfg => "mfg",
    }
}

/// Parses the right-hand side of an override as a TOML value, falling back to
/// a bare string (so `mfg.variant=crowd` works without quotes).
fn parse_value(text: &str) -> toml::Value {
    let doc = format!("v = {text}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(text.to_string()),
    }
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key `{key}`")));
    }
    let mut cur = table;
    for (i, part) in parts[..parts.len() - 1].iter().enumerate() {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| {
            Error::Config(format!("override `{key}`: `{}` is not a section", parts[..=i].join(".")))
        })?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, ov: &Overrides) -> Result<RunConfig> {
        parse_table(toml::from_str(text).unwrap(), ov)
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse("task = \"classify\"\nseed = 1", &Overrides::default()).unwrap();
        assert_eq!(cfg.seed, 1);
        assert_eq!(cfg.train, TrainOptions::default());
        assert_eq!(cfg.classify, ClassifyConfig::default());
    }

    #[test]
    fn mfg_without_variant_names_it() {
        for text in ["task = \"mfg\"", "task = \"mfg\"\n[mfg]\nalpha = 0.5"] {
            let err = parse(text, &Overrides::default()).unwrap_err().to_string();
            assert!(err.contains("variant"), "{err}");
        }
    }

    #[test]
    fn inline_overrides_beat_file() {
        let ov = Overrides {
            seed: Some(9),
            set: vec!["train.iterations=5".into(), "mfg.variant=crowd".into()],
            ..Default::default()
        };
        let cfg = parse("task = \"mfg\"\nseed = 1\n[train]\niterations = 100\n[mfg]\nvariant = \"ot\"", &ov).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.train.iterations, 5);
        assert_eq!(cfg.mfg.unwrap().variant, Some(Variant::Crowd));
    }

    #[test]
    fn unknown_and_mistyped_keys_are_named() {
        let err = parse("task = \"cnf\"\n[cnf]\nalpah = 1.0", &Overrides::default()).unwrap_err().to_string();
        assert!(err.contains("alpah"), "{err}");
        let err = parse("task = \"cnf\"\n[train]\nbatch = \"big\"", &Overrides::default())
            .unwrap_err()
            .to_string();
        assert!(err.contains("invalid type"), "{err}");
        let err = parse("seed = 1", &Overrides::default()).unwrap_err().to_string();
        assert!(err.contains("task"), "{err}");
    }

    #[test]
    fn resolved_config_round_trips() {
        for text in ["task = \"classify\"", "task = \"cnf\"", "task = \"mfg\"\n[mfg]\nvariant = \"crowd\""] {
            let cfg = parse(text, &Overrides::default()).unwrap();
            let echoed = cfg.to_toml().unwrap();
            assert_eq!(RunConfig::from_toml(&echoed).unwrap(), cfg, "{echoed}");
        }
    }

    #[test]
    fn bad_override_syntax() {
        let ov = Overrides {
            set: vec!["train.iterations".into()],
            ..Default::default()
        };
        assert!(parse("task = \"cnf\"", &ov).is_err());
        let ov = Overrides {
            set: vec!["seed.x=1".into()],
            ..Default::default()
        };
        let err = parse("task = \"cnf\"\nseed = 2", &ov).unwrap_err().to_string();
        assert!(err.contains("seed"), "{err}");
    }
}
