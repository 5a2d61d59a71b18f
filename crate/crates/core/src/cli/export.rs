//! Plain-text artifacts: CSV tables and the parameter file.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::odeint::Trajectory;
use crate::paramcore::{Layout, ParamVector, Shape};

const PARAMS_MAGIC: &str = "ctdl-params v1";

/// 17 significant digits, `.` separator.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Which accumulators fill the `logdet` and `cost` columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrajectoryColumns {
    pub logdet: bool,
    /// Accumulator index (see `odeint::C_OT`, `odeint::C_RUN`) shown as `cost`.
    pub cost: Option<usize>,
}

impl TrajectoryColumns {
    pub const NONE: TrajectoryColumns = TrajectoryColumns { logdet: false, cost: None };
}

pub fn trajectory_header(n: usize) -> String {
    let mut h = String::from("traj_id,t");
    for i in 1..=n {
        write!(h, ",z{i}").unwrap();
    }
    h.push_str(",logdet,cost");
    h
}

/// One row per grid point of every trajectory, header
/// `traj_id,t,z1,...,zn,logdet,cost`; absent columns are left empty.
pub fn write_trajectories<W: Write>(out: &mut W, trajs: &[Trajectory], cols: TrajectoryColumns) -> std::io::Result<()> {
    let n = trajs.first().map_or(0, |t| t.dim());
    writeln!(out, "{}", trajectory_header(n))?;
    let mut line = String::new();
    for (id, traj) in trajs.iter().enumerate() {
        for i in 0..=traj.steps() {
            line.clear();
            let raw = traj.raw_state(i);
            write!(line, "{id},{}", num(traj.times[i])).unwrap();
            for v in &raw[..n] {
                write!(line, ",{}", num(*v)).unwrap();
            }
            line.push(',');
            if cols.logdet {
                line.push_str(&num(raw[n + crate::odeint::LOGDET]));
            }
            line.push(',');
            if let Some(c) = cols.cost {
                line.push_str(&num(raw[n + c]));
            }
            writeln!(out, "{line}")?;
        }
    }
    Ok(())
}

pub fn export_trajectories(path: &Path, trajs: &[Trajectory], cols: TrajectoryColumns) -> Result<()> {
    if trajs.is_empty() {
        return Err(Error::InvalidArgument("no trajectories to export".into()));
    }
    if trajs.iter().any(|t| t.dim() != trajs[0].dim()) {
        return Err(Error::InvalidArgument("trajectories have different dimensions".into()));
    }
    write_file(path, |w| write_trajectories(w, trajs, cols))
}

/// Generic table writer; every value is formatted with [`num`] unless it is
/// already a string.
pub fn write_table(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<Cell>>) -> Result<()> {
    write_file(path, |w| {
        writeln!(w, "{}", header.join(","))?;
        for row in rows {
            let cells: Vec<String> = row.into_iter().map(Cell::render).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    })
}

pub enum Cell {
    F(f64),
    I(u64),
}

impl Cell {
    fn render(self) -> String {
        match self {
            Cell::F(x) => num(x),
            Cell::I(i) => i.to_string(),
        }
    }
}

/// Column names `prefix1..prefixn`.
pub fn columns(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

/// Points with an optional label column.
pub fn write_points(path: &Path, prefix: &str, points: &[Vec<f64>], labels: Option<&[u8]>) -> Result<()> {
    let n = points.first().map_or(0, Vec::len);
    let mut header = columns(prefix, n);
    if labels.is_some() {
        header.push("label".into());
    }
    let rows = points.iter().enumerate().map(|(i, p)| {
        let mut row: Vec<Cell> = p.iter().map(|&v| Cell::F(v)).collect();
        if let Some(l) = labels {
            row.push(Cell::I(l[i] as u64));
        }
        row
    });
    write_table(path, &header, rows)
}

pub fn write_file(path: &Path, f: impl FnOnce(&mut std::io::BufWriter<std::fs::File>) -> std::io::Result<()>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Text parameter file: a layout header followed by one value per line.
pub fn params_to_string(task: &str, params: &ParamVector) -> String {
    let layout = params.layout();
    let mut s = format!("{PARAMS_MAGIC}\ntask {task}\nblocks {}\n", layout.blocks().len());
    for b in layout.blocks() {
        match b.shape {
            Shape::Vector(n) => writeln!(s, "{} vector {n}", b.name).unwrap(),
            Shape::Matrix(r, c) => writeln!(s, "{} matrix {r} {c}", b.name).unwrap(),
        }
    }
    writeln!(s, "values {}", params.len()).unwrap();
    for v in params.data() {
        writeln!(s, "{}", num(*v)).unwrap();
    }
    s
}

pub fn save_params(path: &Path, task: &str, params: &ParamVector) -> Result<()> {
    std::fs::write(path, params_to_string(task, params)).map_err(|e| Error::io(path, e))
}

/// Parses a parameter file and checks it against the layout the current
/// configuration expects.
pub fn params_from_str(text: &str, task: &str, expected: &Arc<Layout>) -> Result<ParamVector> {
    let bad = |msg: String| Error::Config(format!("parameter file: {msg}"));
    let mut lines = text.lines();
    let mut next = |what: &str| lines.next().ok_or_else(|| bad(format!("truncated before {what}")));
    if next("header")? != PARAMS_MAGIC {
        return Err(bad("missing `ctdl-params v1` header".into()));
    }
    let got_task = next("task")?.strip_prefix("task ").unwrap_or_default().to_string();
    if got_task != task {
        return Err(bad(format!("written for task `{got_task}`, expected `{task}`")));
    }
    let count: usize = next("block count")?
        .strip_prefix("blocks ")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad("malformed `blocks` line".into()))?;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let line = next("block list")?;
        let f: Vec<&str> = line.split_whitespace().collect();
        let dims: Vec<usize> = f[2.min(f.len())..].iter().filter_map(|v| v.parse().ok()).collect();
        let shape = match (f.get(1).copied(), dims.as_slice()) {
            (Some("vector"), [n]) => Shape::Vector(*n),
            (Some("matrix"), [r, c]) => Shape::Matrix(*r, *c),
            _ => return Err(bad(format!("malformed block line `{line}`"))),
        };
        entries.push((f[0].to_string(), shape));
    }
    let layout = Layout::new(entries)?;
    if layout != **expected {
        return Err(bad("layout does not match the configured model sizes".into()));
    }
    let len: usize = next("values")?
        .strip_prefix("values ")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad("malformed `values` line".into()))?;
    let data = lines
        .map(|l| l.trim().parse::<f64>().map_err(|_| bad(format!("bad value `{l}`"))))
        .collect::<Result<Vec<_>>>()?;
    if data.len() != len {
        return Err(bad(format!("expected {len} values, found {}", data.len())));
    }
    ParamVector::from_data(expected.clone(), data)
}

pub fn load_params(path: &Path, task: &str, expected: &Arc<Layout>) -> Result<ParamVector> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    params_from_str(&text, task, expected)
}
