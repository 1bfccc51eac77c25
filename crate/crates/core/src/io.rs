//! Log formats and the command implementations behind the CLI.
//!
//! The trajectory CSV has one row per agent per logged sample, with columns
//! `t, agent, x1..xn, u1..um, rho_psi, rho_max, funnel_lo, xi, eps, n_repairs,
//! collab, unit_index`. State and input columns are padded to the widest agent;
//! unused cells are empty. The event log holds one JSON object per jump.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::scenario::{load_scenario, Scenario, ScenarioError};
use crate::sim::{run, Event, SimError, SimOutput, Summary, TrajectoryLog};
use crate::stl::{parse_task, rho_opt, task_robustness, Layout, Semantics, StlError, Trace};
use crate::AgentId;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Stl(#[from] StlError),
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("trace line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File {
        path: path.to_path_buf(),
        source,
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_UNSATISFIED: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

pub fn csv_header(n: usize, m: usize) -> String {
    let mut cols = vec!["t".to_string(), "agent".to_string()];
    cols.extend((1..=n).map(|k| format!("x{k}")));
    cols.extend((1..=m).map(|k| format!("u{k}")));
    cols.extend(
        [
            "rho_psi",
            "rho_max",
            "funnel_lo",
            "xi",
            "eps",
            "n_repairs",
            "collab",
            "unit_index",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    cols.join(",")
}

/// Trajectory as CSV text. Floats use the shortest representation that
/// parses back to the same value.
pub fn trajectory_csv(log: &TrajectoryLog) -> String {
    let widest = |f: fn(&crate::sim::AgentSample) -> usize| {
        log.samples
            .iter()
            .flat_map(|s| s.agents.iter().map(f))
            .max()
            .unwrap_or(0)
    };
    let (n, m) = (widest(|a| a.x.len()), widest(|a| a.u.len()));
    let mut out = csv_header(n, m);
    out.push('\n');
    for s in &log.samples {
        for a in &s.agents {
            write!(out, "{},{}", s.t, a.agent).unwrap();
            for k in 0..n {
                out.push(',');
                if let Some(v) = a.x.get(k) {
                    write!(out, "{v}").unwrap();
                }
            }
            for k in 0..m {
                out.push(',');
                if let Some(v) = a.u.get(k) {
                    write!(out, "{v}").unwrap();
                }
            }
            writeln!(
                out,
                ",{},{},{},{},{},{},{},{}",
                a.rho_psi, a.rho_max, a.funnel_lo, a.xi, a.eps, a.n_repairs, a.collab, a.unit_index
            )
            .unwrap();
        }
    }
    out
}

pub fn events_jsonl(events: &[Event]) -> Result<String, IoError> {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e)?);
        out.push('\n');
    }
    Ok(out)
}

/// Parses a trajectory CSV back into the stacked-state trace.
pub fn parse_trace_csv(text: &str) -> Result<Trace, IoError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(IoError::Csv {
        line: 1,
        msg: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 2 || cols[0] != "t" || cols[1] != "agent" {
        return Err(IoError::Csv {
            line: 1,
            msg: "header must start with t,agent".into(),
        });
    }
    let n = cols
        .iter()
        .filter(|c| c.starts_with('x') && c[1..].parse::<usize>().is_ok())
        .count();

    let mut rows: Vec<(f64, AgentId, Vec<f64>)> = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| IoError::Csv { line: i + 1, msg };
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != cols.len() {
            return Err(err(format!("expected {} cells, found {}", cols.len(), cells.len())));
        }
        let t: f64 = cells[0].parse().map_err(|_| err(format!("bad time {:?}", cells[0])))?;
        let agent: AgentId = cells[1].parse().map_err(|_| err(format!("bad agent {:?}", cells[1])))?;
        let x = cells[2..2 + n]
            .iter()
            .take_while(|c| !c.is_empty())
            .map(|c| c.parse::<f64>().map_err(|_| err(format!("bad state value {c:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push((t, agent, x));
    }

    let mut dims: Vec<(AgentId, usize)> = Vec::new();
    for (t, a, x) in &rows {
        if *t != rows[0].0 {
            break;
        }
        dims.push((*a, x.len()));
    }
    let mut trace = Trace::new(Layout::new(dims.iter().copied()));
    for (k, group) in rows.chunks(dims.len().max(1)).enumerate() {
        let t = group[0].0;
        let mut stacked = Vec::with_capacity(trace.layout.len());
        for ((gt, ga, x), (a, d)) in group.iter().zip(&dims) {
            if *gt != t || ga != a || x.len() != *d {
                return Err(IoError::Csv {
                    line: 2 + k * dims.len(),
                    msg: "rows must repeat the same agents at every time".into(),
                });
            }
            stacked.extend_from_slice(x);
        }
        if group.len() != dims.len() {
            return Err(IoError::Csv {
                line: 2 + k * dims.len(),
                msg: "truncated sample".into(),
            });
        }
        trace.push(t, stacked);
    }
    Ok(trace)
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Trace, IoError> {
    let path = path.as_ref();
    parse_trace_csv(&fs::read_to_string(path).map_err(file_err(path))?)
}

/// Exit code for a finished run.
pub fn run_exit_code(summary: &Summary) -> i32 {
    if summary.all_satisfied {
        EXIT_OK
    } else {
        EXIT_UNSATISFIED
    }
}

pub fn write_outputs(out: &SimOutput, dir: &Path) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(file_err(dir))?;
    let write = |name: &str, body: String| -> Result<(), IoError> {
        let p = dir.join(name);
        fs::write(&p, body).map_err(file_err(&p))
    };
    write("traj.csv", trajectory_csv(&out.trajectory))?;
    write("events.jsonl", events_jsonl(&out.events)?)?;
    write("summary.json", serde_json::to_string_pretty(&out.summary)? + "\n")?;
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    pub seed: Option<u64>,
    pub dt: Option<f64>,
}

/// Loads, runs and writes `traj.csv`, `events.jsonl` and `summary.json` into `out_dir`.
pub fn cmd_run(path: &Path, out_dir: &Path, overrides: &RunOverrides) -> Result<(SimOutput, i32), IoError> {
    let mut scenario = load_scenario(path)?;
    apply_overrides(&mut scenario, overrides)?;
    let out = run(&scenario)?;
    write_outputs(&out, out_dir)?;
    let code = run_exit_code(&out.summary);
    Ok((out, code))
}

pub fn apply_overrides(scenario: &mut Scenario, overrides: &RunOverrides) -> Result<(), IoError> {
    if let Some(seed) = overrides.seed {
        scenario.sim.seed = seed;
    }
    if let Some(dt) = overrides.dt {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(ScenarioError::Validation {
                path: "--dt".into(),
                msg: "must be positive".into(),
            }
            .into());
        }
        scenario.sim.dt = dt;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub text: String,
    pub code: i32,
    pub warnings: Vec<String>,
}

pub fn check_scenario(scenario: &Scenario) -> Result<CheckReport, IoError> {
    let layout = scenario.layout();
    let mut text = String::new();
    let mut warnings = Vec::new();
    let mut feasible = true;
    writeln!(text, "agents: {}", scenario.agents.len()).unwrap();
    for (id, task) in &scenario.tasks {
        for (k, unit) in task.formula.units.iter().enumerate() {
            if unit.body.is_trivial() {
                continue;
            }
            let opt = rho_opt(&unit.body, &layout)?;
            let ok = opt.value > 0.0;
            feasible &= ok;
            writeln!(
                text,
                "agent {id} unit {k}: rho_opt = {:.6} ({})",
                opt.value,
                if ok { "feasible" } else { "infeasible" }
            )
            .unwrap();
        }
    }
    writeln!(text, "clusters: {}", scenario.clusters.clusters.len()).unwrap();
    for c in &scenario.clusters.clusters {
        let ids: Vec<String> = c.agents.iter().map(|a| a.to_string()).collect();
        writeln!(
            text,
            "  {{{}}}: case_a = {}, comm_ok = {}",
            ids.join(","),
            c.case_a,
            c.comm_ok
        )
        .unwrap();
        if !c.case_a {
            warnings.push(format!(
                "cluster {{{}}} has differing tasks: repair scheme will govern",
                ids.join(",")
            ));
        }
        if !c.comm_ok {
            warnings.push(format!(
                "cluster {{{}}} is not covered by the communication graph",
                ids.join(",")
            ));
        }
    }
    for w in &warnings {
        writeln!(text, "warning: {w}").unwrap();
    }
    let code = if feasible || scenario.controller.relaxed {
        EXIT_OK
    } else {
        writeln!(text, "error: InfeasibleTask").unwrap();
        EXIT_ERROR
    };
    Ok(CheckReport { text, code, warnings })
}

pub fn cmd_check(path: &Path) -> Result<CheckReport, IoError> {
    check_scenario(&load_scenario(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOutcome {
    pub value: f64,
    pub satisfied: bool,
}

pub fn eval_trace(trace: &Trace, formula: &str, t0: f64) -> Result<EvalOutcome, IoError> {
    let task = parse_task(formula)?;
    let value = task_robustness(&task, trace, t0, Semantics::Smooth)?;
    Ok(EvalOutcome {
        value,
        satisfied: value > 0.0,
    })
}

pub fn cmd_eval(trace_path: &Path, formula: &str, t0: f64) -> Result<EvalOutcome, IoError> {
    eval_trace(&read_trace(trace_path)?, formula, t0)
}
