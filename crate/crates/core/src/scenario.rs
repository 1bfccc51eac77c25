//! Scenario files: JSON documents describing agents, tasks and configuration.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Deserialize;

use crate::funnel::ControllerConfig;
use crate::sim::SimConfig;
use crate::stl::{parse_task, CompiledPsi, Layout, TaskFormula};
use crate::topology::{clusters, ClusterPartition, CommGraph};
use crate::world::{CouplingModel, DynamicsModel};
use crate::AgentId;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {msg}")]
    Io { path: String, msg: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{path}: {msg}")]
    Validation { path: String, msg: String },
}

fn invalid(path: impl Into<String>, msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation {
        path: path.into(),
        msg: msg.into(),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAgent {
    id: AgentId,
    model: DynamicsModel,
    x0: Vec<f64>,
    #[serde(default)]
    u_max: Option<f64>,
    /// Half-widths of the noise box, one per state component.
    #[serde(default)]
    noise: Vec<f64>,
    #[serde(default)]
    #[allow(dead_code)]
    note: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTask {
    agent: AgentId,
    formula: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[serde(default)]
    #[allow(dead_code)]
    note: Option<String>,
    agents: Vec<RawAgent>,
    #[serde(default)]
    tasks: Vec<RawTask>,
    /// Undirected edges; a complete graph when absent.
    #[serde(default)]
    comm: Option<Vec<(AgentId, AgentId)>>,
    #[serde(default)]
    coupling: CouplingModel,
    #[serde(default)]
    controller: ControllerConfig,
    #[serde(default)]
    sim: SimConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    pub id: AgentId,
    pub model: DynamicsModel,
    pub x0: Vec<f64>,
    pub u_max: Option<f64>,
    /// Noise half-widths; empty for a noiseless agent.
    pub noise: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub agent: AgentId,
    pub source: String,
    pub formula: TaskFormula,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Ascending id.
    pub agents: Vec<AgentSpec>,
    pub tasks: BTreeMap<AgentId, TaskSpec>,
    pub comm: CommGraph,
    pub coupling: CouplingModel,
    pub controller: ControllerConfig,
    pub sim: SimConfig,
    pub clusters: ClusterPartition,
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    Scenario::from_json_str(&text)
}

impl Scenario {
    pub fn from_json_str(text: &str) -> Result<Self, ScenarioError> {
        let raw: RawScenario = serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        Self::validate(raw)
    }

    pub fn from_value(v: serde_json::Value) -> Result<Self, ScenarioError> {
        let raw: RawScenario = serde_json::from_value(v).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        Self::validate(raw)
    }

    /// The agent's task, or the trivial task if none was given.
    pub fn task(&self, agent: AgentId) -> TaskFormula {
        self.tasks
            .get(&agent)
            .map(|t| t.formula.clone())
            .unwrap_or_else(TaskFormula::trivial)
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.agents.iter().map(|a| (a.id, a.model.state_dim())))
    }

    fn validate(raw: RawScenario) -> Result<Self, ScenarioError> {
        let mut ids = BTreeSet::new();
        let mut agents = Vec::new();
        for (k, a) in raw.agents.into_iter().enumerate() {
            let at = |f: &str| format!("agents[{k}].{f}");
            if a.id == 0 {
                return Err(invalid(at("id"), "agent ids start at 1"));
            }
            if !ids.insert(a.id) {
                return Err(invalid(at("id"), format!("duplicate agent id {}", a.id)));
            }
            if let DynamicsModel::SingleIntegrator { n: 0 } = a.model {
                return Err(invalid(at("model.n"), "state dimension must be positive"));
            }
            let n = a.model.state_dim();
            if a.x0.len() != n || a.x0.iter().any(|v| !v.is_finite()) {
                return Err(invalid(at("x0"), format!("need {n} finite components")));
            }
            if a.u_max.is_some_and(|u| !(u > 0.0)) {
                return Err(invalid(at("u_max"), "must be positive"));
            }
            if !a.noise.is_empty() && (a.noise.len() != n || a.noise.iter().any(|h| !(*h >= 0.0) || !h.is_finite())) {
                return Err(invalid(at("noise"), format!("need {n} finite half-widths >= 0")));
            }
            agents.push(AgentSpec {
                id: a.id,
                model: a.model,
                x0: a.x0,
                u_max: a.u_max,
                noise: a.noise,
            });
        }
        agents.sort_by_key(|a| a.id);
        let layout = Layout::new(agents.iter().map(|a| (a.id, a.model.state_dim())));

        let mut tasks = BTreeMap::new();
        for (k, t) in raw.tasks.into_iter().enumerate() {
            if !ids.contains(&t.agent) {
                return Err(invalid(
                    format!("tasks[{k}].agent"),
                    format!("unknown agent {}", t.agent),
                ));
            }
            if tasks.contains_key(&t.agent) {
                return Err(invalid(
                    format!("tasks[{k}].agent"),
                    format!("agent {} already has a task", t.agent),
                ));
            }
            let at = format!("tasks[{k}].formula");
            let formula = parse_task(&t.formula).map_err(|e| invalid(&at, e.to_string()))?;
            if let Some(j) = formula.agents().into_iter().find(|j| !ids.contains(j)) {
                return Err(invalid(&at, format!("unknown agent {j}")));
            }
            for unit in &formula.units {
                CompiledPsi::compile(&unit.body, &layout).map_err(|e| invalid(&at, e.to_string()))?;
            }
            tasks.insert(
                t.agent,
                TaskSpec {
                    agent: t.agent,
                    source: t.formula,
                    formula,
                },
            );
        }

        let comm = match raw.comm {
            None => CommGraph::complete(ids.iter().copied()),
            Some(edges) => {
                if let Some(k) = edges.iter().position(|(a, b)| !ids.contains(a) || !ids.contains(b)) {
                    return Err(invalid(format!("comm[{k}]"), "unknown agent"));
                }
                CommGraph::from_edges(ids.iter().copied(), edges).map_err(|e| invalid("comm", e.to_string()))?
            }
        };
        if let CouplingModel::SaturatedConsensus { gain, bound, edges } = &raw.coupling {
            if !gain.is_finite() || !(*bound >= 0.0) {
                return Err(invalid("coupling", "gain must be finite and bound >= 0"));
            }
            if edges.iter().any(|(a, b)| !ids.contains(a) || !ids.contains(b)) {
                return Err(invalid("coupling.edges", "unknown agent"));
            }
        }

        let c = &raw.controller;
        let positive = [
            ("delta", c.delta),
            ("sigma", c.sigma),
            ("gamma0_scale", c.gamma0_scale),
            ("eta_detect", c.eta_detect),
            ("eps_max", c.eps_max),
            ("gain", c.gain),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| !(*v > 0.0) || !v.is_finite()) {
            return Err(invalid(format!("controller.{name}"), "must be positive"));
        }
        let unit_interval = [
            ("rho_max_frac", c.rho_max_frac),
            ("gammaInf_frac", c.gamma_inf_frac),
            ("r_hat_frac", c.r_hat_frac),
        ];
        if let Some((name, _)) = unit_interval.iter().find(|(_, v)| !(*v > 0.0 && *v < 1.0)) {
            return Err(invalid(format!("controller.{name}"), "must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&c.tstar_frac) {
            return Err(invalid("controller.tstar_frac", "must lie in [0, 1]"));
        }
        if c.eta_detect >= 0.5 {
            return Err(invalid("controller.eta_detect", "must be below 0.5"));
        }
        if c.zeta_u.is_some_and(|z| !(z > 0.0)) {
            return Err(invalid("controller.zeta_u", "must be positive"));
        }
        if c.zeta_l.is_some_and(|z| !(z > 0.0)) {
            return Err(invalid("controller.zeta_l", "must be positive"));
        }

        let s = &raw.sim;
        if !(s.dt > 0.0) || !s.dt.is_finite() {
            return Err(invalid("sim.dt", "must be positive"));
        }
        if !(s.t_end >= 0.0) || !s.t_end.is_finite() {
            return Err(invalid("sim.t_end", "must be >= 0"));
        }
        if s.max_jumps_per_step == 0 {
            return Err(invalid("sim.max_jumps_per_step", "must be at least 1"));
        }
        if s.log_stride == 0 {
            return Err(invalid("sim.log_stride", "must be at least 1"));
        }

        let formulas: BTreeMap<AgentId, TaskFormula> = ids
            .iter()
            .map(|&a| {
                (
                    a,
                    tasks
                        .get(&a)
                        .map(|t: &TaskSpec| t.formula.clone())
                        .unwrap_or_else(TaskFormula::trivial),
                )
            })
            .collect();
        let clusters = clusters(&formulas, &comm);
        Ok(Scenario {
            agents,
            tasks,
            comm,
            coupling: raw.coupling,
            controller: raw.controller,
            sim: raw.sim,
            clusters,
        })
    }
}
