//! Fixed-step closed-loop simulation with a per-step jump pass.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::controller::{collaborative_control, idle_control, ppc_control, ControlContext, ControlError};
use crate::funnel::{select_initial_params, FunnelError, FunnelParams, GammaParams};
use crate::hybrid::{self, AgentPlan, HybridCtx, HybridError, HybridState, JumpKind, RepairState, Snapshot, UnitPlan};
use crate::scenario::Scenario;
use crate::stl::{phi_robustness, rho_opt, unit_participants, CompiledPsi, Layout, Semantics, StlError, Trace};
use crate::world::{NoiseModel, WorldError};
use crate::AgentId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_jumps")]
    pub max_jumps_per_step: usize,
    /// Log every `log_stride`-th step (and always the last one).
    #[serde(default = "default_stride")]
    pub log_stride: usize,
}

fn default_dt() -> f64 {
    0.005
}
fn default_t_end() -> f64 {
    15.0
}
fn default_max_jumps() -> usize {
    4
}
fn default_stride() -> usize {
    1
}

impl Default for SimConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("non-finite state for agent {agent} at t = {t}")]
    NonFiniteState { t: f64, agent: AgentId },
    #[error("jump pass did not settle at t = {t}: agent {agent} still in a jump set")]
    JumpStorm { t: f64, agent: AgentId },
    #[error("agent {agent}: {source}")]
    Funnel { agent: AgentId, source: FunnelError },
    #[error(transparent)]
    Hybrid(#[from] HybridError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Stl(#[from] StlError),
}

/// One agent's row of a trajectory sample.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSample {
    pub agent: AgentId,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub rho_psi: f64,
    pub rho_max: f64,
    pub funnel_lo: f64,
    pub xi: f64,
    pub eps: f64,
    pub n_repairs: u32,
    pub collab: i64,
    pub unit_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    /// Ascending agent id.
    pub agents: Vec<AgentSample>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryLog {
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub t: f64,
    pub jump_index: u64,
    pub agent: AgentId,
    pub kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initiator: Option<AgentId>,
    pub before: Snapshot,
    pub after: Snapshot,
    #[serde(skip)]
    pub jump: Option<JumpKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnitVerdict {
    pub formula: String,
    /// Trace robustness at `t = 0`; `None` when the run does not cover the window.
    pub robustness: Option<f64>,
    /// Robustness level in force for this unit at the end of the run.
    pub r: f64,
    pub meets_r: bool,
    pub satisfied: bool,
    /// Time of the satisfaction jump, if one occurred.
    pub sat_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentSummary {
    pub agent: AgentId,
    pub initial_r: f64,
    pub final_r: f64,
    pub jumps: BTreeMap<&'static str, usize>,
    pub units: Vec<UnitVerdict>,
    pub satisfied: bool,
    pub jump_count: usize,
    pub jump_bound: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub agents: Vec<AgentSummary>,
    pub all_satisfied: bool,
    pub steps: u64,
    pub jumps: u64,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub layout: Layout,
    pub trajectory: TrajectoryLog,
    pub events: Vec<Event>,
    pub summary: Summary,
}

/// One classical Runge-Kutta step of `x' = f(x)`.
pub fn rk4_step<E>(x: &[f64], dt: f64, mut f: impl FnMut(&[f64]) -> Result<Vec<f64>, E>) -> Result<Vec<f64>, E> {
    let axpy = |a: f64, k: &[f64]| -> Vec<f64> { x.iter().zip(k).map(|(xi, ki)| xi + a * ki).collect() };
    let k1 = f(x)?;
    let k2 = f(&axpy(0.5 * dt, &k1))?;
    let k3 = f(&axpy(0.5 * dt, &k2))?;
    let k4 = f(&axpy(dt, &k3))?;
    Ok((0..x.len())
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Compiled per-agent plans over the scenario's global layout.
pub fn build_plans(scenario: &Scenario, layout: &Layout) -> Result<BTreeMap<AgentId, AgentPlan>, SimError> {
    let mut plans = BTreeMap::new();
    for spec in &scenario.agents {
        let id = spec.id;
        let task = scenario.task(id);
        let mut units = Vec::new();
        for phi in task.units.iter().filter(|u| !u.body.is_trivial()) {
            units.push(UnitPlan {
                phi: phi.clone(),
                psi: CompiledPsi::compile(&phi.body, layout)?,
                rho_opt: rho_opt(&phi.body, layout)?.value,
                participants: unit_participants(phi, id),
            });
        }
        let cluster_mates = scenario
            .clusters
            .cluster_of(id)
            .map(|c| c.agents.iter().copied().filter(|&a| a != id).collect())
            .unwrap_or_default();
        plans.insert(
            id,
            AgentPlan {
                agent: id,
                task,
                units,
                cluster_mates,
            },
        );
    }
    Ok(plans)
}

/// Placeholder funnel for agents that never pursue a task.
fn idle_funnel() -> FunnelParams {
    FunnelParams {
        t_star: 0.0,
        rho_max: 0.0,
        r: 0.0,
        gamma: GammaParams {
            gamma_ref: 1.0,
            gamma_inf: 1.0,
            l: 0.0,
            t_ref: 0.0,
        },
    }
}

struct Runner<'s> {
    scenario: &'s Scenario,
    layout: Layout,
    plans: BTreeMap<AgentId, AgentPlan>,
    noise: NoiseModel,
}

struct Controls {
    u: BTreeMap<AgentId, Vec<f64>>,
    rows: Vec<AgentSample>,
}

impl<'s> Runner<'s> {
    fn stacked(&self, states: &BTreeMap<AgentId, HybridState>) -> Vec<f64> {
        self.layout
            .agents()
            .iter()
            .flat_map(|a| states[a].x.iter().copied())
            .collect()
    }

    fn ctx<'a>(&'a self, x: &'a [f64]) -> HybridCtx<'a> {
        HybridCtx {
            plans: &self.plans,
            cfg: &self.scenario.controller,
            dt: self.scenario.sim.dt,
            x,
        }
    }

    fn controls(&self, states: &BTreeMap<AgentId, HybridState>, x: &[f64], t: f64) -> Result<Controls, SimError> {
        let cfg = &self.scenario.controller;
        let mut out = Controls {
            u: BTreeMap::new(),
            rows: Vec::new(),
        };
        let mut grad = vec![0.0; x.len()];
        for spec in &self.scenario.agents {
            let id = spec.id;
            let z = &states[&id];
            let (offset, dim) = self.layout.slot(id).expect("agent in layout");
            let xi_block = &x[offset..offset + dim];
            let plan = &self.plans[&id];
            let (u, rho, xi, eps) = match z
                .objective()
                .and_then(|(o, k)| Some((o, self.plans.get(&o)?.units.get(k)?)))
            {
                Some((owner, unit)) => {
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    let rho = unit.psi.smooth_with_grad(x, &mut grad).value;
                    let ctx = ControlContext {
                        model: &spec.model,
                        x: xi_block,
                        grad: &grad[offset..offset + dim],
                        rho,
                        funnel: &z.funnel,
                        t,
                        gain: cfg.gain,
                        eps_max: cfg.eps_max,
                        u_max: spec.u_max,
                    };
                    let initiator = &states[&owner];
                    let o = if owner != id && initiator.repair.collab == owner as i64 {
                        collaborative_control(&ctx, &initiator.funnel)?
                    } else {
                        ppc_control(&ctx)?
                    };
                    (o.u, rho, o.xi, o.eps)
                }
                None => {
                    let u = idle_control(cfg.idle, &spec.model, xi_block)?;
                    let last = plan.units.len().checked_sub(1).map(|k| plan.units[k].psi.smooth(x));
                    (u, last.unwrap_or(f64::NAN), f64::NAN, f64::NAN)
                }
            };
            out.rows.push(AgentSample {
                agent: id,
                x: xi_block.to_vec(),
                u: u.clone(),
                rho_psi: rho,
                rho_max: z.funnel.rho_max,
                funnel_lo: z.funnel.lower(t),
                xi,
                eps,
                n_repairs: z.repair.n_repairs,
                collab: z.repair.collab,
                unit_index: z.unit_index,
            });
            out.u.insert(id, u);
        }
        Ok(out)
    }

    fn rhs(
        &self,
        x: &[f64],
        u: &BTreeMap<AgentId, Vec<f64>>,
        w: &BTreeMap<AgentId, Vec<f64>>,
    ) -> Result<Vec<f64>, SimError> {
        let blocks: BTreeMap<AgentId, &[f64]> = self
            .layout
            .agents()
            .iter()
            .map(|&a| (a, self.layout.block(x, a).expect("agent in layout")))
            .collect();
        let mut dx = Vec::with_capacity(x.len());
        for spec in &self.scenario.agents {
            let xi = blocks[&spec.id];
            let mut d = spec.model.drift(xi)?;
            let c = self.scenario.coupling.coupling(&blocks, spec.id);
            let g = spec.model.actuation(xi)?;
            let ui = &u[&spec.id];
            let wi = &w[&spec.id];
            for (r, dr) in d.iter_mut().enumerate() {
                *dr += c.get(r).copied().unwrap_or(0.0);
                *dr += (0..g.ncols()).map(|k| g[(r, k)] * ui[k]).sum::<f64>();
                *dr += wi.get(r).copied().unwrap_or(0.0);
            }
            dx.extend(d);
        }
        Ok(dx)
    }
}

/// Runs a validated scenario to `t_end`.
pub fn run(scenario: &Scenario) -> Result<SimOutput, SimError> {
    let layout = Layout::new(scenario.agents.iter().map(|a| (a.id, a.model.state_dim())));
    let plans = build_plans(scenario, &layout)?;
    let noise = NoiseModel {
        half_widths: scenario.agents.iter().map(|a| (a.id, a.noise.clone())).collect(),
        seed: scenario.sim.seed,
    };
    let runner = Runner {
        scenario,
        layout,
        plans,
        noise,
    };
    runner.run()
}

impl<'s> Runner<'s> {
    fn run(self) -> Result<SimOutput, SimError> {
        let sc = self.scenario;
        let cfg = &sc.controller;
        let dt = sc.sim.dt;
        let n_steps = (sc.sim.t_end / dt - 1e-9).ceil().max(0.0) as u64;
        let stride = sc.sim.log_stride.max(1) as u64;

        let x0: Vec<f64> = sc.agents.iter().flat_map(|a| a.x0.iter().copied()).collect();
        let mut states = BTreeMap::new();
        for spec in &sc.agents {
            let plan = &self.plans[&spec.id];
            let (funnel, collab) = match plan.units.first() {
                Some(u) => {
                    let fp = select_initial_params(&u.phi, u.psi.smooth(&x0), u.rho_opt, cfg)
                        .map_err(|source| SimError::Funnel { agent: spec.id, source })?;
                    (fp, 0)
                }
                None => (idle_funnel(), -1),
            };
            states.insert(
                spec.id,
                HybridState {
                    agent: spec.id,
                    x: spec.x0.clone(),
                    clock: 0.0,
                    funnel,
                    repair: RepairState { n_repairs: 0, collab },
                    unit_index: 0,
                    helping: None,
                },
            );
        }

        let initial_r: BTreeMap<AgentId, f64> = states.iter().map(|(a, z)| (*a, z.funnel.r)).collect();
        let mut unit_r: BTreeMap<AgentId, Vec<Option<f64>>> = self
            .plans
            .iter()
            .map(|(a, p)| (*a, vec![None; p.units.len()]))
            .collect();
        let mut sat_time: BTreeMap<AgentId, Vec<Option<f64>>> = unit_r.clone();
        let mut rho_min: BTreeMap<AgentId, f64> = states.keys().map(|a| (*a, f64::INFINITY)).collect();

        let mut trajectory = TrajectoryLog::default();
        let mut trace = Trace::new(self.layout.clone());
        let mut events = Vec::new();
        let mut jump_index = 0u64;

        for k in 0..=n_steps {
            let t = k as f64 * dt;
            for z in states.values_mut() {
                z.clock = t;
            }
            let x = self.stacked(&states);

            // jump pass, ascending id, with live updates
            let mut settled = false;
            for _ in 0..sc.sim.max_jumps_per_step {
                let mut any = false;
                for id in sc.agents.iter().map(|a| a.id) {
                    let ctx = self.ctx(&x);
                    let Some(kind) = hybrid::detect(id, &states, &ctx)? else {
                        continue;
                    };
                    let before = states[&id].clone();
                    let after = hybrid::jump(id, kind, &states, &ctx)?;
                    if kind == JumpKind::Satisfied && before.objective().map(|(o, _)| o) == Some(id) {
                        unit_r.get_mut(&id).unwrap()[before.unit_index] = Some(before.funnel.r);
                        sat_time.get_mut(&id).unwrap()[before.unit_index] = Some(t);
                    }
                    let initiator = match kind {
                        JumpKind::Stage2Join { initiator } => Some(initiator),
                        _ => None,
                    };
                    events.push(Event {
                        t,
                        jump_index,
                        agent: id,
                        kind: kind.label(),
                        initiator,
                        before: Snapshot::from(&before),
                        after: Snapshot::from(&after),
                        jump: Some(kind),
                    });
                    jump_index += 1;
                    states.insert(id, after);
                    any = true;
                }
                if !any {
                    settled = true;
                    break;
                }
            }
            if !settled {
                let ctx = self.ctx(&x);
                for id in sc.agents.iter().map(|a| a.id) {
                    if hybrid::detect(id, &states, &ctx)?.is_some() {
                        return Err(SimError::JumpStorm { t, agent: id });
                    }
                }
            }

            for (id, z) in &states {
                if let Some(rho) = self.ctx(&x).rho(*id, z.unit_index) {
                    let m = rho_min.get_mut(id).unwrap();
                    *m = m.min(rho);
                }
            }

            let controls = self.controls(&states, &x, t)?;
            if k % stride == 0 || k == n_steps {
                trace.push(t, x.clone());
                trajectory.samples.push(Sample {
                    t,
                    agents: controls.rows,
                });
            }
            if k == n_steps {
                break;
            }

            let w: BTreeMap<AgentId, Vec<f64>> = sc.agents.iter().map(|a| (a.id, self.noise.sample(k, a.id))).collect();
            let next = rk4_step(&x, dt, |y| self.rhs(y, &controls.u, &w))?;
            for spec in &sc.agents {
                let block = self.layout.block(&next, spec.id).expect("agent in layout");
                if block.iter().any(|v| !v.is_finite()) {
                    return Err(SimError::NonFiniteState {
                        t: t + dt,
                        agent: spec.id,
                    });
                }
                states.get_mut(&spec.id).unwrap().x = block.to_vec();
            }
        }

        let mut agents = Vec::new();
        for spec in &sc.agents {
            let id = spec.id;
            let z = &states[&id];
            let plan = &self.plans[&id];
            let mut jumps: BTreeMap<&'static str, usize> = BTreeMap::new();
            for e in events.iter().filter(|e| e.agent == id) {
                *jumps.entry(e.kind).or_default() += 1;
            }
            let mut units = Vec::new();
            for (k, unit) in plan.units.iter().enumerate() {
                let robustness = phi_robustness(&unit.phi, &trace, 0.0, Semantics::Smooth).ok();
                let r = unit_r[&id][k].unwrap_or(z.funnel.r);
                units.push(UnitVerdict {
                    formula: unit.phi.to_string(),
                    robustness,
                    r,
                    meets_r: robustness.is_some_and(|v| v >= r),
                    satisfied: robustness.is_some_and(|v| v > 0.0),
                    sat_time: sat_time[&id][k],
                });
            }
            let satisfied = units.iter().all(|u| if cfg.relaxed { u.meets_r } else { u.satisfied });
            let rho_bound = (-rho_min[&id]).max(0.0);
            let helps = jumps.get("stage2_join").copied().unwrap_or(0);
            let jump_count = jumps.values().sum();
            agents.push(AgentSummary {
                agent: id,
                initial_r: initial_r[&id],
                final_r: z.funnel.r,
                jumps,
                satisfied,
                jump_count,
                jump_bound: hybrid::jump_bound(
                    cfg.n_max,
                    plan.units.len(),
                    initial_r[&id],
                    rho_bound,
                    cfg.delta,
                    helps,
                ),
                units,
            });
        }
        let summary = Summary {
            all_satisfied: agents.iter().all(|a| a.satisfied),
            agents,
            steps: n_steps,
            jumps: jump_index,
        };
        Ok(SimOutput {
            layout: self.layout,
            trajectory,
            events,
            summary,
        })
    }
}
