//! Per-agent hybrid automaton: critical-event and satisfaction detection, and
//! the repair jump maps.
//!
//! Every agent carries a repair count `n` and a collaboration flag `c`
//! (`-1` free, `0` pursuing its own task, `k > 0` working on agent `k`'s task).
//! Detection resolves the jump sets with a fixed priority so that at most one
//! jump applies: joining a collaboration, then a funnel exit (stage 1, 2 or 3),
//! then satisfaction.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::funnel::{self, exit_side, rebuild_gamma, ControllerConfig, FunnelError, FunnelParams, Side};
use crate::stl::{CompiledPsi, PhiFormula, TaskFormula, TIME_EPS};
use crate::topology::{stage2_timing_ok, PeerStatus};
use crate::AgentId;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HybridError {
    #[error("agent {agent}: {source}")]
    Funnel { agent: AgentId, source: FunnelError },
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RepairState {
    pub n_repairs: u32,
    pub collab: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridState {
    pub agent: AgentId,
    pub x: Vec<f64>,
    pub clock: f64,
    pub funnel: FunnelParams,
    pub repair: RepairState,
    /// Position in the agent's unit sequence; equals the unit count once done.
    pub unit_index: usize,
    /// The `(owner, unit)` being helped while collaborating on another agent's task.
    pub helping: Option<(AgentId, usize)>,
}

impl HybridState {
    /// The `(owner, unit)` whose robustness drives this agent, if any.
    pub fn objective(&self) -> Option<(AgentId, usize)> {
        match self.repair.collab {
            -1 => None,
            0 => Some((self.agent, self.unit_index)),
            c if c == self.agent as i64 => Some((self.agent, self.unit_index)),
            _ => self.helping,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JumpKind {
    Stage1,
    Stage2Initiate,
    Stage2Join { initiator: AgentId },
    Stage3 { side: Side },
    Satisfied,
}

impl JumpKind {
    pub fn label(&self) -> &'static str {
        match self {
            JumpKind::Stage1 => "stage1",
            JumpKind::Stage2Initiate => "stage2_initiate",
            JumpKind::Stage2Join { .. } => "stage2_join",
            JumpKind::Stage3 { side: Side::Lower } => "stage3_lower",
            JumpKind::Stage3 { side: Side::Upper } => "stage3_upper",
            JumpKind::Satisfied => "satisfied",
        }
    }
}

/// One temporal unit of a task, compiled against the global state layout.
#[derive(Debug, Clone)]
pub struct UnitPlan {
    pub phi: PhiFormula,
    pub psi: CompiledPsi,
    pub rho_opt: f64,
    /// Ascending, including the owner.
    pub participants: Vec<AgentId>,
}

#[derive(Debug, Clone)]
pub struct AgentPlan {
    pub agent: AgentId,
    pub task: TaskFormula,
    pub units: Vec<UnitPlan>,
    /// Other agents in the same dependency cluster.
    pub cluster_mates: Vec<AgentId>,
}

/// Read-only view shared by detection and jumps.
#[derive(Debug, Clone, Copy)]
pub struct HybridCtx<'a> {
    pub plans: &'a BTreeMap<AgentId, AgentPlan>,
    pub cfg: &'a ControllerConfig,
    pub dt: f64,
    /// Stacked state of all agents in layout order.
    pub x: &'a [f64],
}

impl<'a> HybridCtx<'a> {
    pub fn unit(&self, owner: AgentId, index: usize) -> Option<&'a UnitPlan> {
        self.plans.get(&owner).and_then(|p| p.units.get(index))
    }

    pub fn rho(&self, owner: AgentId, index: usize) -> Option<f64> {
        self.unit(owner, index).map(|u| u.psi.smooth(self.x))
    }
}

/// Raw jump-set membership before priority resolution.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Membership {
    /// Lowest-id cluster-mate currently asking this agent for help.
    pub join: Option<AgentId>,
    pub exit: Option<Side>,
    pub stage1: bool,
    pub stage2: bool,
    pub stage3: bool,
    /// Satisfaction conditions on robustness, flag and clock, before excluding the other sets.
    pub sat_raw: bool,
}

impl Membership {
    pub fn sat(&self) -> bool {
        self.sat_raw && self.exit.is_none() && self.join.is_none()
    }

    /// Number of jump sets that claim the state after priority resolution.
    pub fn applicable(&self) -> usize {
        let exit_kind = self.join.is_none() && (self.stage1 || self.stage2 || self.stage3);
        [self.join.is_some(), exit_kind, self.sat()]
            .iter()
            .filter(|b| **b)
            .count()
    }

    pub fn resolve(&self) -> Option<JumpKind> {
        if let Some(initiator) = self.join {
            return Some(JumpKind::Stage2Join { initiator });
        }
        if let Some(side) = self.exit {
            return Some(if self.stage1 {
                JumpKind::Stage1
            } else if self.stage2 {
                JumpKind::Stage2Initiate
            } else {
                JumpKind::Stage3 { side }
            });
        }
        self.sat().then_some(JumpKind::Satisfied)
    }
}

fn in_window(phi: &PhiFormula, t: f64, dt: f64) -> bool {
    if phi.is_eventually() {
        t >= phi.a - TIME_EPS && t <= phi.b + TIME_EPS
    } else {
        (t - phi.b).abs() <= dt + TIME_EPS
    }
}

/// Jump-set membership of agent `i`.
pub fn membership(
    i: AgentId,
    states: &BTreeMap<AgentId, HybridState>,
    ctx: &HybridCtx<'_>,
) -> Result<Membership, HybridError> {
    let z = states.get(&i).ok_or(HybridError::UnknownAgent(i))?;
    let plan = ctx.plans.get(&i).ok_or(HybridError::UnknownAgent(i))?;
    let mut m = Membership::default();
    let collab = z.repair.collab;

    if collab == -1 || collab == 0 {
        m.join = plan.cluster_mates.iter().copied().find(|&k| {
            states.get(&k).is_some_and(|zk| {
                zk.repair.collab == k as i64
                    && ctx
                        .unit(k, zk.unit_index)
                        .is_some_and(|u| u.participants.binary_search(&i).is_ok())
            })
        });
    }

    let Some((owner, index)) = z.objective() else {
        return Ok(m);
    };
    let Some(unit) = ctx.unit(owner, index) else {
        return Ok(m);
    };
    let rho = unit.psi.smooth(ctx.x);
    let xi = z.funnel.xi(rho, z.clock);

    if collab == 0 {
        m.exit = exit_side(xi, ctx.cfg.eta_detect);
        if m.exit.is_some() {
            if z.repair.n_repairs < ctx.cfg.n_max {
                m.stage1 = true;
            } else {
                let peers: BTreeMap<AgentId, PeerStatus<'_>> = unit
                    .participants
                    .iter()
                    .filter(|&&j| j != i)
                    .filter_map(|&j| {
                        let zj = states.get(&j)?;
                        Some((
                            j,
                            PeerStatus {
                                collab: zj.repair.collab,
                                unit: ctx.unit(j, zj.unit_index).map(|u| &u.phi),
                            },
                        ))
                    })
                    .collect();
                if stage2_timing_ok(i, &unit.phi, &peers) {
                    m.stage2 = true;
                } else {
                    m.stage3 = true;
                }
            }
        }
    }

    m.sat_raw = collab >= 0 && z.funnel.r <= rho && rho <= z.funnel.rho_max && in_window(&unit.phi, z.clock, ctx.dt);
    Ok(m)
}

pub fn detect(
    i: AgentId,
    states: &BTreeMap<AgentId, HybridState>,
    ctx: &HybridCtx<'_>,
) -> Result<Option<JumpKind>, HybridError> {
    Ok(membership(i, states, ctx)?.resolve())
}

/// The unit that follows `index` in a task, if any.
pub fn advance_theta(task: &TaskFormula, index: usize) -> Option<&PhiFormula> {
    task.units.get(index + 1)
}

fn zeta_u(fp: &FunnelParams, rho_opt: f64, cfg: &ControllerConfig) -> f64 {
    let room = 0.5 * (rho_opt - fp.rho_max);
    if room <= 0.0 {
        return 0.0;
    }
    cfg.zeta_u.map_or(room, |z| z.min(room))
}

/// Stage-1 style relaxation of the current funnel around robustness `rho`.
fn relax(z: &HybridState, unit: &UnitPlan, rho: f64, cfg: &ControllerConfig) -> Result<FunnelParams, FunnelError> {
    let fp = &z.funnel;
    let t = z.clock;
    let t_star = if unit.phi.is_eventually() {
        unit.phi.b
    } else {
        fp.t_star
    };
    let rho_max = fp.rho_max + zeta_u(fp, unit.rho_opt, cfg);
    let r = fp.r - (1.0 - cfg.r_hat_frac) * fp.r.abs();
    let mut zeta_l = cfg.zeta_l.unwrap_or(0.1 * fp.gamma.gamma_ref);
    if t_star <= t && rho - r > 0.0 {
        zeta_l = zeta_l.min(rho - r);
    }
    let gamma_r = rho_max - rho + zeta_l;
    let gamma = rebuild_gamma(gamma_r, rho_max, r, t, t_star, cfg)?;
    Ok(FunnelParams {
        t_star,
        rho_max,
        r,
        gamma,
    })
}

fn stage3(
    z: &HybridState,
    unit: &UnitPlan,
    rho: f64,
    side: Side,
    cfg: &ControllerConfig,
) -> Result<FunnelParams, FunnelError> {
    let fp = &z.funnel;
    let rho_max = unit.rho_opt + cfg.sigma;
    let r = match side {
        Side::Lower => fp.r - cfg.delta,
        Side::Upper => fp.r,
    };
    let gamma_r = rho_max - rho + cfg.delta;
    let gamma = rebuild_gamma(gamma_r, rho_max, r, z.clock, fp.t_star, cfg)?;
    Ok(FunnelParams {
        t_star: fp.t_star,
        rho_max,
        r,
        gamma,
    })
}

/// Applies jump `kind` to agent `i`; clock and state are left untouched.
pub fn jump(
    i: AgentId,
    kind: JumpKind,
    states: &BTreeMap<AgentId, HybridState>,
    ctx: &HybridCtx<'_>,
) -> Result<HybridState, HybridError> {
    let z = states.get(&i).ok_or(HybridError::UnknownAgent(i))?;
    let plan = ctx.plans.get(&i).ok_or(HybridError::UnknownAgent(i))?;
    let wrap = |source| HybridError::Funnel { agent: i, source };
    let mut next = z.clone();
    let own = plan.units.get(z.unit_index);

    match kind {
        JumpKind::Stage1 | JumpKind::Stage2Initiate | JumpKind::Stage3 { .. } => {
            let unit = own.ok_or(HybridError::UnknownAgent(i))?;
            let rho = unit.psi.smooth(ctx.x);
            match kind {
                JumpKind::Stage1 => {
                    next.funnel = relax(z, unit, rho, ctx.cfg).map_err(wrap)?;
                    next.repair.n_repairs += 1;
                }
                JumpKind::Stage2Initiate => {
                    next.funnel = relax(z, unit, rho, ctx.cfg).map_err(wrap)?;
                    next.repair.collab = i as i64;
                }
                JumpKind::Stage3 { side } => {
                    next.funnel = stage3(z, unit, rho, side, ctx.cfg).map_err(wrap)?;
                }
                _ => unreachable!(),
            }
        }
        JumpKind::Stage2Join { initiator } => {
            let zi = states.get(&initiator).ok_or(HybridError::UnknownAgent(initiator))?;
            next.funnel = zi.funnel;
            next.repair.collab = initiator as i64;
            next.helping = Some((initiator, zi.unit_index));
        }
        JumpKind::Satisfied => {
            let helping_other = z.repair.collab > 0 && z.repair.collab != i as i64;
            if !helping_other {
                next.unit_index += 1;
            }
            next.helping = None;
            match plan.units.get(next.unit_index) {
                Some(unit) => {
                    let rho = unit.psi.smooth(ctx.x);
                    next.funnel =
                        funnel::post_sat_params(&unit.phi, rho, unit.rho_opt, z.clock, ctx.cfg).map_err(wrap)?;
                    next.repair.collab = 0;
                }
                None => next.repair.collab = -1,
            }
        }
    }
    Ok(next)
}

/// Per-agent parameter snapshot recorded around every jump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Snapshot {
    pub t_star: f64,
    pub rho_max: f64,
    pub r: f64,
    pub gamma0: f64,
    pub gamma_inf: f64,
    pub l: f64,
    pub gamma_ref: f64,
    pub t_ref: f64,
    pub n_repairs: u32,
    pub collab: i64,
    pub unit_index: usize,
}

impl From<&HybridState> for Snapshot {
    fn from(z: &HybridState) -> Self {
        Snapshot {
            t_star: z.funnel.t_star,
            rho_max: z.funnel.rho_max,
            r: z.funnel.r,
            gamma0: z.funnel.gamma.gamma0(),
            gamma_inf: z.funnel.gamma.gamma_inf,
            l: z.funnel.gamma.l,
            gamma_ref: z.funnel.gamma.gamma_ref,
            t_ref: z.funnel.gamma.t_ref,
            n_repairs: z.repair.n_repairs,
            collab: z.repair.collab,
            unit_index: z.unit_index,
        }
    }
}

/// Upper bound on the jumps one agent can take in a run.
///
/// Per unit: one stage-2 initiation, `ceil((r0 + rho_bound) / delta)` stage-3
/// lowerings, one upper lift and one satisfaction; plus `N` stage-1 repairs and
/// two jumps (join and release) for every collaboration it was asked into.
pub fn jump_bound(n_max: u32, units: usize, r0: f64, rho_bound: f64, delta: f64, helps: usize) -> usize {
    let lowerings = ((r0 + rho_bound) / delta).ceil().max(0.0) as usize;
    n_max as usize + units.max(1) * (1 + lowerings + 1 + 1) + 2 * helps
}
