//! Performance functions, the error transformation, and the parameter rules used
//! to build and repair funnels.
//!
//! A funnel prescribes `-gamma(t) + rho_max < rho_psi(x(t)) < rho_max`. The
//! performance function is stored relative to an anchor time `t_ref`:
//! `gamma(t) = (gamma_ref - gamma_inf) * exp(-l (t - t_ref)) + gamma_inf`.
//! Initial funnels use `t_ref = 0`, so `gamma_ref` is the usual `gamma0`. Repairs
//! anchor at the repair instant, which is the same curve as the clock-compensated
//! `gamma0 = (gamma_r - gamma_inf) exp(l t) + gamma_inf` without overflowing for
//! steep decays; [`GammaParams::gamma0`] recovers that value.

use serde::{Deserialize, Serialize};

use crate::controller::IdlePolicy;
use crate::stl::PhiFormula;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FunnelError {
    #[error("task is infeasible: rho_opt = {0} <= 0")]
    InfeasibleTask(f64),
    #[error("bad initial state: {0}")]
    BadInitial(String),
    #[error("degenerate repair window: t_star_hat = {t_star_hat} <= t_now = {t_now}")]
    DegenerateWindow { t_star_hat: f64, t_now: f64 },
    #[error("invalid funnel parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub gamma_ref: f64,
    pub gamma_inf: f64,
    pub l: f64,
    #[serde(default)]
    pub t_ref: f64,
}

impl GammaParams {
    pub fn eval(&self, t: f64) -> f64 {
        (self.gamma_ref - self.gamma_inf) * (-self.l * (t - self.t_ref)).exp() + self.gamma_inf
    }

    /// Value at `t = 0` of the same curve (may be `inf` for steep late repairs).
    pub fn gamma0(&self) -> f64 {
        self.eval(0.0)
    }
}

pub fn gamma_eval(gp: &GammaParams, t: f64) -> f64 {
    gp.eval(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunnelParams {
    pub t_star: f64,
    pub rho_max: f64,
    pub r: f64,
    pub gamma: GammaParams,
}

impl FunnelParams {
    pub fn lower(&self, t: f64) -> f64 {
        -self.gamma.eval(t) + self.rho_max
    }

    pub fn xi(&self, rho: f64, t: f64) -> f64 {
        (rho - self.rho_max) / self.gamma.eval(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Lower,
    Upper,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Side::Lower => "lower",
            Side::Upper => "upper",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transformed {
    pub e: f64,
    pub xi: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("funnel exit on the {side} side (xi = {xi})")]
pub struct FunnelExit {
    pub side: Side,
    pub xi: f64,
}

/// `S(xi) = ln(-(xi + 1) / xi)`; infinite at the boundary, NaN outside.
pub fn transform(xi: f64) -> f64 {
    (-(xi + 1.0) / xi).ln()
}

pub fn inverse_transform(eps: f64) -> f64 {
    -1.0 / (eps.exp() + 1.0)
}

/// `S(xi)` limited to `[-eps_max, eps_max]`, saturating outside the funnel.
pub fn clamped_transform(xi: f64, eps_max: f64) -> f64 {
    if xi.is_nan() {
        return 0.0;
    }
    if xi <= -1.0 {
        return -eps_max;
    }
    if xi >= 0.0 {
        return eps_max;
    }
    transform(xi).clamp(-eps_max, eps_max)
}

/// Which boundary `xi` violates under detection margin `eta`, if any.
pub fn exit_side(xi: f64, eta: f64) -> Option<Side> {
    if xi <= -1.0 + eta {
        Some(Side::Lower)
    } else if xi >= -eta {
        Some(Side::Upper)
    } else {
        None
    }
}

pub fn transform_error(rho_psi: f64, fp: &FunnelParams, t: f64, eta: f64) -> Result<Transformed, FunnelExit> {
    let e = rho_psi - fp.rho_max;
    let xi = e / fp.gamma.eval(t);
    if let Some(side) = exit_side(xi, eta) {
        return Err(FunnelExit { side, xi });
    }
    Ok(Transformed {
        e,
        xi,
        eps: transform(xi),
    })
}

fn default_r() -> f64 {
    0.5
}
fn default_rho_max_frac() -> f64 {
    0.9
}
fn default_tstar_frac() -> f64 {
    1.0
}
fn default_gamma0_scale() -> f64 {
    1.1
}
fn default_gamma_inf_frac() -> f64 {
    0.5
}
fn default_r_hat_frac() -> f64 {
    0.5
}
fn default_delta() -> f64 {
    1.5
}
fn default_sigma() -> f64 {
    1.0
}
fn default_n() -> u32 {
    1
}
fn default_eta() -> f64 {
    1e-3
}
fn default_eps_max() -> f64 {
    1e3
}
fn default_gain() -> f64 {
    1.0
}

/// Controller and repair parameters shared by all agents of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    #[serde(default = "default_r")]
    pub r: f64,
    #[serde(default = "default_rho_max_frac")]
    pub rho_max_frac: f64,
    #[serde(default = "default_tstar_frac")]
    pub tstar_frac: f64,
    #[serde(default = "default_gamma0_scale")]
    pub gamma0_scale: f64,
    #[serde(default = "default_gamma_inf_frac", rename = "gammaInf_frac")]
    pub gamma_inf_frac: f64,
    /// Upper relaxation; default `0.5 (rho_opt - rho_max)`.
    #[serde(default)]
    pub zeta_u: Option<f64>,
    /// Lower relaxation; default `0.1 gamma0` of the funnel being repaired.
    #[serde(default)]
    pub zeta_l: Option<f64>,
    /// Stage-1 robustness relaxation `r_hat = r - (1 - r_hat_frac) |r|`.
    #[serde(default = "default_r_hat_frac")]
    pub r_hat_frac: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_n", rename = "N")]
    pub n_max: u32,
    #[serde(default = "default_eta")]
    pub eta_detect: f64,
    #[serde(default = "default_eps_max")]
    pub eps_max: f64,
    /// Scalar gain on the feedback law, `u = -gain * eps * g^T grad`.
    #[serde(default = "default_gain")]
    pub gain: f64,
    #[serde(default)]
    pub idle: IdlePolicy,
    #[serde(default)]
    pub relaxed: bool,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

/// Picks `rho_max` strictly inside `(lo, rho_opt)`; `None` if that interval is empty.
fn choose_rho_max(lo: f64, rho_opt: f64, frac: f64) -> Option<f64> {
    if lo < rho_opt {
        let v = lo + frac * (rho_opt - lo);
        (v > lo && v < rho_opt).then_some(v)
    } else {
        None
    }
}

fn choose_r(rho_max: f64, cfg: &ControllerConfig) -> f64 {
    let ok = cfg.r < rho_max && (cfg.relaxed || cfg.r > 0.0);
    if ok {
        cfg.r
    } else if rho_max > 0.0 {
        0.5 * rho_max
    } else {
        rho_max - 1.0
    }
}

fn t_star_for(phi: &PhiFormula, frac: f64) -> f64 {
    if phi.is_eventually() {
        phi.a + frac.clamp(0.0, 1.0) * (phi.b - phi.a)
    } else {
        phi.a
    }
}

/// Decay rate reaching `r` at `t_star` (measured from the anchor), or 0 if
/// the floor is already above `r`.
fn decay_rate(gamma_ref: f64, gamma_inf: f64, rho_max: f64, r: f64, horizon: f64) -> Result<f64, FunnelError> {
    if -gamma_ref + rho_max >= r {
        return Ok(0.0);
    }
    if horizon <= 0.0 {
        return Err(FunnelError::DegenerateWindow {
            t_star_hat: horizon,
            t_now: 0.0,
        });
    }
    let ratio = (r + gamma_inf - rho_max) / (-(gamma_ref - gamma_inf));
    Ok(-ratio.ln() / horizon)
}

/// Initial funnel for unit `phi` from the robustness at `x(0)`.
pub fn select_initial_params(
    phi: &PhiFormula,
    rho0: f64,
    rho_opt: f64,
    cfg: &ControllerConfig,
) -> Result<FunnelParams, FunnelError> {
    if rho_opt <= 0.0 && !cfg.relaxed {
        return Err(FunnelError::InfeasibleTask(rho_opt));
    }
    let t_star = t_star_for(phi, cfg.tstar_frac);
    let lo = if cfg.relaxed { rho0 } else { rho0.max(0.0) };
    let rho_max = choose_rho_max(lo, rho_opt, cfg.rho_max_frac)
        .ok_or_else(|| FunnelError::BadInitial(format!("no room for rho_max in ({lo}, {rho_opt})")))?;
    let r = choose_r(rho_max, cfg);
    if t_star == 0.0 && rho0 <= r {
        return Err(FunnelError::BadInitial(format!(
            "t* = 0 requires initial robustness {rho0} > r = {r}"
        )));
    }
    let mut gamma0 = cfg.gamma0_scale * (rho_max - rho0);
    if t_star == 0.0 {
        gamma0 = gamma0.min(rho_max - r);
    }
    let gamma_inf = cfg.gamma_inf_frac * gamma0.min(rho_max - r);
    let l = decay_rate(gamma0, gamma_inf, rho_max, r, t_star)?;
    Ok(FunnelParams {
        t_star,
        rho_max,
        r,
        gamma: GammaParams {
            gamma_ref: gamma0,
            gamma_inf,
            l,
            t_ref: 0.0,
        },
    })
}

/// Performance function through `gamma_r` at `t_now` whose floor reaches `r_hat` by
/// `t_star_hat`, with an explicit `gamma_inf`.
pub fn recompute_gamma_with_inf(
    gamma_r: f64,
    gamma_inf: f64,
    rho_max_hat: f64,
    r_hat: f64,
    t_now: f64,
    t_star_hat: f64,
) -> Result<GammaParams, FunnelError> {
    if !(gamma_r > 0.0) || !(gamma_inf > 0.0) || gamma_inf > gamma_r {
        return Err(FunnelError::InvalidParams(format!(
            "need 0 < gamma_inf = {gamma_inf} <= gamma_r = {gamma_r}"
        )));
    }
    let l = decay_rate(gamma_r, gamma_inf, rho_max_hat, r_hat, t_star_hat - t_now)
        .map_err(|_| FunnelError::DegenerateWindow { t_star_hat, t_now })?;
    Ok(GammaParams {
        gamma_ref: gamma_r,
        gamma_inf,
        l,
        t_ref: t_now,
    })
}

pub fn recompute_gamma(
    gamma_r: f64,
    rho_max_hat: f64,
    r_hat: f64,
    t_now: f64,
    t_star_hat: f64,
    cfg: &ControllerConfig,
) -> Result<GammaParams, FunnelError> {
    if !(rho_max_hat > r_hat) {
        return Err(FunnelError::InvalidParams(format!(
            "rho_max = {rho_max_hat} <= r = {r_hat}"
        )));
    }
    let gamma_inf = cfg.gamma_inf_frac * gamma_r.min(rho_max_hat - r_hat);
    recompute_gamma_with_inf(gamma_r, gamma_inf, rho_max_hat, r_hat, t_now, t_star_hat)
}

/// Like [`recompute_gamma`], but a window that has already closed yields a
/// constant funnel (`l = 0`) instead of an error.
pub fn rebuild_gamma(
    gamma_r: f64,
    rho_max_hat: f64,
    r_hat: f64,
    t_now: f64,
    t_star_hat: f64,
    cfg: &ControllerConfig,
) -> Result<GammaParams, FunnelError> {
    match recompute_gamma(gamma_r, rho_max_hat, r_hat, t_now, t_star_hat, cfg) {
        Err(FunnelError::DegenerateWindow { .. }) => {
            let gamma_inf = cfg.gamma_inf_frac * gamma_r.min(rho_max_hat - r_hat);
            Ok(GammaParams {
                gamma_ref: gamma_r,
                gamma_inf,
                l: 0.0,
                t_ref: t_now,
            })
        }
        other => other,
    }
}

/// Fresh funnel for `phi` after a satisfaction jump, chosen from the current state.
pub fn post_sat_params(
    phi: &PhiFormula,
    rho_now: f64,
    rho_opt: f64,
    t_now: f64,
    cfg: &ControllerConfig,
) -> Result<FunnelParams, FunnelError> {
    if rho_opt <= 0.0 && !cfg.relaxed {
        return Err(FunnelError::InfeasibleTask(rho_opt));
    }
    let t_star = if phi.is_eventually() { phi.b } else { phi.a };
    let lo = if cfg.relaxed { rho_now } else { rho_now.max(0.0) };
    // Already at the optimum: lift the ceiling above it instead.
    let rho_max = choose_rho_max(lo, rho_opt, cfg.rho_max_frac).unwrap_or(rho_opt + cfg.sigma);
    let r = choose_r(rho_max, cfg);
    let mut gamma_r = cfg.gamma0_scale * (rho_max - rho_now);
    if t_star <= t_now && rho_now > r {
        gamma_r = gamma_r.min(rho_max - r);
    }
    let gamma = rebuild_gamma(gamma_r, rho_max, r, t_now, t_star, cfg)?;
    Ok(FunnelParams {
        t_star,
        rho_max,
        r,
        gamma,
    })
}
