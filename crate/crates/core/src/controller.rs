//! Continuous feedback laws.

use serde::{Deserialize, Serialize};

use crate::funnel::{clamped_transform, FunnelParams};
use crate::world::{DynamicsModel, WorldError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ControlError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("collaborating agent's funnel differs from the initiator's")]
    ParamMismatch,
    #[error("gradient block has length {got}, expected {expected}")]
    GradientMismatch { expected: usize, got: usize },
}

/// What a free agent does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IdlePolicy {
    #[default]
    Zero,
    /// `u = -g(x)^T x`, keeping the state bounded.
    Stabilizing,
}

/// Everything one agent needs to evaluate its law at one instant.
#[derive(Debug, Clone, Copy)]
pub struct ControlContext<'a> {
    pub model: &'a DynamicsModel,
    pub x: &'a [f64],
    /// This agent's block of the gradient of the active objective.
    pub grad: &'a [f64],
    pub rho: f64,
    pub funnel: &'a FunnelParams,
    pub t: f64,
    pub gain: f64,
    pub eps_max: f64,
    pub u_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub u: Vec<f64>,
    pub xi: f64,
    /// Clamped transformed error actually used.
    pub eps: f64,
    pub saturated: bool,
}

/// Rescales `u` onto the ball of radius `u_max`, preserving direction.
pub fn saturate(u: &mut [f64], u_max: Option<f64>) -> bool {
    let Some(limit) = u_max else { return false };
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > limit && norm > 0.0 {
        let s = limit / norm;
        u.iter_mut().for_each(|v| *v *= s);
        true
    } else {
        false
    }
}

/// `u = -gain * eps * g(x)^T grad`, with `eps` clamped and `u` saturated.
pub fn ppc_control(ctx: &ControlContext<'_>) -> Result<ControlOutput, ControlError> {
    let g = ctx.model.actuation(ctx.x)?;
    if ctx.grad.len() != g.nrows() {
        return Err(ControlError::GradientMismatch {
            expected: g.nrows(),
            got: ctx.grad.len(),
        });
    }
    let xi = ctx.funnel.xi(ctx.rho, ctx.t);
    let eps = clamped_transform(xi, ctx.eps_max);
    let mut u: Vec<f64> = (0..g.ncols())
        .map(|c| {
            let dot: f64 = (0..g.nrows()).map(|r| g[(r, c)] * ctx.grad[r]).sum();
            -ctx.gain * eps * dot
        })
        .collect();
    let saturated = saturate(&mut u, ctx.u_max);
    Ok(ControlOutput { u, xi, eps, saturated })
}

/// The feedback law applied to another agent's objective under the shared funnel.
pub fn collaborative_control(
    ctx: &ControlContext<'_>,
    initiator_funnel: &FunnelParams,
) -> Result<ControlOutput, ControlError> {
    if ctx.funnel != initiator_funnel {
        return Err(ControlError::ParamMismatch);
    }
    ppc_control(ctx)
}

pub fn idle_control(policy: IdlePolicy, model: &DynamicsModel, x: &[f64]) -> Result<Vec<f64>, ControlError> {
    match policy {
        IdlePolicy::Zero => Ok(vec![0.0; model.input_dim()]),
        IdlePolicy::Stabilizing => {
            let g = model.actuation(x)?;
            Ok((0..g.ncols())
                .map(|c| -(0..g.nrows()).map(|r| g[(r, c)] * x[r]).sum::<f64>())
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funnel::{inverse_transform, GammaParams};

    fn funnel(rho_max: f64, gamma: f64) -> FunnelParams {
        FunnelParams {
            t_star: 1.0,
            rho_max,
            r: 0.1,
            gamma: GammaParams {
                gamma_ref: gamma,
                gamma_inf: gamma,
                l: 0.0,
                t_ref: 0.0,
            },
        }
    }

    fn ctx<'a>(
        model: &'a DynamicsModel,
        x: &'a [f64],
        grad: &'a [f64],
        rho: f64,
        f: &'a FunnelParams,
    ) -> ControlContext<'a> {
        ControlContext {
            model,
            x,
            grad,
            rho,
            funnel: f,
            t: 0.0,
            gain: 1.0,
            eps_max: 1e3,
            u_max: None,
        }
    }

    #[test]
    fn midline_gives_zero_input() {
        let m = DynamicsModel::SingleIntegrator { n: 2 };
        let f = funnel(1.0, 2.0);
        let out = ppc_control(&ctx(&m, &[0.0, 0.0], &[3.0, -1.0], 0.0, &f)).unwrap();
        assert_eq!(out.xi, -0.5);
        assert!(out.u.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn eps_minus_two_doubles_gradient() {
        let m = DynamicsModel::SingleIntegrator { n: 2 };
        let f = funnel(1.0, 1.0);
        let xi = inverse_transform(-2.0);
        let rho = f.rho_max + xi;
        let out = ppc_control(&ctx(&m, &[0.0, 0.0], &[0.5, -1.5], rho, &f)).unwrap();
        assert!((out.eps + 2.0).abs() < 1e-12);
        assert!((out.u[0] - 1.0).abs() < 1e-12 && (out.u[1] + 3.0).abs() < 1e-12);
    }

    #[test]
    fn saturation_keeps_direction() {
        let m = DynamicsModel::SingleIntegrator { n: 2 };
        let f = funnel(1.0, 1.0);
        let rho = f.rho_max + inverse_transform(-2.0);
        let raw = ppc_control(&ctx(&m, &[0.0, 0.0], &[3.0, 4.0], rho, &f)).unwrap();
        let norm_raw = raw.u.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut c = ctx(&m, &[0.0, 0.0], &[3.0, 4.0], rho, &f);
        c.u_max = Some(norm_raw / 10.0);
        let sat = ppc_control(&c).unwrap();
        assert!(sat.saturated);
        let norm = sat.u.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - norm_raw / 10.0).abs() < 1e-12);
        assert!((sat.u[0] * raw.u[1] - sat.u[1] * raw.u[0]).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_gives_zero_input() {
        let m = DynamicsModel::omni();
        let f = funnel(1.0, 1.0);
        let out = ppc_control(&ctx(&m, &[1.0, 2.0, 0.3], &[0.0; 3], -0.9, &f)).unwrap();
        assert_eq!(out.u, vec![0.0; 3]);
    }

    #[test]
    fn collaboration_requires_shared_funnel() {
        let m = DynamicsModel::SingleIntegrator { n: 2 };
        let f = funnel(1.0, 1.0);
        let other = funnel(1.2, 1.0);
        let c = ctx(&m, &[0.0, 0.0], &[1.0, 0.0], 0.2, &f);
        assert_eq!(collaborative_control(&c, &other), Err(ControlError::ParamMismatch));
        assert_eq!(collaborative_control(&c, &f).unwrap(), ppc_control(&c).unwrap());
        // mirrored agents around a shared target get mirrored inputs
        let left = collaborative_control(&ctx(&m, &[-1.0, 0.0], &[1.0, 0.0], 0.2, &f), &f).unwrap();
        let right = collaborative_control(&ctx(&m, &[1.0, 0.0], &[-1.0, 0.0], 0.2, &f), &f).unwrap();
        assert_eq!(left.u[0], -right.u[0]);
    }

    #[test]
    fn idle_policies() {
        let m = DynamicsModel::SingleIntegrator { n: 2 };
        assert_eq!(idle_control(IdlePolicy::Zero, &m, &[1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(
            idle_control(IdlePolicy::Stabilizing, &m, &[1.0, 2.0]).unwrap(),
            vec![-1.0, -2.0]
        );
        let omni = DynamicsModel::omni();
        let x = [1.0, -2.0, 0.7];
        let g = omni.actuation(&x).unwrap();
        let expected = -(g.transpose() * nalgebra::DVector::from_column_slice(&x));
        let u = idle_control(IdlePolicy::Stabilizing, &omni, &x).unwrap();
        for (a, b) in u.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
