//! Agent dynamics `x_i' = f_i(x_i) + f_i^c(x) + g_i(x_i) u_i + w_i`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::AgentId;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WorldError {
    #[error("state has dimension {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DynamicsModel {
    SingleIntegrator {
        n: usize,
    },
    /// Three-wheeled omni-directional robot with state `(x, y, heading)`.
    OmniRobot {
        #[serde(rename = "R", default = "default_wheel_radius")]
        wheel_radius: f64,
        #[serde(rename = "L", default = "default_body_radius")]
        body_radius: f64,
    },
}

fn default_wheel_radius() -> f64 {
    0.02
}
fn default_body_radius() -> f64 {
    0.2
}

impl DynamicsModel {
    pub fn omni() -> Self {
        DynamicsModel::OmniRobot {
            wheel_radius: default_wheel_radius(),
            body_radius: default_body_radius(),
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            DynamicsModel::SingleIntegrator { n } => *n,
            DynamicsModel::OmniRobot { .. } => 3,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.state_dim()
    }

    fn check(&self, x: &[f64]) -> Result<(), WorldError> {
        if x.len() != self.state_dim() {
            return Err(WorldError::DimensionMismatch {
                expected: self.state_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn drift(&self, x: &[f64]) -> Result<Vec<f64>, WorldError> {
        self.check(x)?;
        Ok(vec![0.0; x.len()])
    }

    pub fn actuation(&self, x: &[f64]) -> Result<DMatrix<f64>, WorldError> {
        self.check(x)?;
        Ok(match self {
            DynamicsModel::SingleIntegrator { n } => DMatrix::identity(*n, *n),
            DynamicsModel::OmniRobot {
                wheel_radius,
                body_radius,
            } => {
                let (s, c) = x[2].sin_cos();
                let rot = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
                let g = rot * omni_body_map(*wheel_radius, *body_radius);
                DMatrix::from_column_slice(3, 3, g.as_slice())
            }
        })
    }
}

/// `(B^T)^{-1} R`: wheel speeds to body-frame velocity.
pub fn omni_body_map(wheel_radius: f64, body_radius: f64) -> Matrix3<f64> {
    let (s30, c30) = (std::f64::consts::FRAC_PI_6.sin(), std::f64::consts::FRAC_PI_6.cos());
    let b = Matrix3::new(0.0, c30, -c30, -1.0, s30, s30, body_radius, body_radius, body_radius);
    b.transpose().try_inverse().expect("wheel geometry is non-singular") * wheel_radius
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CouplingModel {
    #[default]
    NoCoupling,
    /// `clamp(gain * sum_j (x_j - x_i))` over the listed undirected edges.
    SaturatedConsensus {
        gain: f64,
        bound: f64,
        edges: Vec<(AgentId, AgentId)>,
    },
}

impl CouplingModel {
    pub fn coupling(&self, states: &BTreeMap<AgentId, &[f64]>, i: AgentId) -> Vec<f64> {
        let xi = states.get(&i).copied().unwrap_or(&[]);
        let mut out = vec![0.0; xi.len()];
        let CouplingModel::SaturatedConsensus { gain, bound, edges } = self else {
            return out;
        };
        for &(a, b) in edges {
            let j = match (a == i, b == i) {
                (true, false) => b,
                (false, true) => a,
                _ => continue,
            };
            if let Some(xj) = states.get(&j) {
                for (k, o) in out.iter_mut().enumerate().take(xj.len()) {
                    *o += gain * (xj[k] - xi[k]);
                }
            }
        }
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > *bound {
            let s = bound / norm;
            out.iter_mut().for_each(|v| *v *= s);
        }
        out
    }
}

/// Uniform noise in a per-agent box, addressable by `(step, agent)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub half_widths: BTreeMap<AgentId, Vec<f64>>,
    pub seed: u64,
}

impl NoiseModel {
    pub fn zero() -> Self {
        NoiseModel {
            half_widths: BTreeMap::new(),
            seed: 0,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.half_widths.values().flatten().all(|h| *h == 0.0)
    }

    /// Sample for `agent` during integration step `step`. The stream for each
    /// agent is independent and the position is derived from the step, so the
    /// result does not depend on call order.
    pub fn sample(&self, step: u64, agent: AgentId) -> Vec<f64> {
        let Some(h) = self.half_widths.get(&agent) else {
            return Vec::new();
        };
        if h.iter().all(|v| *v == 0.0) {
            return vec![0.0; h.len()];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(agent as u64);
        // two 32-bit words per f64 sample
        rng.set_word_pos(step as u128 * h.len() as u128 * 2);
        h.iter().map(|w| w * (2.0 * rng.gen::<f64>() - 1.0)).collect()
    }
}

pub fn sample_noise(model: &NoiseModel, step: u64, agent: AgentId) -> Vec<f64> {
    model.sample(step, agent)
}
