//! Temporal robustness over uniformly sampled trajectories.

use super::ast::{PhiFormula, TaskFormula, TemporalOp};
use super::robustness::{CompiledPsi, Layout};
use super::StlError;

/// Slack used when deciding whether a sample timestamp lies on a window boundary.
pub const TIME_EPS: f64 = 1e-9;

/// A sampled trajectory of the stacked state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub layout: Layout,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

/// Which per-sample state semantics to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Semantics {
    Smooth,
    Crisp,
}

impl Trace {
    pub fn new(layout: Layout) -> Self {
        Trace {
            layout,
            times: Vec::new(),
            states: Vec::new(),
        }
    }

    pub fn push(&mut self, t: f64, x: Vec<f64>) {
        self.times.push(t);
        self.states.push(x);
    }

    /// Indices of the samples inside the closed window `[lo, hi]`.
    pub fn window(&self, lo: f64, hi: f64) -> Result<std::ops::Range<usize>, StlError> {
        let (first, last) = match (self.times.first(), self.times.last()) {
            (Some(f), Some(l)) => (*f, *l),
            _ => return Err(StlError::WindowNotCovered(format!("empty trace, window [{lo}, {hi}]"))),
        };
        if first > lo + TIME_EPS || last < hi - TIME_EPS {
            return Err(StlError::WindowNotCovered(format!(
                "trace spans [{first}, {last}], window is [{lo}, {hi}]"
            )));
        }
        let start = self.times.partition_point(|&t| t < lo - TIME_EPS);
        let end = self.times.partition_point(|&t| t <= hi + TIME_EPS);
        if start >= end {
            return Err(StlError::WindowNotCovered(format!("no sample inside [{lo}, {hi}]")));
        }
        Ok(start..end)
    }
}

pub fn phi_robustness(phi: &PhiFormula, trace: &Trace, t0: f64, semantics: Semantics) -> Result<f64, StlError> {
    let psi = CompiledPsi::compile(&phi.body, &trace.layout)?;
    let range = trace.window(t0 + phi.a, t0 + phi.b)?;
    let values = trace.states[range].iter().map(|x| match semantics {
        Semantics::Smooth => psi.smooth(x),
        Semantics::Crisp => psi.crisp(x),
    });
    Ok(match phi.op {
        TemporalOp::Eventually => values.fold(f64::NEG_INFINITY, f64::max),
        TemporalOp::Always => values.fold(f64::INFINITY, f64::min),
    })
}

/// Robustness of a task at `t0`: the minimum over its units.
pub fn task_robustness(task: &TaskFormula, trace: &Trace, t0: f64, semantics: Semantics) -> Result<f64, StlError> {
    task.units.iter().try_fold(f64::INFINITY, |acc, u| {
        Ok(acc.min(phi_robustness(u, trace, t0, semantics)?))
    })
}

/// Smooth-semantics robustness of a single unit, as used for verdicts.
pub fn trace_robustness(phi: &PhiFormula, trace: &Trace, t0: f64) -> Result<f64, StlError> {
    phi_robustness(phi, trace, t0, Semantics::Smooth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stl::parse_phi;

    /// Trace of a single scalar agent whose state equals the desired robustness
    /// under `lin(1*x(1,1)) >= 0`.
    fn scalar_trace(values: &[f64], dt: f64) -> Trace {
        let mut tr = Trace::new(Layout::new([(1, 1)]));
        for (k, v) in values.iter().enumerate() {
            tr.push(k as f64 * dt, vec![*v]);
        }
        tr
    }

    #[test]
    fn eventually_takes_max_always_takes_min() {
        let tr = scalar_trace(&[9.0, -1.0, 0.2, -0.3, 9.0], 1.0);
        let f = parse_phi("F[1,3] lin(1*x(1,1)) >= 0").unwrap();
        assert_eq!(trace_robustness(&f, &tr, 0.0).unwrap(), 0.2);
        let tr = scalar_trace(&[-9.0, 0.5, 0.1, 0.3, -9.0], 1.0);
        let g = parse_phi("G[1,3] lin(1*x(1,1)) >= 0").unwrap();
        assert_eq!(trace_robustness(&g, &tr, 0.0).unwrap(), 0.1);
    }

    #[test]
    fn constant_trace() {
        let tr = scalar_trace(&[0.7; 11], 0.5);
        for src in ["F[1,4] lin(1*x(1,1)) >= 0", "G[1,4] lin(1*x(1,1)) >= 0"] {
            assert_eq!(trace_robustness(&parse_phi(src).unwrap(), &tr, 0.0).unwrap(), 0.7);
        }
    }

    #[test]
    fn window_beyond_trace_is_reported() {
        let tr = scalar_trace(&[0.0; 5], 1.0);
        let f = parse_phi("F[2,6] lin(1*x(1,1)) >= 0").unwrap();
        assert!(matches!(
            trace_robustness(&f, &tr, 0.0),
            Err(StlError::WindowNotCovered(_))
        ));
        assert!(matches!(
            trace_robustness(&f, &tr, -3.0),
            Err(StlError::WindowNotCovered(_))
        ));
    }

    #[test]
    fn window_edges_are_closed() {
        let tr = scalar_trace(&[5.0, 1.0, 2.0, 3.0, 5.0], 0.1);
        let g = parse_phi("G[0.1,0.3] lin(1*x(1,1)) >= 0").unwrap();
        // 0.1 * 3 != 0.3 exactly; the boundary sample must still count
        assert_eq!(trace_robustness(&g, &tr, 0.0).unwrap(), 1.0);
        let f = parse_phi("F[0.1,0.3] lin(1*x(1,1)) >= 0").unwrap();
        assert_eq!(trace_robustness(&f, &tr, 0.0).unwrap(), 3.0);
    }
}
