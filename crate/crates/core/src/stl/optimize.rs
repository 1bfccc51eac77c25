//! Supremum of the smooth state robustness by gradient ascent.

use super::ast::PsiFormula;
use super::robustness::{CompiledPsi, Layout};
use super::StlError;

pub const GRAD_TOL: f64 = 1e-8;
pub const MAX_ITERS: usize = 10_000;
const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1e-30;
const DIVERGENCE: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct RhoOpt {
    pub value: f64,
    /// Maximizer over the layout's stacked state.
    pub argmax: Vec<f64>,
    pub iterations: usize,
}

/// `sup_x rho^psi(x)` over the agents of `layout`.
///
/// Starts from the centroid of the point-ball centers (each agent with its own
/// ball center starts there), then ascends with a backtracking line search.
pub fn rho_opt(psi: &PsiFormula, layout: &Layout) -> Result<RhoOpt, StlError> {
    let compiled = CompiledPsi::compile(psi, layout)?;
    let mut x = initial_iterate(&compiled, layout.len());
    if compiled.terms().is_empty() {
        return Ok(RhoOpt {
            value: f64::INFINITY,
            argmax: x,
            iterations: 0,
        });
    }

    let n = x.len();
    let mut grad = vec![0.0; n];
    let mut value = compiled.smooth_with_grad(&x, &mut grad).value;
    let mut step = 1.0;
    let mut iterations = 0;
    let mut trial = vec![0.0; n];
    let mut trial_grad = vec![0.0; n];

    while iterations < MAX_ITERS {
        let g2: f64 = grad.iter().map(|g| g * g).sum();
        if g2.sqrt() < GRAD_TOL {
            break;
        }
        iterations += 1;
        let mut accepted = false;
        while step > MIN_STEP {
            for i in 0..n {
                trial[i] = x[i] + step * grad[i];
            }
            let v = compiled.smooth_with_grad(&trial, &mut trial_grad).value;
            if v >= value + ARMIJO * step * g2 {
                std::mem::swap(&mut x, &mut trial);
                std::mem::swap(&mut grad, &mut trial_grad);
                value = v;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !value.is_finite() || x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE) {
            return Err(StlError::NonFinite(format!(
                "ascent diverged after {iterations} iterations (robustness unbounded above)"
            )));
        }
        if !accepted {
            // Stuck on a kink: no ascent direction is resolvable at this scale.
            break;
        }
        step *= 2.0;
    }

    // A distance peak may be a non-smooth maximizer; check the ball centers directly.
    for candidate in reference_candidates(&compiled, &x) {
        let v = compiled.smooth(&candidate);
        if v > value {
            value = v;
            x = candidate;
        }
    }

    Ok(RhoOpt {
        value,
        argmax: x,
        iterations,
    })
}

/// Convenience: optimize over the smallest layout the formula reads.
pub fn rho_opt_inferred(psi: &PsiFormula) -> Result<RhoOpt, StlError> {
    rho_opt(psi, &Layout::inferred(psi))
}

fn initial_iterate(psi: &CompiledPsi, n: usize) -> Vec<f64> {
    let refs: Vec<_> = psi.terms().iter().filter_map(|t| t.reference()).collect();
    let dims = refs.iter().map(|(_, p)| p.len()).max().unwrap_or(0);
    let mut centroid = vec![0.0; dims];
    let mut counts = vec![0usize; dims];
    for (_, p) in &refs {
        for (k, v) in p.iter().enumerate() {
            centroid[k] += v;
            counts[k] += 1;
        }
    }
    for (c, n) in centroid.iter_mut().zip(&counts) {
        if *n > 0 {
            *c /= *n as f64;
        }
    }
    let mut x = vec![0.0; n];
    // Positional components referenced by any ball start at the centroid.
    for t in psi.terms() {
        if let super::robustness::Term::Ball { a, target, .. } = t {
            let slots: Vec<&usize> = match target {
                super::robustness::BallTarget::Slots(b) => a.iter().chain(b.iter()).collect(),
                super::robustness::BallTarget::Point(_) => a.iter().collect(),
            };
            let width = a.len();
            for (k, &i) in slots.iter().enumerate() {
                let d = k % width;
                if d < dims {
                    x[*i] = centroid[d];
                }
            }
        }
    }
    for (slots, p) in &refs {
        for (&i, v) in slots.iter().zip(p.iter()) {
            x[i] = *v;
        }
    }
    x
}

fn reference_candidates(psi: &CompiledPsi, x: &[f64]) -> Vec<Vec<f64>> {
    psi.terms()
        .iter()
        .filter_map(|t| t.reference())
        .map(|(slots, p)| {
            let mut c = x.to_vec();
            for (&i, v) in slots.iter().zip(p) {
                c[i] = *v;
            }
            c
        })
        .collect()
}
