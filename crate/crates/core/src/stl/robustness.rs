//! Robustness of state formulas: exact (min) and smooth (log-sum-exp) semantics,
//! plus the softmin gradient used by the controller.

use std::collections::BTreeMap;

use super::ast::*;
use super::StlError;

/// Maps agent ids to their slice of a stacked state vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Layout {
    slots: BTreeMap<AgentId, (usize, usize)>,
    order: Vec<AgentId>,
    len: usize,
}

impl Layout {
    /// Agents stacked in the given order with the given state dimensions.
    pub fn new(agents: impl IntoIterator<Item = (AgentId, usize)>) -> Self {
        let mut layout = Layout::default();
        for (id, dim) in agents {
            layout.slots.insert(id, (layout.len, dim));
            layout.order.push(id);
            layout.len += dim;
        }
        layout
    }

    /// Smallest layout able to hold every component a formula reads: each agent gets
    /// `max(referenced component) + 1` components, ascending by id.
    pub fn inferred(psi: &PsiFormula) -> Self {
        let mut dims: BTreeMap<AgentId, usize> = BTreeMap::new();
        collect_dims(psi, &mut dims);
        Layout::new(dims)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn agents(&self) -> &[AgentId] {
        &self.order
    }

    /// `(offset, dim)` of an agent.
    pub fn slot(&self, agent: AgentId) -> Option<(usize, usize)> {
        self.slots.get(&agent).copied()
    }

    pub fn block<'x>(&self, x: &'x [f64], agent: AgentId) -> Option<&'x [f64]> {
        self.slot(agent).map(|(o, d)| &x[o..o + d])
    }

    fn index(&self, c: Component) -> Result<usize, StlError> {
        match self.slots.get(&c.agent) {
            Some(&(offset, dim)) if c.index < dim => Ok(offset + c.index),
            Some(_) => Err(StlError::SelectorOutOfRange(format!(
                "agent {} has no component {}",
                c.agent,
                c.index + 1
            ))),
            None => Err(StlError::SelectorOutOfRange(format!(
                "agent {} is not in the state",
                c.agent
            ))),
        }
    }

    fn planar(&self, agent: AgentId, dims: usize) -> Result<Vec<usize>, StlError> {
        (0..dims).map(|index| self.index(Component { agent, index })).collect()
    }
}

fn collect_dims(psi: &PsiFormula, dims: &mut BTreeMap<AgentId, usize>) {
    let mut need = |agent: AgentId, n: usize| {
        let e = dims.entry(agent).or_insert(0);
        *e = (*e).max(n);
    };
    match psi {
        PsiFormula::True => {}
        PsiFormula::Conjunction(parts) => parts.iter().for_each(|p| collect_dims(p, dims)),
        PsiFormula::Atom(a) | PsiFormula::NegAtom(a) => match a {
            PredicateAtom::Linear { terms, .. } => terms.iter().for_each(|(_, c)| need(c.agent, c.index + 1)),
            PredicateAtom::BallDistToPoint { agent, center, .. } => need(*agent, center.len()),
            PredicateAtom::BallDistPair { a, b, .. } => {
                need(*a, PLANAR_DIM);
                need(*b, PLANAR_DIM);
            }
            PredicateAtom::BandDiff { lhs, rhs, .. } => {
                need(lhs.agent, lhs.index + 1);
                need(rhs.agent, rhs.index + 1);
            }
            PredicateAtom::AngleBand { agent, .. } => need(*agent, HEADING_INDEX + 1),
        },
    }
}

/// One concave scalar function of the stacked state.
#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    /// `sum coeff * x[idx] + offset`.
    Affine { coeffs: Vec<(usize, f64)>, offset: f64 },
    /// `radius - ||x[a] - target||`, `target` being either other state slots or a fixed point.
    Ball {
        a: Vec<usize>,
        target: BallTarget,
        radius: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum BallTarget {
    Point(Vec<f64>),
    Slots(Vec<usize>),
}

/// Distances below this are treated as the singular center of a distance atom.
pub const SINGULAR_RADIUS: f64 = 1e-12;

impl Term {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Term::Affine { coeffs, offset } => coeffs.iter().fold(*offset, |acc, &(i, c)| acc + c * x[i]),
            Term::Ball { a, target, radius } => radius - self.distance(a, target, x),
        }
    }

    fn distance(&self, a: &[usize], target: &BallTarget, x: &[f64]) -> f64 {
        let sq: f64 = match target {
            BallTarget::Point(p) => a.iter().zip(p).map(|(&i, c)| (x[i] - c).powi(2)).sum(),
            BallTarget::Slots(b) => a.iter().zip(b).map(|(&i, &j)| (x[i] - x[j]).powi(2)).sum(),
        };
        sq.sqrt()
    }

    /// Adds `weight * grad(term)` into `out`. Returns `true` if the point sits on the
    /// singular center of a distance term, where the zero supergradient is used.
    pub fn add_gradient(&self, x: &[f64], weight: f64, out: &mut [f64]) -> bool {
        match self {
            Term::Affine { coeffs, .. } => {
                for &(i, c) in coeffs {
                    out[i] += weight * c;
                }
                false
            }
            Term::Ball { a, target, .. } => {
                let dist = self.distance(a, target, x);
                if dist < SINGULAR_RADIUS {
                    return true;
                }
                match target {
                    BallTarget::Point(p) => {
                        for (&i, c) in a.iter().zip(p) {
                            out[i] -= weight * (x[i] - c) / dist;
                        }
                    }
                    BallTarget::Slots(b) => {
                        for (&i, &j) in a.iter().zip(b) {
                            let g = weight * (x[i] - x[j]) / dist;
                            out[i] -= g;
                            out[j] += g;
                        }
                    }
                }
                false
            }
        }
    }

    /// A point at which the term attains its maximum, restricted to the slots it reads.
    pub(crate) fn reference(&self) -> Option<(&[usize], &[f64])> {
        match self {
            Term::Ball {
                a,
                target: BallTarget::Point(p),
                ..
            } => Some((a.as_slice(), p.as_slice())),
            _ => None,
        }
    }
}

/// A state formula resolved against a layout: a flat conjunction of concave terms.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledPsi {
    terms: Vec<Term>,
    dim: usize,
}

/// Softmin evaluation result.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothEval {
    pub value: f64,
    /// Set when a distance term was evaluated at its singular center.
    pub singular: bool,
}

impl CompiledPsi {
    pub fn compile(psi: &PsiFormula, layout: &Layout) -> Result<Self, StlError> {
        let mut terms = Vec::new();
        lower(psi, layout, false, &mut terms)?;
        Ok(CompiledPsi {
            terms,
            dim: layout.len(),
        })
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check(&self, x: &[f64]) -> Result<(), StlError> {
        if x.len() < self.dim {
            Err(StlError::SelectorOutOfRange(format!(
                "state has {} components, formula needs {}",
                x.len(),
                self.dim
            )))
        } else {
            Ok(())
        }
    }

    /// `-ln sum exp(-rho_k)`, evaluated as `m - ln sum exp(-(rho_k - m))` with `m = min rho_k`.
    /// A formula without terms (`true`) has robustness `+inf`.
    pub fn smooth(&self, x: &[f64]) -> f64 {
        match self.terms.len() {
            0 => f64::INFINITY,
            1 => self.terms[0].value(x),
            _ => {
                let values: Vec<f64> = self.terms.iter().map(|t| t.value(x)).collect();
                softmin(&values)
            }
        }
    }

    pub fn crisp(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.value(x)).fold(f64::INFINITY, f64::min)
    }

    /// Smooth robustness and its gradient over the whole stacked state.
    pub fn smooth_with_grad(&self, x: &[f64], grad: &mut [f64]) -> SmoothEval {
        grad.iter_mut().for_each(|g| *g = 0.0);
        match self.terms.len() {
            0 => SmoothEval {
                value: f64::INFINITY,
                singular: false,
            },
            1 => {
                let singular = self.terms[0].add_gradient(x, 1.0, grad);
                SmoothEval {
                    value: self.terms[0].value(x),
                    singular,
                }
            }
            _ => {
                let values: Vec<f64> = self.terms.iter().map(|t| t.value(x)).collect();
                let weights = softmin_weights(&values);
                debug_assert!(
                    weights.iter().all(|w| *w >= 0.0) && (weights.iter().sum::<f64>() - 1.0).abs() < 1e-9,
                    "softmin weights must be a convex combination"
                );
                let mut singular = false;
                for (t, w) in self.terms.iter().zip(&weights) {
                    singular |= t.add_gradient(x, *w, grad);
                }
                SmoothEval {
                    value: softmin(&values),
                    singular,
                }
            }
        }
    }
}

/// Shift-stable `-ln sum_k exp(-v_k)`.
pub fn softmin(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::INFINITY, f64::min);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = values.iter().map(|v| (-(v - m)).exp()).sum();
    m - s.ln()
}

/// Weights `exp(-v_k) / sum_j exp(-v_j)`, computed with the same shift.
pub fn softmin_weights(values: &[f64]) -> Vec<f64> {
    let m = values.iter().copied().fold(f64::INFINITY, f64::min);
    let e: Vec<f64> = values.iter().map(|v| (-(v - m)).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn lower(psi: &PsiFormula, layout: &Layout, negate: bool, out: &mut Vec<Term>) -> Result<(), StlError> {
    match psi {
        PsiFormula::True => Ok(()),
        PsiFormula::Conjunction(parts) => parts.iter().try_for_each(|p| lower(p, layout, negate, out)),
        PsiFormula::Atom(a) => lower_atom(a, layout, negate, out),
        PsiFormula::NegAtom(a) => {
            if !a.is_affine() {
                return Err(StlError::NonConcaveNegation(a.to_string()));
            }
            lower_atom(a, layout, !negate, out)
        }
    }
}

fn affine(coeffs: Vec<(usize, f64)>, offset: f64, negate: bool) -> Term {
    if negate {
        Term::Affine {
            coeffs: coeffs.into_iter().map(|(i, c)| (i, -c)).collect(),
            offset: -offset,
        }
    } else {
        Term::Affine { coeffs, offset }
    }
}

fn lower_atom(atom: &PredicateAtom, layout: &Layout, negate: bool, out: &mut Vec<Term>) -> Result<(), StlError> {
    match atom {
        PredicateAtom::Linear { terms, bound } => {
            let coeffs = terms
                .iter()
                .map(|(c, comp)| Ok((layout.index(*comp)?, *c)))
                .collect::<Result<Vec<_>, StlError>>()?;
            out.push(affine(coeffs, -bound, negate));
        }
        PredicateAtom::BallDistToPoint { agent, center, radius } => {
            out.push(Term::Ball {
                a: layout.planar(*agent, center.len())?,
                target: BallTarget::Point(center.clone()),
                radius: *radius,
            });
        }
        PredicateAtom::BallDistPair { a, b, radius } => {
            out.push(Term::Ball {
                a: layout.planar(*a, PLANAR_DIM)?,
                target: BallTarget::Slots(layout.planar(*b, PLANAR_DIM)?),
                radius: *radius,
            });
        }
        PredicateAtom::BandDiff { lhs, rhs, lower, upper } => {
            let (i, j) = (layout.index(*lhs)?, layout.index(*rhs)?);
            // (x_i - x_j) - lower >= 0 and upper - (x_i - x_j) >= 0
            out.push(affine(vec![(i, 1.0), (j, -1.0)], -lower, negate));
            out.push(affine(vec![(i, -1.0), (j, 1.0)], *upper, negate));
        }
        PredicateAtom::AngleBand {
            agent,
            center_deg,
            tol_deg,
        } => {
            let k = layout.index(Component {
                agent: *agent,
                index: HEADING_INDEX,
            })?;
            let deg = 180.0 / std::f64::consts::PI;
            // tol - (deg*x - c) >= 0 and tol + (deg*x - c) >= 0
            out.push(affine(vec![(k, -deg)], tol_deg + center_deg, negate));
            out.push(affine(vec![(k, deg)], tol_deg - center_deg, negate));
        }
    }
    Ok(())
}

pub fn smooth_robustness(psi: &PsiFormula, layout: &Layout, x: &[f64]) -> Result<f64, StlError> {
    let c = CompiledPsi::compile(psi, layout)?;
    c.check(x)?;
    Ok(c.smooth(x))
}

pub fn smooth_robustness_grad(psi: &PsiFormula, layout: &Layout, x: &[f64]) -> Result<Vec<f64>, StlError> {
    let c = CompiledPsi::compile(psi, layout)?;
    c.check(x)?;
    let mut g = vec![0.0; layout.len()];
    c.smooth_with_grad(x, &mut g);
    Ok(g)
}

pub fn crisp_robustness(psi: &PsiFormula, layout: &Layout, x: &[f64]) -> Result<f64, StlError> {
    let c = CompiledPsi::compile(psi, layout)?;
    c.check(x)?;
    Ok(c.crisp(x))
}
