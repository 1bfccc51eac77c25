use std::collections::BTreeSet;
use std::fmt;

/// Agent identifier as written in formulas and scenario files (1-based).
pub type AgentId = u32;

/// Number of leading state components that make up an agent's planar position.
pub const PLANAR_DIM: usize = 2;

/// State component that holds an agent's heading, in radians.
pub const HEADING_INDEX: usize = 2;

/// A reference to one scalar state component of one agent (0-based component).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Component {
    pub agent: AgentId,
    pub index: usize,
}

/// Concave predicate shapes supported by the fragment.
#[derive(Debug, Clone, PartialEq)]
pub enum PredicateAtom {
    /// `sum_k coeff_k * x_k - bound >= 0`.
    Linear { terms: Vec<(f64, Component)>, bound: f64 },
    /// `radius - ||p_agent - center||`, over the first `center.len()` components.
    BallDistToPoint {
        agent: AgentId,
        center: Vec<f64>,
        radius: f64,
    },
    /// `radius - ||p_a - p_b||` over the planar position.
    BallDistPair { a: AgentId, b: AgentId, radius: f64 },
    /// `lower < x_lhs - x_rhs < upper`; expands to two affine atoms.
    BandDiff {
        lhs: Component,
        rhs: Component,
        lower: f64,
        upper: f64,
    },
    /// `|deg(heading) - center_deg| < tol_deg`; expands to two affine atoms
    /// whose values are measured in degrees.
    AngleBand {
        agent: AgentId,
        center_deg: f64,
        tol_deg: f64,
    },
}

impl PredicateAtom {
    /// Whether `h` is affine in the state, i.e. `-h` is still concave.
    pub fn is_affine(&self) -> bool {
        matches!(self, PredicateAtom::Linear { .. })
    }

    pub fn agents(&self) -> BTreeSet<AgentId> {
        let mut out = BTreeSet::new();
        match self {
            PredicateAtom::Linear { terms, .. } => {
                out.extend(terms.iter().map(|(_, c)| c.agent));
            }
            PredicateAtom::BallDistToPoint { agent, .. } | PredicateAtom::AngleBand { agent, .. } => {
                out.insert(*agent);
            }
            PredicateAtom::BallDistPair { a, b, .. } => {
                out.insert(*a);
                out.insert(*b);
            }
            PredicateAtom::BandDiff { lhs, rhs, .. } => {
                out.insert(lhs.agent);
                out.insert(rhs.agent);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PsiFormula {
    True,
    Atom(PredicateAtom),
    /// Negation of an affine atom.
    NegAtom(PredicateAtom),
    Conjunction(Vec<PsiFormula>),
}

impl PsiFormula {
    pub fn agents(&self) -> BTreeSet<AgentId> {
        match self {
            PsiFormula::True => BTreeSet::new(),
            PsiFormula::Atom(a) | PsiFormula::NegAtom(a) => a.agents(),
            PsiFormula::Conjunction(parts) => parts.iter().flat_map(|p| p.agents()).collect(),
        }
    }

    /// True when the formula contains no predicate at all.
    pub fn is_trivial(&self) -> bool {
        match self {
            PsiFormula::True => true,
            PsiFormula::Atom(_) | PsiFormula::NegAtom(_) => false,
            PsiFormula::Conjunction(parts) => parts.iter().all(|p| p.is_trivial()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemporalOp {
    Always,
    Eventually,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhiFormula {
    pub op: TemporalOp,
    pub a: f64,
    pub b: f64,
    pub body: PsiFormula,
}

impl PhiFormula {
    pub fn is_eventually(&self) -> bool {
        self.op == TemporalOp::Eventually
    }
}

/// How the units of a task were written; only affects printing.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskShape {
    /// One unit, or a conjunction of units with ordered windows.
    Sequence,
    /// A nest of eventually operators; holds the relative window of each level.
    Nested { relative: Vec<(f64, f64)> },
}

/// A normalized task: an ordered list of temporal units pursued one after the other.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskFormula {
    pub units: Vec<PhiFormula>,
    pub shape: TaskShape,
}

impl TaskFormula {
    /// The task with no units, written `true`: its owner is free from the start.
    pub fn trivial() -> Self {
        TaskFormula {
            units: Vec::new(),
            shape: TaskShape::Sequence,
        }
    }

    pub fn single(phi: PhiFormula) -> Self {
        TaskFormula {
            units: vec![phi],
            shape: TaskShape::Sequence,
        }
    }

    /// Agents read by any predicate of any unit.
    pub fn agents(&self) -> BTreeSet<AgentId> {
        self.units.iter().flat_map(|u| u.body.agents()).collect()
    }

    pub fn is_trivial(&self) -> bool {
        self.units.iter().all(|u| u.body.is_trivial())
    }
}

/// Participating agents of a task owned by `owner`, in ascending id order.
pub fn participants(task: &TaskFormula, owner: AgentId) -> Vec<AgentId> {
    let mut set = task.agents();
    set.insert(owner);
    set.into_iter().collect()
}

/// Participating agents of a single temporal unit owned by `owner`.
pub fn unit_participants(phi: &PhiFormula, owner: AgentId) -> Vec<AgentId> {
    let mut set = phi.body.agents();
    set.insert(owner);
    set.into_iter().collect()
}

fn fmt_component(f: &mut fmt::Formatter<'_>, c: &Component) -> fmt::Result {
    write!(f, "{},{}", c.agent, c.index + 1)
}

impl fmt::Display for PredicateAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredicateAtom::Linear { terms, bound } => {
                write!(f, "lin(")?;
                for (k, (coeff, c)) in terms.iter().enumerate() {
                    if k > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{}*x(", coeff)?;
                    fmt_component(f, c)?;
                    write!(f, ")")?;
                }
                write!(f, ") >= {}", bound)
            }
            PredicateAtom::BallDistToPoint { agent, center, radius } => {
                write!(f, "dist({}, [", agent)?;
                for (k, v) in center.iter().enumerate() {
                    if k > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{}", v)?;
                }
                write!(f, "]) <= {}", radius)
            }
            PredicateAtom::BallDistPair { a, b, radius } => write!(f, "dist({}, {}) <= {}", a, b, radius),
            PredicateAtom::BandDiff { lhs, rhs, lower, upper } => {
                write!(f, "comp(")?;
                fmt_component(f, lhs)?;
                write!(f, ") - comp(")?;
                fmt_component(f, rhs)?;
                write!(f, ") in ({}, {})", lower, upper)
            }
            PredicateAtom::AngleBand {
                agent,
                center_deg,
                tol_deg,
            } => {
                write!(f, "angdeg({}) near {} tol {}", agent, center_deg, tol_deg)
            }
        }
    }
}

impl PsiFormula {
    fn fmt_term(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PsiFormula::Conjunction(_) => write!(f, "({})", self),
            other => write!(f, "{}", other),
        }
    }
}

impl fmt::Display for PsiFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PsiFormula::True => write!(f, "true"),
            PsiFormula::Atom(a) => write!(f, "{}", a),
            PsiFormula::NegAtom(a) => write!(f, "!{}", a),
            PsiFormula::Conjunction(parts) => {
                for (k, p) in parts.iter().enumerate() {
                    if k > 0 {
                        write!(f, " && ")?;
                    }
                    p.fmt_term(f)?;
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for PhiFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.op {
            TemporalOp::Always => "G",
            TemporalOp::Eventually => "F",
        };
        write!(f, "{}[{}, {}] ", op, self.a, self.b)?;
        self.body.fmt_term(f)
    }
}

impl fmt::Display for TaskFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.shape {
            TaskShape::Sequence if self.units.is_empty() => write!(f, "true"),
            TaskShape::Sequence => {
                for (k, u) in self.units.iter().enumerate() {
                    if k > 0 {
                        write!(f, " && ")?;
                    }
                    write!(f, "{}", u)?;
                }
                Ok(())
            }
            TaskShape::Nested { relative } => {
                let last = self.units.len() - 1;
                for (k, (u, (c, d))) in self.units.iter().zip(relative).enumerate() {
                    if k < last {
                        write!(f, "F[{}, {}] (", c, d)?;
                        u.body.fmt_term(f)?;
                        write!(f, " && ")?;
                    } else {
                        write!(f, "F[{}, {}] ", c, d)?;
                        u.body.fmt_term(f)?;
                    }
                }
                for _ in 0..last {
                    write!(f, ")")?;
                }
                Ok(())
            }
        }
    }
}
