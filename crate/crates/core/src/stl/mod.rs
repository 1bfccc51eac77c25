//! The STL fragment: state formulas built from concave predicates, one temporal
//! operator on top, and sequences of such units.

mod ast;
mod optimize;
mod parser;
mod robustness;
mod trace;

pub use ast::*;
pub use optimize::{rho_opt, rho_opt_inferred, RhoOpt, GRAD_TOL, MAX_ITERS};
pub use parser::{parse_phi, parse_task};
pub use robustness::{
    crisp_robustness, smooth_robustness, smooth_robustness_grad, softmin, softmin_weights, BallTarget, CompiledPsi,
    Layout, SmoothEval, Term, SINGULAR_RADIUS,
};
pub use trace::{phi_robustness, task_robustness, trace_robustness, Semantics, Trace, TIME_EPS};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StlError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("time bounds out of order: {0}")]
    TimeBoundOrder(String),
    #[error("negation of a non-affine predicate is not concave: {0}")]
    NonConcaveNegation(String),
    #[error("selector out of range: {0}")]
    SelectorOutOfRange(String),
    #[error("trace does not cover the window: {0}")]
    WindowNotCovered(String),
    #[error("non-finite iterate: {0}")]
    NonFinite(String),
}
