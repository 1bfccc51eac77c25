//! Prescribed-performance (funnel) control of multi-agent systems under signal
//! temporal logic tasks, with an online hybrid detection and repair scheme.
//!
//! The crate is organized bottom-up:
//!
//! - [`stl`]: formula grammar, smooth and exact robustness, trace evaluation, `rho_opt`.
//! - [`funnel`]: performance functions, error transformation, parameter selection and repair rules.
//! - [`world`]: agent dynamics, couplings and bounded noise.
//! - [`topology`]: dependency clusters and communication checks.
//! - [`controller`]: the funnel feedback law and its collaborative and idle variants.
//! - [`hybrid`]: per-agent jump detection and jump maps.
//! - [`sim`]: fixed-step closed-loop simulation.
//! - [`scenario`] and [`io`]: scenario files, logs, and the command implementations.

pub mod controller;
pub mod funnel;
pub mod hybrid;
pub mod io;
pub mod scenario;
pub mod sim;
pub mod stl;
pub mod topology;
pub mod world;

pub use stl::AgentId;
