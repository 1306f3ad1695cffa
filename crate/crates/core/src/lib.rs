//! Optimal consumption and investment under loss aversion and
//! multiplicative habit formation.
//!
//! The solver shoots for the free boundary of the dual problem, inverts
//! the Legendre transform to obtain feedback policies in the
//! wealth-to-habit ratio, and provides independent checks: a
//! finite-difference policy-iteration solver, Monte-Carlo simulation of
//! the controlled state, and limiting-case benchmarks.

pub mod checks;
pub mod config;
pub mod dual;
pub mod error;
pub mod fd;
pub mod interp;
pub mod limits;
pub mod market;
pub mod numeric;
pub mod ode;
pub mod primal;
pub mod report;
pub mod simulate;
pub mod utility;

pub use config::Config;
pub use dual::{shoot_y0, DualSolution, Exit, SolverControls, Trajectory};
pub use error::{Error, Result};
pub use primal::{PolicyPoint, PrimalSolution};
pub use market::{merton, solve_roots, MarketParams, MertonBenchmark, Roots};
pub use utility::{concavify, Envelope, Family, UtilitySpec};
