//! Mathematical-program builder and solver toolkit.
//!
//! Hosts the linear/mixed-binary program representation used by the
//! scheduling stages, a deterministic branch-and-bound solver over a
//! sparse bounded-variable simplex, and the two approximation devices
//! the stages rely on: the hexagonal relaxation of apparent-power
//! circles and the scenario (big-M indicator) approximation of chance
//! constraints. Squared objective terms are encoded as convex
//! piecewise-linear penalty parts so a single MILP backend suffices.

mod bnb;
mod chance;
mod expr;
mod hexagon;
mod program;
mod pwl;
mod simplex;

pub use bnb::{
    default_registry, BranchAndBound, SolveError, SolveOptions, SolverBackend, SolverRegistry,
};
#[doc(hidden)]
pub use bnb::relaxation_probe;
pub use chance::{add_chance_indicator, add_connectivity_gate, ChanceIndicator};
pub use expr::LinExpr;
pub use hexagon::{add_hexagon, Quadrants};
pub use program::{Program, RowId, RowOp, Sense, SolStatus, Solution, VarId, VarKind};
pub use pwl::{add_squared_deviation, symmetric_breakpoints, SquaredDeviation};

/// Absolute feasibility tolerance used across the solver and when
/// verifying returned solutions (per-unit scale).
pub const FEASIBILITY_TOL: f64 = 1e-6;

/// Tolerance within which a binary variable value is accepted as integral.
pub const INTEGRALITY_TOL: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum OptError {
    #[error("unknown variable {0:?} referenced in constraint")]
    UnknownVariable(VarId),
    #[error("breakpoints must be strictly increasing")]
    NonMonotoneBreakpoints,
    #[error("at least 3 breakpoints symmetric about the target are required")]
    BadBreakpoints,
    #[error("big-M must be strictly positive, got {0}")]
    NonpositiveBigM(f64),
    #[error("chance constraint needs at least one scenario")]
    EmptyScenarioSet,
    #[error("scenario lhs/rhs/probability lists must have equal length")]
    ScenarioLengthMismatch,
    #[error("hexagon rating must be strictly positive, got {0}")]
    NonpositiveRating(f64),
    #[error("hexagon exactness coefficient must be >= 1, got {0}")]
    BadTau(f64),
}
