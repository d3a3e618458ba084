//! Safety-penalized value functions for control-affine systems.
//!
//! The crate computes the transformed value `W = 1 - exp(-alpha V)` of an
//! optimal control problem whose running cost blows up at the boundary of
//! a safe set, on a rectilinear grid, by semi-Lagrangian value iteration.
//! `W < 1` marks states that can be steered to the origin without ever
//! touching the obstacle, and `W` itself is a control Lyapunov-barrier
//! function. On top of the solver sit certification checks and a greedy
//! feedback with a closed-loop simulator.

pub mod certify;
pub mod config;
pub mod error;
pub mod feedback;
pub mod grid;
pub mod indicator;
pub mod solver;
pub mod system_model;

pub use error::{ConfigError, Error, Result};
pub use grid::{hex_digest, ControlSet, Grid, NodeClass, ValueField};
pub use indicator::{RunningCost, ZubovTransform};
pub use solver::{SolveStats, SolveStatus, SolverParams, ZubovSolver};
pub use system_model::{load_benchmark, BenchmarkId, BenchmarkSetup, SafeSet, SystemModel};
