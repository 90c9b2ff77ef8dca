//! Numerical toolkit for infinite-horizon discounted stochastic optimal
//! control under state constraints: monotone finite-difference HJB solver,
//! controlled-diffusion simulation, boundary viability certification and
//! residual-based viscosity-inequality verification.

pub mod catalog;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod policy;
pub mod problem;
pub mod sim;
pub mod solver;
pub mod tabular;
pub mod verify;
pub mod viability;

pub use error::{CoreError, Result};
pub use geometry::{Domain, LevelSet, Region};
pub use grid::{build_grid, Grid, NodeClass, ValueFunction};
pub use policy::{FeedbackPolicy, Policy};
pub use problem::{ControlProblem, ControlSet};
pub use sim::{
    estimate_cost, simulate_path, test_lattice_closure, test_z_process, Direction, LatticeMode,
    MCEstimate, ProjectionMode, SamplePath, SimParams, ValueField, ZProcessReport,
};
pub use solver::{
    bellman_residual, discretize, extract_policy, policy_iteration, value_iteration,
    DiscreteOperator, DiscretizeOptions, SolveOptions, SolveResult,
};
pub use verify::{
    boundary_limsup_extend, check_comparison, check_sandwich, check_subsolution,
    check_supersolution, OrderingReport, SandwichReport, ViolationReport,
};
