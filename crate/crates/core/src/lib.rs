//! MAP inference for pairwise conditional random fields under hard
//! label-consistency constraints.
//!
//! The labeling problem is relaxed to a quadratic program over per-node
//! label simplices. Constraint sets (groups of nodes that must share a label)
//! are eliminated exactly by merging each set into a supernode, after which
//! the reduced program is maximized with a normalized multiplicative update
//! driven by its closed-form gradient.
//!
//! - [`crf`]: graph, potentials, labelings and the objective.
//! - [`reduction`]: constraint matrix, null-space map and reduced problem.
//! - [`solver`]: the multiplicative ascent, constrained and unconstrained.
//! - [`potentials`]: edges and pairwise terms from node features.
//! - [`cloud`]: constraint sets from a 3D point cloud.
//! - [`baselines`]: exhaustive MAP and loopy belief propagation.
//! - [`eval`]: synthetic scenes, metrics and benchmarks.

pub mod baselines;
pub mod cloud;
pub mod crf;
mod error;
pub mod eval;
pub mod potentials;
pub mod reduction;
pub mod solver;

pub use crf::{extract_labeling, objective, objective_of_labeling, CrfGraph, Labeling, Marginals, Potentials};
pub use error::{Error, Result};
pub use reduction::{ConstraintSets, ReducedProblem};
pub use solver::{solve, solve_constrained, InitStrategy, SolveReport, SolverConfig};
