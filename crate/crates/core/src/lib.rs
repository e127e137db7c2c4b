//! Parametric analysis of second-order conic optimization problems whose
//! objective is perturbed along a fixed direction.
//!
//! The pipeline: solve the conic pair at a fixed parameter value with an
//! interior-point method ([`solver`]), classify the optimal partition and
//! its nondegeneracy properties ([`partition`]), expand around a strictly
//! complementary point by solving nonlinear auxiliary problems ([`auxnlp`]),
//! iterate those expansions into a nonlinearity-interval sweep
//! ([`interval_scan`]), and identify transition points from higher-order
//! derivatives of the Lagrange multipliers of a nonlinear dual reformulation
//! ([`transition`]).

pub mod auxnlp;
pub mod cones;
pub mod fileio;
pub mod instance;
pub mod interval_scan;
pub mod linalg;
pub mod partition;
pub mod report;
pub mod solver;
pub mod transition;
pub mod valuefn;

pub use cones::{ConeStructure, ConeVector};
pub use instance::{ParametricInstance, PrimalDualTriple};
pub use partition::OptimalPartition;
pub use solver::{solve, SolveOptions, SolveReport};
