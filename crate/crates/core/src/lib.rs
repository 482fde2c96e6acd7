//! Steady linearized/nonlinear Boltzmann boundary-layer solver (hard spheres,
//! specular wall) on a half-space, discretized with a reflection-symmetric
//! velocity grid and exact characteristic sweeps on a truncated slab.
//!
//! The crate is generic over the floating-point scalar through [`scalar::Real`];
//! concrete `f64` aliases are exported at the root, which is what the CLI and
//! the acceptance suite use.

pub mod diagnostics;
pub mod field;
pub mod gamma;
pub mod linear;
pub mod nonlinear;
pub mod operator;
pub mod opcache;
pub mod report;
pub mod scalar;
pub mod transport;
pub mod velocity;

mod error;

pub use error::Error;
pub use scalar::Real;

// `Array2` appears throughout the public API; re-export the crate so
// downstream code can name it without pinning its own copy.
pub use ndarray;

/// Default scalar used by the CLI and the acceptance suite.
pub type Scalar = f64;

pub type GridSpec = velocity::GridSpec<Scalar>;
pub type VelocityGrid = velocity::VelocityGrid<Scalar>;
pub type WeightSpec = operator::WeightSpec<Scalar>;
pub type OperatorSet = operator::OperatorSet<Scalar>;
pub type SlabGrid = transport::SlabGrid<Scalar>;
pub type KineticField = field::KineticField<Scalar>;
pub type MacroProfile = linear::MacroProfile<Scalar>;
pub type LinearProblem = linear::LinearProblem<Scalar>;
pub type SolveConfig = linear::SolveConfig<Scalar>;
pub type LinearSolution = linear::LinearSolution<Scalar>;
pub type NonlinearProblem = nonlinear::NonlinearProblem<Scalar>;

pub type Result<T> = std::result::Result<T, Error>;
