//! Finite element solvers for parabolic integro-differential equations with
//! nonlinear memory,
//!
//! ```text
//! u_t + A u + int_0^t K(t - s) B u(s) ds = f   in Omega x (0, T],
//! u = 0 on the boundary,  u(0) = u0,
//! B u = -div(alpha(u) grad u + beta(u)) + gamma(u) . grad u + g(u),
//! ```
//!
//! discretized by P1 elements on structured triangulations and backward Euler
//! in time with a fully implicit memory quadrature. Besides the standard scheme,
//! three two-grid schemes solve the nonlinear system on a coarse mesh only and
//! follow it with one linear solve on the fine mesh; see [`schemes::Scheme`].
//!
//! The `examples/` directory of this crate has one runnable program per
//! capability, and the `pide` binary drives convergence studies from the
//! command line.

pub mod assembly;
pub mod cli;
pub mod manufactured;
pub mod memory;
pub mod mesh;
pub mod problem;
pub mod quadrature;
pub mod schemes;
pub mod solvers;
pub mod sparse;
pub mod verification;

use thiserror::Error;

pub use assembly::{FeSpace, FormVariant, MatrixVariant};
pub use memory::{HistoryMode, MemoryHistory, MemoryWeights};
pub use mesh::{FeFunction, Mesh, Point, Rect};
pub use problem::ProblemSpec;
pub use schemes::{run, RunOutcome, Scheme, SchemeRunner};
pub use solvers::SolverConfig;

/// Crate-wide error.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Mesh(#[from] mesh::MeshError),
    #[error(transparent)]
    Assembly(#[from] assembly::AssemblyError),
    #[error(transparent)]
    Sparse(#[from] sparse::SparseError),
    #[error(transparent)]
    Problem(#[from] problem::ProblemError),
    #[error(transparent)]
    Memory(#[from] memory::MemoryError),
    #[error(transparent)]
    Solver(#[from] solvers::SolverError),
    #[error("step {step} ({phase}): {source}")]
    Step {
        step: usize,
        phase: schemes::Phase,
        #[source]
        source: Box<Error>,
    },
    #[error("invalid run setup: {0}")]
    Setup(String),
    #[error(transparent)]
    Config(#[from] cli::ConfigError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
