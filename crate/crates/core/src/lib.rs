//! Matrix-free solvers for the boundary trust region subproblem
//!
//! ```text
//! min ½ xᵀAx + bᵀx   subject to ‖x‖ = 1
//! ```
//!
//! and for its ball-constrained variant, by Riemannian optimization on the
//! sphere with an optional variable-metric preconditioner.
//!
//! ```
//! use nalgebra::DVector;
//! use trsr_core::{double_start, BtrsProblem, SolverConfig, SymOp};
//!
//! let a = SymOp::diagonal(DVector::from_vec(vec![1.0, 3.0])).unwrap();
//! let p = BtrsProblem::new(a, DVector::from_vec(vec![1.0, 1.0])).unwrap();
//! let r = double_start(&p, &SolverConfig::default()).unwrap();
//! assert!(r.status.is_converged());
//! assert!(r.mu < 1.0);
//! ```

pub mod btrs;
pub mod eigmin;
pub mod error;
pub mod gen;
pub mod geometry;
pub mod io;
pub mod linop;
pub mod oracle;
pub mod precond;
pub mod solvers;
pub mod trs;

pub use btrs::{AffineEigenpair, BtrsProblem, CaseInfo, CaseKind, EPS_HARD};
pub use eigmin::{min_eigpair, min_eigpair_default, MinEigResult};
pub use error::{Error, Result};
pub use gen::{generate, GenSpec};
pub use geometry::{MetricScheme, TangentVector};
pub use linop::SymOp;
pub use oracle::{enumerate_affine_eigenvalues, global_solve, OracleReport};
pub use precond::{build_eig_seed, PhiFilter, Preconditioner};
pub use solvers::{
    double_start, lpr_solve, naive_rgd, rcg, rgd, InnerSolver, SolveResult, SolveStatus, SolveTrace, SolverConfig,
};
pub use trs::{solve_trs, TrsResult, TrsRoute, TrsStrategy};
