//! Key-rate solver library: computes provably-bounded optimal values of the
//! quantum key distribution rate problem
//!
//! ```text
//! min { D(G(ρ) ‖ Z(G(ρ))) : Γ(ρ) = γ, ρ ⪰ 0 }
//! ```
//!
//! by (1) regularizing the problem with facial reduction so every matrix
//! logarithm acts on a positive definite argument, and (2) solving the
//! reduced model with a projected Gauss-Newton primal-dual interior-point
//! method that emits matching upper bounds and weak-duality lower-bound
//! certificates.

pub mod bounds;
pub mod error;
pub mod fr;
pub mod hermitian;
pub mod instance_io;
pub mod maps;
pub mod objective;
pub mod protocols;
pub mod solver;

pub use bounds::BoundsCertificate;
pub use error::{Error, Result};
pub use fr::{ProblemInstance, ReducedModel};
pub use hermitian::{CMat, HermitianMatrix, RMat, RVec, C64};
pub use maps::{CpMap, KrausMap, PinchingMap};
pub use protocols::ProtocolParams;
pub use solver::{SolveResult, SolverConfig};
