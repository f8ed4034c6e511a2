//! Decentralized stochastic optimization simulator.
//!
//! The crate implements a unified primal-dual recursion
//!
//! ```text
//! x^{k+1} = A(C x^k − α ∇F(x^k, ξ^k)) − B y^k
//! y^{k+1} = y^k + B x^{k+1}
//! ```
//!
//! with `A`, `B²`, `C` polynomials of a combination matrix `W`, along with
//! the named special cases (Exact Diffusion, EXTRA, gradient tracking),
//! the DSGD and parallel SGD baselines, the spectral factorization of the
//! transformed error recursion, runtime monitors and an experiment harness.

pub mod diagnostics;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod problems;
pub mod solvers;
pub mod spectral;
pub mod topology;

pub use error::{Error, Result};
pub use exec::Execution;
