//! Numerical core for the selection-mutation model of dispersal evolution
//!
//! ```text
//! eps d_t n = alpha(z) Lap_x n + n (m(x) - rho) + eps^2 d_zz n,   rho = int n dz
//! ```
//!
//! on `(0,1) x (a,b)` with Neumann conditions on both variables.
//!
//! * [`grid`]: cell-centred grids, fields and discrete operators.
//! * [`ecology`]: resident equilibria, principal eigenpairs, invasion
//!   exponents and dispersal profiles.
//! * [`floquet`]: normalised principal bundles for time-dependent potentials
//!   and the effective Hamiltonian built from them.
//! * [`hj`]: constrained Hamilton-Jacobi solvers, the canonical ODE and a
//!   dynamic-programming oracle.
//! * [`kinetic`]: the direct phase-space solver and WKB extraction.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ecology;
pub mod error;
pub mod floquet;
pub mod grid;
pub mod hj;
pub mod kinetic;
pub mod tridiag;

pub use error::{Error, Result};
