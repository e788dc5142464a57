//! Constrained Hamilton-Jacobi equations `d_t V + |d_z V|^2 = R - c(t)`,
//! `min V = 0`, their minimizer trajectories and a variational oracle.

mod canonical;
mod constrained;
mod monotone;
mod source;
mod variational;

pub use canonical::{canonical_ode, canonical_ode_with, Trajectory};
pub use constrained::{
    godunov_flux, solve_constrained_hj, HjOptions, HjRecord, HjScheme, HjSolution,
};
pub use monotone::{monotonicity_check, MonotonicityReport, Verdict};
pub use source::{LambdaTable, Source, SyntheticSource};
pub use variational::{lax_oleinik, LaxOleinikOptions, LaxOleinikSolution};
