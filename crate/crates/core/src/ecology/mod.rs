//! Resident equilibria, principal eigenvalues and invasion exponents.

mod eigen;
mod invasion;
mod profile;
mod theta;

pub use eigen::{
    eigen_residual, operator_matrix, principal_eigenpair, principal_eigenpair_with,
    two_smallest_eigenvalues, EigenOptions, EigenPair,
};
pub use invasion::{
    check_h1, check_h1_with, construct_alpha, construct_alpha_with, AlphaBuild, AlphaOptions,
    H1Report, InvasionModel, LambdaDerivs, LambdaSurface, RateModel,
};
pub use profile::{DispersalProfile, LogCosineParams, ProfileShape};
pub use theta::{solve_theta, solve_theta_with, theta_by_marching, theta_residual, ThetaOptions};

use crate::grid::{ScalarField, SpatialGrid};

/// `m(x) = base + amplitude * cos(pi x)`, Neumann compatible on (0, 1).
pub fn cosine_resource(grid: SpatialGrid, base: f64, amplitude: f64) -> ScalarField {
    ScalarField::from_fn(grid, |x| {
        base + amplitude * (std::f64::consts::PI * x).cos()
    })
}

/// The default resource `1 + 0.5 cos(pi x)`.
pub fn default_resource(grid: SpatialGrid) -> ScalarField {
    cosine_resource(grid, 1.0, 0.5)
}
