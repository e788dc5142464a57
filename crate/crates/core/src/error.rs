use thiserror::Error;

use crate::grid::PhaseDensity;

pub type Result<T> = std::result::Result<T, Error>;

/// Failures raised by the numerical modules.
///
/// Every variant maps to a stable machine-readable [`Error::kind`] string so
/// that front ends can emit structured diagnostics.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("minimizer at boundary node {index} of {len}")]
    BoundaryMinimizer { index: usize, len: usize },

    #[error(
        "theta solver did not converge after {iterations} iterations (last residual {last:e})"
    )]
    ThetaDiverged {
        iterations: usize,
        last: f64,
        residuals: Vec<f64>,
    },

    #[error("inverse iteration did not converge after {iterations} iterations (increment {increment:e}, residual {residual:e})")]
    EigenDiverged {
        iterations: usize,
        increment: f64,
        residual: f64,
    },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("Floquet bundle not converged: doubling the spin-up changed H by {deviation:e}")]
    BundleNotConverged { deviation: f64 },

    #[error("minimizer trajectory hit the trait boundary at t = {t} (node {index})")]
    TrajectoryHitBoundary { t: f64, index: usize },

    #[error("CFL condition could not be met at t = {t} (dt reduced to {dt:e})")]
    CflViolation { t: f64, dt: f64 },

    #[error("curvature collapsed at t = {t}: sigma = {sigma:e}")]
    CurvatureCollapsed { t: f64, sigma: f64 },

    #[error("a priori bound violated at t = {t}: rho in [{rho_min:e}, {rho_max:e}] outside envelope [{env_min:e}, {env_max:e}]")]
    AprioriViolated {
        t: f64,
        rho_min: f64,
        rho_max: f64,
        env_min: f64,
        env_max: f64,
    },

    #[error("non-finite density at t = {t} (cell {index})")]
    NonFinite {
        t: f64,
        index: usize,
        dump: Box<PhaseDensity>,
    },

    #[error("population extinct at t = {t}: every trait marginal is below the floor")]
    PopulationExtinct { t: f64 },
}

impl Error {
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid-input",
            Error::BoundaryMinimizer { .. } => "boundary-minimizer",
            Error::ThetaDiverged { .. } => "theta-diverged",
            Error::EigenDiverged { .. } => "eigen-diverged",
            Error::Invariant(_) => "internal-invariant",
            Error::BundleNotConverged { .. } => "bundle-not-converged",
            Error::TrajectoryHitBoundary { .. } => "trajectory-hit-boundary",
            Error::CflViolation { .. } => "cfl-violation",
            Error::CurvatureCollapsed { .. } => "curvature-collapsed",
            Error::AprioriViolated { .. } => "apriori-violated",
            Error::NonFinite { .. } => "non-finite",
            Error::PopulationExtinct { .. } => "population-extinct",
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
