//! Principal eigenpair of `-alpha L - diag(c)` under Neumann closure.
//!
//! The operator is a symmetric Z-matrix, so shifting it below its smallest
//! eigenvalue yields an M-matrix with a nonnegative inverse. Inverse
//! iteration on the shifted operator keeps every iterate positive and
//! converges to the principal eigenvector.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{ScalarField, UniformGrid};
use crate::tridiag::{symmetric_eigenvalue, Tridiagonal};

/// Principal eigenvalue and its positive eigenfunction normalised to unit
/// integral.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenPair {
    pub lambda: f64,
    pub phi: ScalarField,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenOptions {
    pub max_iterations: usize,
    pub increment_tolerance: f64,
    pub residual_tolerance: f64,
    /// Distance kept between the shift and the Gershgorin lower bound.
    pub shift_margin: f64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            max_iterations: 20_000,
            increment_tolerance: 1e-12,
            residual_tolerance: 1e-10,
            shift_margin: 1e-2,
        }
    }
}

/// The matrix of `-alpha L - diag(c)`.
pub fn operator_matrix(alpha: f64, c: &ScalarField) -> Tridiagonal {
    let minus_c: Vec<f64> = c.values().iter().map(|v| -v).collect();
    Tridiagonal::shifted_laplacian(c.len(), c.grid().spacing(), 0.0, -alpha, Some(&minus_c))
}

/// `||alpha L phi + c phi + lambda phi||_inf`.
pub fn eigen_residual(alpha: f64, c: &ScalarField, lambda: f64, phi: &ScalarField) -> f64 {
    let a = operator_matrix(alpha, c);
    a.apply(phi.values())
        .iter()
        .zip(phi.values())
        .fold(0.0, |acc, (ap, p)| acc.max((ap - lambda * p).abs()))
}

/// The two smallest eigenvalues of `-alpha L - diag(c)`.
pub fn two_smallest_eigenvalues(alpha: f64, c: &ScalarField) -> (f64, f64) {
    let a = operator_matrix(alpha, c);
    (
        symmetric_eigenvalue(&a.diag, &a.upper, 0),
        symmetric_eigenvalue(&a.diag, &a.upper, 1),
    )
}

pub fn principal_eigenpair(alpha: f64, c: &ScalarField) -> Result<EigenPair> {
    principal_eigenpair_with(alpha, c, &EigenOptions::default())
}

pub fn principal_eigenpair_with(
    alpha: f64,
    c: &ScalarField,
    opts: &EigenOptions,
) -> Result<EigenPair> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::invalid(format!(
            "dispersal rate must be positive, got {alpha}"
        )));
    }
    let n = c.len();
    let h = c.grid().spacing();
    let a = operator_matrix(alpha, c);
    // Gershgorin: every row of -alpha L has zero sum, so the lower bound is -max c.
    let shift = -c.max() - opts.shift_margin;
    let mut shifted = a.clone();
    shifted.diag.iter_mut().for_each(|d| *d -= shift);
    let lu = shifted
        .factor()
        .ok_or_else(|| Error::Invariant("shifted eigen operator is singular".into()))?;

    let mut phi = vec![1.0; n];
    let mut lambda = rayleigh(&a, &phi);
    let mut increment = f64::INFINITY;
    let mut residual = f64::INFINITY;
    let mut polish = 0;
    for it in 1..=opts.max_iterations {
        lu.solve_in_place(&mut phi);
        if let Some(i) = phi.iter().position(|&p| !(p > 0.0)) {
            return Err(Error::Invariant(format!(
                "inverse iterate lost positivity at cell {i} (iteration {it})"
            )));
        }
        let mass = h * phi.iter().sum::<f64>();
        phi.iter_mut().for_each(|p| *p /= mass);
        let next = rayleigh(&a, &phi);
        increment = (next - lambda).abs();
        lambda = next;
        if increment < opts.increment_tolerance {
            residual = a
                .apply(&phi)
                .iter()
                .zip(&phi)
                .fold(0.0, |acc, (ap, p)| acc.max((ap - lambda * p).abs()));
            if residual < opts.residual_tolerance {
                polish += 1;
                if polish > 2 {
                    return Ok(EigenPair {
                        lambda,
                        phi: ScalarField::from_vec_unchecked(*c.grid(), phi),
                        iterations: it,
                        residual,
                    });
                }
            }
        }
    }
    Err(Error::EigenDiverged {
        iterations: opts.max_iterations,
        increment,
        residual,
    })
}

fn rayleigh(a: &Tridiagonal, phi: &[f64]) -> f64 {
    let ap = a.apply(phi);
    let num: f64 = ap.iter().zip(phi).map(|(x, y)| x * y).sum();
    let den: f64 = phi.iter().map(|p| p * p).sum();
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecology::{default_resource, solve_theta};
    use crate::grid::SpatialGrid;

    #[test]
    fn constant_potential_gives_constant_eigenfunction() {
        let g = SpatialGrid::new(32).unwrap();
        let pair = principal_eigenpair(0.7, &ScalarField::constant(g, 0.4)).unwrap();
        assert!((pair.lambda + 0.4).abs() < 1e-12);
        assert!(pair.phi.values().iter().all(|&p| (p - 1.0).abs() < 1e-10));
    }

    #[test]
    fn resident_potential_has_zero_eigenvalue() {
        let g = SpatialGrid::new(64).unwrap();
        let m = default_resource(g);
        let alpha = 0.6;
        let theta = solve_theta(alpha, &m).unwrap();
        let c = m.zip_map(&theta, |a, b| a - b);
        let pair = principal_eigenpair(alpha, &c).unwrap();
        assert!(pair.lambda.abs() < 1e-10, "{}", pair.lambda);
        let mass = theta.integrate();
        let expected = theta.map(|t| t / mass);
        assert!(pair.phi.sup_distance(&expected) < 1e-8);
        assert!((pair.phi.integrate() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eigenvalue_matches_sturm_bisection() {
        let g = SpatialGrid::new(48).unwrap();
        let c = ScalarField::from_fn(g, |x| (5.0 * x).sin() + 0.3 * x);
        let pair = principal_eigenpair(0.2, &c).unwrap();
        let (l0, l1) = two_smallest_eigenvalues(0.2, &c);
        assert!((pair.lambda - l0).abs() < 1e-9 * l0.abs().max(1.0));
        assert!(l1 > l0);
        assert!(eigen_residual(0.2, &c, pair.lambda, &pair.phi) < 1e-10);
    }

    #[test]
    fn rejects_nonpositive_rate() {
        let g = SpatialGrid::new(16).unwrap();
        assert!(principal_eigenpair(-1.0, &ScalarField::constant(g, 0.0)).is_err());
    }
}
