//! Resident steady state: the positive solution of
//! `alpha * L theta + theta * (m - theta) = 0` under Neumann closure.

use crate::error::{Error, Result};
use crate::grid::{neumann_laplacian_into, ScalarField, UniformGrid};
use crate::tridiag::Tridiagonal;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaOptions {
    pub max_newton: usize,
    /// Acceptance threshold on `||residual||_inf / ||m||_inf`.
    pub tolerance: f64,
    pub march_dt: f64,
    pub march_max_steps: usize,
}

impl Default for ThetaOptions {
    fn default() -> Self {
        Self {
            max_newton: 60,
            tolerance: 1e-10,
            march_dt: 1.0,
            march_max_steps: 200_000,
        }
    }
}

/// Sup norm of `alpha * L theta + theta * (m - theta)`.
pub fn theta_residual(alpha: f64, m: &ScalarField, theta: &ScalarField) -> f64 {
    let mut lap = vec![0.0; m.len()];
    residual_into(
        alpha,
        m.values(),
        theta.values(),
        m.grid().spacing(),
        &mut lap,
    );
    lap.iter().fold(0.0, |acc, r| acc.max(r.abs()))
}

fn residual_into(alpha: f64, m: &[f64], theta: &[f64], h: f64, out: &mut [f64]) {
    neumann_laplacian_into(theta, h, out);
    for ((r, &t), &mi) in out.iter_mut().zip(theta).zip(m) {
        *r = alpha * *r + t * (mi - t);
    }
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

fn validate(alpha: f64, m: &ScalarField) -> Result<()> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::invalid(format!(
            "dispersal rate must be positive, got {alpha}"
        )));
    }
    if let Some(i) = m.values().iter().position(|&v| v <= 0.0) {
        return Err(Error::invalid(format!(
            "resource must be positive, m[{i}] = {}",
            m.values()[i]
        )));
    }
    Ok(())
}

pub fn solve_theta(alpha: f64, m: &ScalarField) -> Result<ScalarField> {
    solve_theta_with(alpha, m, &ThetaOptions::default())
}

/// Damped Newton from `theta = m`; falls back to pseudo-time marching if the
/// iterate cannot be kept in the positive cone or the residual stalls above
/// tolerance.
pub fn solve_theta_with(alpha: f64, m: &ScalarField, opts: &ThetaOptions) -> Result<ScalarField> {
    validate(alpha, m)?;
    let n = m.len();
    let h = m.grid().spacing();
    let mv = m.values();
    let scale = m.sup_norm();
    let accept = opts.tolerance * scale;

    let mut theta = mv.to_vec();
    let mut res = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial_res = vec![0.0; n];
    residual_into(alpha, mv, &theta, h, &mut res);
    let mut r = sup(&res);
    let mut history = vec![r];
    let mut fell_out = false;

    for _ in 0..opts.max_newton {
        let jac_diag: Vec<f64> = mv.iter().zip(&theta).map(|(mi, t)| mi - 2.0 * t).collect();
        let jac = Tridiagonal::shifted_laplacian(n, h, 0.0, alpha, Some(&jac_diag));
        let mut step: Vec<f64> = res.iter().map(|v| -v).collect();
        if jac.solve_in_place(&mut step).is_none() {
            fell_out = true;
            break;
        }
        let step_size = sup(&step);

        let mut s = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            for i in 0..n {
                trial[i] = theta[i] + s * step[i];
            }
            if trial.iter().all(|&t| t > 0.0) {
                residual_into(alpha, mv, &trial, h, &mut trial_res);
                let tr = sup(&trial_res);
                if tr < r || tr <= accept {
                    accepted = true;
                    break;
                }
            }
            s *= 0.5;
        }
        if !accepted {
            if r <= accept {
                break;
            }
            fell_out = true;
            break;
        }
        std::mem::swap(&mut theta, &mut trial);
        std::mem::swap(&mut res, &mut trial_res);
        r = sup(&res);
        history.push(r);
        if step_size <= 1e-15 * scale || r == 0.0 {
            break;
        }
    }

    if !fell_out && r <= accept {
        return Ok(ScalarField::from_vec_unchecked(*m.grid(), theta));
    }
    theta_by_marching(
        alpha,
        m,
        opts.march_dt,
        opts.tolerance,
        opts.march_max_steps,
    )
    .map_err(|e| match e {
        Error::ThetaDiverged {
            iterations,
            last,
            residuals,
        } => {
            history.extend(residuals);
            Error::ThetaDiverged {
                iterations: iterations + history.len(),
                last,
                residuals: history,
            }
        }
        other => other,
    })
}

/// Implicit-diffusion logistic marching
/// `(I - dt alpha L + dt theta^k) theta^{k+1} = (1 + dt m) theta^k`,
/// whose fixed points are exactly the steady states. Every step solves an
/// M-matrix system with a positive right side, so iterates stay positive.
pub fn theta_by_marching(
    alpha: f64,
    m: &ScalarField,
    dt: f64,
    tolerance: f64,
    max_steps: usize,
) -> Result<ScalarField> {
    validate(alpha, m)?;
    let n = m.len();
    let h = m.grid().spacing();
    let mv = m.values();
    let accept = tolerance * m.sup_norm();
    let mut theta = mv.to_vec();
    let mut res = vec![0.0; n];
    let mut history = Vec::new();
    for step in 0..max_steps {
        residual_into(alpha, mv, &theta, h, &mut res);
        let r = sup(&res);
        if step % 1000 == 0 {
            history.push(r);
        }
        if r <= accept {
            return Ok(ScalarField::from_vec_unchecked(*m.grid(), theta));
        }
        let extra: Vec<f64> = theta.iter().map(|t| dt * t).collect();
        let a = Tridiagonal::shifted_laplacian(n, h, 1.0, -dt * alpha, Some(&extra));
        for (t, mi) in theta.iter_mut().zip(mv) {
            *t *= 1.0 + dt * mi;
        }
        a.solve_in_place(&mut theta)
            .ok_or_else(|| Error::Invariant("singular marching matrix".into()))?;
    }
    residual_into(alpha, mv, &theta, h, &mut res);
    let last = sup(&res);
    history.push(last);
    Err(Error::ThetaDiverged {
        iterations: max_steps,
        last,
        residuals: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecology::default_resource;
    use crate::grid::SpatialGrid;

    #[test]
    fn constant_resource_is_its_own_steady_state() {
        let g = SpatialGrid::new(32).unwrap();
        let m = ScalarField::constant(g, 1.7);
        let th = solve_theta(0.3, &m).unwrap();
        assert!(th.sup_distance(&m) < 1e-14);
    }

    #[test]
    fn integral_identity_and_positivity() {
        let g = SpatialGrid::new(64).unwrap();
        let m = default_resource(g);
        for alpha in [0.05, 0.5, 2.0] {
            let th = solve_theta(alpha, &m).unwrap();
            assert!(th.values().iter().all(|&t| t > 0.0));
            assert!(theta_residual(alpha, &m, &th) <= 1e-10 * m.sup_norm());
            let identity = th.zip_map(&m, |t, mi| t * (mi - t)).integrate();
            assert!(identity.abs() < 1e-10, "alpha {alpha}: {identity}");
        }
    }

    #[test]
    fn newton_agrees_with_marching_oracle() {
        let g = SpatialGrid::new(64).unwrap();
        let m = default_resource(g);
        let newton = solve_theta(0.5, &m).unwrap();
        let march = theta_by_marching(0.5, &m, 1.0, 1e-12, 1_000_000).unwrap();
        assert!(newton.sup_distance(&march) < 1e-8);
    }

    #[test]
    fn rejects_nonpositive_inputs() {
        let g = SpatialGrid::new(16).unwrap();
        let mut vals = vec![1.0; 16];
        vals[3] = 0.0;
        let m = ScalarField::new(g, vals).unwrap();
        assert!(matches!(solve_theta(0.5, &m), Err(Error::InvalidInput(_))));
        assert!(matches!(
            solve_theta(0.0, &ScalarField::constant(g, 1.0)),
            Err(Error::InvalidInput(_))
        ));
    }
}
