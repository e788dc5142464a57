//! The canonical equation `dzbar/dt = -d_{z1} lambda(zbar, zbar) / sigma(t)`.

use serde::Serialize;

use super::constrained::HjSolution;
use crate::ecology::InvasionModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub z: Vec<f64>,
}

impl Trajectory {
    pub fn at(&self, t: f64) -> f64 {
        let n = self.times.len();
        if t <= self.times[0] || n == 1 {
            return self.z[0];
        }
        if t >= self.times[n - 1] {
            return self.z[n - 1];
        }
        let k = self.times.partition_point(|&s| s <= t) - 1;
        let w = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        (1.0 - w) * self.z[k] + w * self.z[k + 1]
    }
}

/// RK4 for the canonical equation with the selection gradient from `model`
/// and `sigma` interpolated from a companion constrained solve.
pub fn canonical_ode(
    model: &InvasionModel,
    track: &HjSolution,
    z0: f64,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory> {
    let t0 = track.records[0].t;
    canonical_ode_with(
        |z| model.lambda_derivs(z, z).map(|d| d.d1),
        |t| track.sigma_at(t),
        model.profile().interval(),
        z0,
        t0,
        t_end,
        dt,
    )
}

/// RK4 for `dz/dt = -slope(z) / sigma(t)` on `[t0, t_end]`.
pub fn canonical_ode_with(
    slope: impl Fn(f64) -> Result<f64>,
    sigma: impl Fn(f64) -> f64,
    interval: (f64, f64),
    z0: f64,
    t0: f64,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory> {
    let (a, b) = interval;
    if !(z0 > a && z0 < b) {
        return Err(Error::invalid(format!(
            "initial trait {z0} must lie inside ({a}, {b})"
        )));
    }
    if !(dt > 0.0 && t_end > t0) {
        return Err(Error::invalid(format!(
            "need dt > 0 and t_end > t0 (dt = {dt}, [{t0}, {t_end}])"
        )));
    }
    let rhs = |t: f64, z: f64| -> Result<f64> {
        let s = sigma(t);
        if !(s > 0.0) {
            return Err(Error::CurvatureCollapsed { t, sigma: s });
        }
        let zc = z.clamp(a, b);
        Ok(-slope(zc)? / s)
    };
    let steps = ((t_end - t0) / dt).ceil() as usize;
    let h = (t_end - t0) / steps as f64;
    let mut times = Vec::with_capacity(steps + 1);
    let mut zs = Vec::with_capacity(steps + 1);
    let mut z = z0;
    times.push(t0);
    zs.push(z);
    for k in 0..steps {
        let t = t0 + k as f64 * h;
        let k1 = rhs(t, z)?;
        let k2 = rhs(t + 0.5 * h, z + 0.5 * h * k1)?;
        let k3 = rhs(t + 0.5 * h, z + 0.5 * h * k2)?;
        let k4 = rhs(t + h, z + h * k3)?;
        z += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if !(z > a && z < b) {
            return Err(Error::TrajectoryHitBoundary {
                t: t + h,
                index: usize::MAX,
            });
        }
        times.push(t0 + (k + 1) as f64 * h);
        zs.push(z);
    }
    Ok(Trajectory { times, z: zs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_relaxation_matches_exponential() {
        // slope = z, sigma = 2: z(t) = z0 exp(-t / 2).
        let tr = canonical_ode_with(Ok, |_| 2.0, (-1.0, 1.0), 0.4, 0.0, 2.0, 0.01).unwrap();
        let exact = 0.4 * (-1.0f64).exp();
        assert!((tr.z.last().unwrap() - exact).abs() < 1e-9);
    }

    #[test]
    fn stationary_point_stays_put() {
        let tr = canonical_ode_with(|z| Ok(z * z * z), |_| 1.0, (-1.0, 1.0), 0.0, 0.0, 1.0, 0.1)
            .unwrap();
        assert!(tr.z.iter().all(|&z| z == 0.0));
    }

    #[test]
    fn nonpositive_curvature_is_an_error() {
        let e = canonical_ode_with(Ok, |t| 1.0 - t, (-1.0, 1.0), 0.2, 0.0, 2.0, 0.1).unwrap_err();
        assert_eq!(e.kind(), "curvature-collapsed");
    }
}
