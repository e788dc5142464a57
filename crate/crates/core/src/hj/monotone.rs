//! Oriented monotonicity of minimizer trajectories.

use serde::Serialize;

use super::source::Source;
use crate::grid::{TraitGrid, UniformGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    PreconditionNotMet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub verdict: Verdict,
    /// Expected direction: `-1` nonincreasing, `+1` nondecreasing, `0`
    /// stationary.
    pub direction: i8,
    /// Largest move against the expected direction (or away from the start
    /// when stationary).
    pub max_violation: f64,
    pub tolerance: f64,
}

const SLOPE_ZERO: f64 = 1e-9;

/// Checks that `zbar` moves monotonically against the diagonal slope of the
/// forcing at its starting point, allowing `tolerance` of backtracking.
///
/// The check requires the sampled diagonal slope to change sign at most
/// once, from negative to positive; otherwise it reports
/// [`Verdict::PreconditionNotMet`].
pub fn monotonicity_check(
    zbar: &[f64],
    source: &Source,
    grid: &TraitGrid,
    tolerance: f64,
) -> MonotonicityReport {
    let not_met = MonotonicityReport {
        verdict: Verdict::PreconditionNotMet,
        direction: 0,
        max_violation: 0.0,
        tolerance,
    };
    let Some(&z0) = zbar.first() else {
        return not_met;
    };
    let mut signs = Vec::with_capacity(grid.len());
    for j in 0..grid.len() {
        match source.diagonal_slope(grid.node(j)) {
            None => return not_met,
            Some(s) if s > SLOPE_ZERO => signs.push(1),
            Some(s) if s < -SLOPE_ZERO => signs.push(-1),
            Some(_) => {}
        }
    }
    if signs.windows(2).any(|w| w[1] < w[0]) {
        return not_met;
    }
    let s0 = source.diagonal_slope(z0).expect("slope available");
    let direction: i8 = if s0 > SLOPE_ZERO {
        -1
    } else if s0 < -SLOPE_ZERO {
        1
    } else {
        0
    };
    let max_violation = match direction {
        0 => zbar.iter().fold(0.0f64, |acc, z| acc.max((z - z0).abs())),
        d => {
            let d = f64::from(d);
            let mut best = d * z0;
            let mut worst = 0.0f64;
            for &z in zbar {
                best = best.max(d * z);
                worst = worst.max(best - d * z);
            }
            worst
        }
    };
    MonotonicityReport {
        verdict: if max_violation <= tolerance {
            Verdict::Pass
        } else {
            Verdict::Fail
        },
        direction,
        max_violation,
        tolerance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hj::SyntheticSource;

    fn grid() -> TraitGrid {
        TraitGrid::centered(32).unwrap()
    }

    fn u_shaped() -> Source {
        Source::Synthetic(SyntheticSource::coupled(|z, zb, _| z - zb).with_diagonal_slope(|z| z))
    }

    #[test]
    fn decreasing_path_passes() {
        let r = monotonicity_check(&[0.3, 0.25, 0.2, 0.21, 0.1], &u_shaped(), &grid(), 0.02);
        assert_eq!(r.verdict, Verdict::Pass);
        assert_eq!(r.direction, -1);
        assert!((r.max_violation - 0.01).abs() < 1e-12);
    }

    #[test]
    fn backtracking_fails() {
        let r = monotonicity_check(&[-0.3, -0.1, -0.2], &u_shaped(), &grid(), 0.05);
        assert_eq!(r.direction, 1);
        assert_eq!(r.verdict, Verdict::Fail);
    }

    #[test]
    fn wrong_sign_structure_is_skipped() {
        let src =
            Source::Synthetic(SyntheticSource::coupled(|_, _, _| 0.0).with_diagonal_slope(|z| -z));
        let r = monotonicity_check(&[0.1, 0.2], &src, &grid(), 0.05);
        assert_eq!(r.verdict, Verdict::PreconditionNotMet);
        let bare = Source::Synthetic(SyntheticSource::time_only(|_, _| 0.0));
        assert_eq!(
            monotonicity_check(&[0.1], &bare, &grid(), 0.05).verdict,
            Verdict::PreconditionNotMet
        );
    }
}
