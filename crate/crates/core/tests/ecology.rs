use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

use dispersal_core::ecology::{
    check_h1, construct_alpha, default_resource, principal_eigenpair, solve_theta,
    theta_by_marching, theta_residual, DispersalProfile, InvasionModel, ProfileShape, RateModel,
};
use dispersal_core::grid::{ScalarField, SpatialGrid, TraitGrid, UniformGrid};

/// `-alpha L - diag(c)` assembled densely from the three-point stencil with
/// mirror ghosts.
fn dense_operator(alpha: f64, c: &[f64], h: f64) -> DMatrix<f64> {
    let n = c.len();
    let k = alpha / (h * h);
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            let neighbours = if i == 0 || i == n - 1 { 1.0 } else { 2.0 };
            neighbours * k - c[i]
        } else if i.abs_diff(j) == 1 {
            -k
        } else {
            0.0
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn principal_eigenvalue_matches_dense_solver(
        alpha in 0.05f64..3.0,
        c in prop::collection::vec(-2.0f64..2.0, 32),
    ) {
        let g = SpatialGrid::new(32).unwrap();
        let field = ScalarField::new(g, c.clone()).unwrap();
        let pair = principal_eigenpair(alpha, &field).unwrap();
        let dense = SymmetricEigen::new(dense_operator(alpha, &c, g.spacing()));
        let smallest = dense.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert!((pair.lambda - smallest).abs() <= 1e-9, "{} vs {}", pair.lambda, smallest);
        prop_assert!(pair.phi.values().iter().all(|&p| p > 0.0));
        prop_assert!((pair.phi.integrate() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn theta_is_positive_and_balances_growth(alpha in 0.05f64..3.0, amp in 0.05f64..0.9) {
        let g = SpatialGrid::new(48).unwrap();
        let m = ScalarField::from_fn(g, |x| 1.0 + amp * (std::f64::consts::PI * x).cos());
        let theta = solve_theta(alpha, &m).unwrap();
        prop_assert!(theta.values().iter().all(|&t| t > 0.0));
        prop_assert!(theta_residual(alpha, &m, &theta) <= 1e-10 * m.sup_norm());
        let balance = m.zip_map(&theta, |a, b| b * (a - b)).integrate();
        prop_assert!(balance.abs() <= 1e-10);
    }
}

#[test]
fn newton_and_marching_agree() {
    let m = default_resource(SpatialGrid::new(64).unwrap());
    let newton = solve_theta(0.5, &m).unwrap();
    let march = theta_by_marching(0.5, &m, 0.5, 1e-12, 200_000).unwrap();
    assert!(
        newton.sup_distance(&march) <= 1e-8,
        "{}",
        newton.sup_distance(&march)
    );
}

fn model() -> InvasionModel {
    let m = default_resource(SpatialGrid::new(64).unwrap());
    let build = construct_alpha(0.5, 0.5, &m).unwrap();
    InvasionModel::new(build.profile, m)
}

/// Adaptive Simpson quadrature of `f` on `[a, b]`.
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    rec(
        f,
        a,
        b,
        fa,
        fm,
        fb,
        (b - a) / 6.0 * (fa + 4.0 * fm + fb),
        tol,
        50,
    )
}

#[test]
fn half_width_solves_the_defining_integral() {
    let m = default_resource(SpatialGrid::new(64).unwrap());
    let build = construct_alpha(0.5, 0.5, &m).unwrap();
    let target = build.k0 * 0.5;
    let integral = |z: f64| simpson(&|s: f64| s.tan(), 0.0, z, 1e-15);
    let (mut lo, mut hi) = (0.0, std::f64::consts::FRAC_PI_2 - 1e-9);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if integral(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    let root = 0.5 * (lo + hi);
    assert!((root - build.z_m).abs() <= 1e-12, "{root} vs {}", build.z_m);
}

#[test]
fn built_profile_hits_its_defining_values() {
    let model = model();
    let p = model.profile();
    let (a, b) = p.interval();
    assert!((p.value(0.5 * (a + b)) - 0.5).abs() < 1e-14);
    assert!((p.value(a) - 1.0).abs() < 1e-12);
    assert!((p.value(b) - 1.0).abs() < 1e-12);
    assert!(check_h1(&model).unwrap().pass);
}

#[test]
fn second_derivative_survives_richardson_extrapolation() {
    let model = model();
    let h = model.deriv_step();
    for (z1, z2) in [(-0.3, 0.1), (0.0, 0.0), (0.25, -0.25), (0.45, 0.2)] {
        let coarse = model.lambda_derivs_with_step(z1, z2, h).unwrap().d2;
        let fine = model.lambda_derivs_with_step(z1, z2, 0.5 * h).unwrap().d2;
        let extrapolated = (4.0 * fine - coarse) / 3.0;
        let rel = (coarse - extrapolated).abs() / extrapolated.abs();
        assert!(rel < 0.01, "({z1}, {z2}): {coarse} vs {extrapolated}");
    }
}

#[test]
fn selection_gradient_follows_the_sign_of_the_profile_slope() {
    let model = model();
    for z1 in [-0.45, -0.3, -0.1, 0.1, 0.3, 0.45] {
        for z2 in [-0.4, 0.0, 0.35] {
            let d1 = model.lambda_derivs(z1, z2).unwrap().d1;
            let slope = model.profile().derivative(z1);
            assert_eq!(
                d1.signum(),
                slope.signum(),
                "z1 {z1}, z2 {z2}: {d1} vs {slope}"
            );
        }
    }
}

#[test]
fn rate_exponent_increases_in_the_mutant_rate() {
    let rates = RateModel::new(default_resource(SpatialGrid::new(64).unwrap()));
    for a2 in [0.5, 0.75, 1.0] {
        let values: Vec<f64> = (0..=10)
            .map(|k| rates.lambda(0.5 + 0.05 * k as f64, a2).unwrap())
            .collect();
        assert!(values.windows(2).all(|w| w[1] > w[0]), "{values:?}");
    }
}

#[test]
fn mutant_minimizer_does_not_depend_on_the_resident() {
    let model = model();
    let traits = TraitGrid::centered(64).unwrap();
    let target = model.profile().interior_argmin().unwrap();
    for z2 in [-0.4, -0.1, 0.2, 0.45] {
        let (best, _) = (0..traits.len())
            .map(|j| {
                (
                    traits.node(j),
                    model.invasion_exponent(traits.node(j), z2).unwrap(),
                )
            })
            .fold((f64::NAN, f64::INFINITY), |acc, (z, l)| {
                if l < acc.1 {
                    (z, l)
                } else {
                    acc
                }
            });
        assert!(
            (best - target).abs() <= traits.spacing(),
            "resident {z2}: argmin {best}"
        );
    }
}

#[test]
fn surface_is_symmetric_under_reflection() {
    let model = model();
    for (z1, z2) in [(0.1, 0.3), (-0.45, 0.2), (0.37, -0.11)] {
        let l = model.invasion_exponent(z1, z2).unwrap();
        let r = model.invasion_exponent(-z1, -z2).unwrap();
        assert!((l - r).abs() < 1e-12, "{l} vs {r}");
    }
}

#[test]
fn flat_and_decreasing_profiles_fail_the_convexity_check() {
    let m = default_resource(SpatialGrid::new(64).unwrap());
    let flat = InvasionModel::new(
        DispersalProfile::constant(0.7, -0.5, 0.5).unwrap(),
        m.clone(),
    );
    let r = check_h1(&flat).unwrap();
    assert!(!r.pass);
    assert!(r.sign_a.abs() < 1e-8 && r.sign_b.abs() < 1e-8, "{r:?}");

    let shape = ProfileShape::Affine {
        at_a: 1.2,
        at_b: 0.4,
    };
    let falling = InvasionModel::new(DispersalProfile::new(shape, -0.5, 0.5).unwrap(), m);
    let r = check_h1(&falling).unwrap();
    assert!(!r.pass);
    assert!(r.sign_b < 0.0, "{r:?}");
}
