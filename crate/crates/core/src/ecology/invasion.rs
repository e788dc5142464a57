//! Invasion exponents `lambda(z1, z2)`, their rate form `Lambda(alpha1, alpha2)`,
//! the explicit U-shaped profile and the convexity/sign verifier.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use rayon::prelude::*;
use serde::Serialize;

use super::eigen::principal_eigenpair;
use super::profile::{DispersalProfile, LogCosineParams, ProfileShape};
use super::theta::solve_theta;
use crate::error::{Error, Result};
use crate::grid::ScalarField;

const CACHE_QUANTUM: f64 = 1e-12;

/// Concurrent insert-or-get cache of resident equilibria keyed by a
/// quantised real (a trait or a rate).
#[derive(Debug, Default)]
struct ThetaCache {
    map: RwLock<HashMap<i64, Arc<ScalarField>>>,
}

impl ThetaCache {
    fn key(v: f64) -> i64 {
        (v / CACHE_QUANTUM).round() as i64
    }

    fn get_or_solve(
        &self,
        key: f64,
        solve: impl FnOnce() -> Result<ScalarField>,
    ) -> Result<Arc<ScalarField>> {
        let k = Self::key(key);
        if let Some(t) = self.map.read().expect("theta cache poisoned").get(&k) {
            return Ok(Arc::clone(t));
        }
        // Solved outside the lock; a racing writer may win, both results are equal.
        let theta = Arc::new(solve()?);
        let mut map = self.map.write().expect("theta cache poisoned");
        Ok(Arc::clone(map.entry(k).or_insert(theta)))
    }

    fn len(&self) -> usize {
        self.map.read().expect("theta cache poisoned").len()
    }
}

fn potential(m: &ScalarField, theta: &ScalarField) -> ScalarField {
    m.zip_map(theta, |a, b| a - b)
}

fn check_rate(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "dispersal rate must be positive, got {alpha}"
        )))
    }
}

/// `Lambda(alpha1, alpha2)`: principal eigenvalue of
/// `-alpha1 L - (m - theta[alpha2])`.
#[derive(Debug)]
pub struct RateModel {
    m: ScalarField,
    cache: ThetaCache,
}

impl RateModel {
    pub fn new(m: ScalarField) -> Self {
        Self {
            m,
            cache: ThetaCache::default(),
        }
    }

    pub fn resource(&self) -> &ScalarField {
        &self.m
    }

    pub fn theta(&self, alpha: f64) -> Result<Arc<ScalarField>> {
        check_rate(alpha)?;
        self.cache
            .get_or_solve(alpha, || solve_theta(alpha, &self.m))
    }

    pub fn lambda(&self, alpha1: f64, alpha2: f64) -> Result<f64> {
        check_rate(alpha1)?;
        let theta = self.theta(alpha2)?;
        Ok(principal_eigenpair(alpha1, &potential(&self.m, &theta))?.lambda)
    }

    /// Central differences in the first rate: `(Lambda, d Lambda, d^2 Lambda)`.
    pub fn derivs(&self, alpha1: f64, alpha2: f64, step: f64) -> Result<LambdaDerivs> {
        if !(step > 0.0 && step < alpha1) {
            return Err(Error::invalid(format!(
                "rate difference step {step} must lie in (0, {alpha1})"
            )));
        }
        let lm = self.lambda(alpha1 - step, alpha2)?;
        let l0 = self.lambda(alpha1, alpha2)?;
        let lp = self.lambda(alpha1 + step, alpha2)?;
        Ok(LambdaDerivs {
            value: l0,
            d1: (lp - lm) / (2.0 * step),
            d2: (lp - 2.0 * l0 + lm) / (step * step),
        })
    }
}

/// A value with its first and second derivative in the mutant variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LambdaDerivs {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

/// Sampled `lambda` on a tensor grid; `index(i, j)` addresses `(z1[i], z2[j])`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaSurface {
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
    /// Row-major over `z2`: entry `j * z1.len() + i`.
    pub values: Vec<LambdaDerivs>,
}

impl LambdaSurface {
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.z1.len() + i
    }

    pub fn get(&self, i: usize, j: usize) -> LambdaDerivs {
        self.values[self.index(i, j)]
    }
}

pub(crate) fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (a + b)];
    }
    (0..n)
        .map(|k| a + (b - a) * k as f64 / (n - 1) as f64)
        .collect()
}

/// Invasion exponent `lambda(z1, z2) = Lambda(alpha(z1), alpha(z2))` for a
/// fixed profile and resource.
#[derive(Debug)]
pub struct InvasionModel {
    profile: DispersalProfile,
    m: ScalarField,
    cache: ThetaCache,
    deriv_step: f64,
}

impl InvasionModel {
    pub fn new(profile: DispersalProfile, m: ScalarField) -> Self {
        let (a, b) = profile.interval();
        Self {
            profile,
            m,
            cache: ThetaCache::default(),
            deriv_step: 1e-3 * (b - a),
        }
    }

    pub fn with_deriv_step(mut self, step: f64) -> Result<Self> {
        let (a, b) = self.profile.interval();
        if !(step > 0.0 && 4.0 * step < b - a) {
            return Err(Error::invalid(format!(
                "derivative step {step} out of range"
            )));
        }
        self.deriv_step = step;
        Ok(self)
    }

    pub fn profile(&self) -> &DispersalProfile {
        &self.profile
    }

    pub fn resource(&self) -> &ScalarField {
        &self.m
    }

    pub fn deriv_step(&self) -> f64 {
        self.deriv_step
    }

    pub fn cached_thetas(&self) -> usize {
        self.cache.len()
    }

    fn check_trait(&self, z: f64) -> Result<()> {
        let (a, b) = self.profile.interval();
        if z >= a && z <= b {
            Ok(())
        } else {
            Err(Error::invalid(format!("trait {z} outside [{a}, {b}]")))
        }
    }

    /// Resident equilibrium for trait `z`.
    pub fn theta(&self, z: f64) -> Result<Arc<ScalarField>> {
        self.check_trait(z)?;
        self.cache
            .get_or_solve(z, || solve_theta(self.profile.value(z), &self.m))
    }

    pub fn invasion_exponent(&self, z1: f64, z2: f64) -> Result<f64> {
        self.check_trait(z1)?;
        let theta = self.theta(z2)?;
        Ok(principal_eigenpair(self.profile.value(z1), &potential(&self.m, &theta))?.lambda)
    }

    /// Derivatives in `z1` by central differences of step
    /// [`deriv_step`](Self::deriv_step), switching to one-sided second-order
    /// stencils within a step of either endpoint.
    pub fn lambda_derivs(&self, z1: f64, z2: f64) -> Result<LambdaDerivs> {
        self.lambda_derivs_with_step(z1, z2, self.deriv_step)
    }

    pub fn lambda_derivs_with_step(&self, z1: f64, z2: f64, h: f64) -> Result<LambdaDerivs> {
        self.check_trait(z1)?;
        let (a, b) = self.profile.interval();
        let f = |z: f64| self.invasion_exponent(z, z2);
        let f0 = f(z1)?;
        if z1 - h >= a && z1 + h <= b {
            let fm = f(z1 - h)?;
            let fp = f(z1 + h)?;
            return Ok(LambdaDerivs {
                value: f0,
                d1: (fp - fm) / (2.0 * h),
                d2: (fp - 2.0 * f0 + fm) / (h * h),
            });
        }
        let s = if z1 - h < a { 1.0 } else { -1.0 };
        let f1 = f(z1 + s * h)?;
        let f2 = f(z1 + 2.0 * s * h)?;
        let f3 = f(z1 + 3.0 * s * h)?;
        Ok(LambdaDerivs {
            value: f0,
            d1: s * (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * h),
            d2: (2.0 * f0 - 5.0 * f1 + 4.0 * f2 - f3) / (h * h),
        })
    }

    /// `lambda` and its `z1` derivatives on the inclusive tensor grid of
    /// `nz1 x nz2` equispaced points of `[a, b]`.
    pub fn lambda_surface(&self, nz1: usize, nz2: usize) -> Result<LambdaSurface> {
        let (a, b) = self.profile.interval();
        self.lambda_surface_at(linspace(a, b, nz1), linspace(a, b, nz2))
    }

    pub fn lambda_surface_at(&self, z1: Vec<f64>, z2: Vec<f64>) -> Result<LambdaSurface> {
        if z1.is_empty() || z2.is_empty() {
            return Err(Error::invalid(
                "lambda surface needs at least one sample per axis",
            ));
        }
        z2.par_iter().try_for_each(|&z| self.theta(z).map(|_| ()))?;
        let values = (0..z1.len() * z2.len())
            .into_par_iter()
            .map(|k| self.lambda_derivs(z1[k % z1.len()], z2[k / z1.len()]))
            .collect::<Result<Vec<_>>>()?;
        Ok(LambdaSurface { z1, z2, values })
    }

    /// Values only (no derivatives) on arbitrary sample points.
    pub fn lambda_table(&self, z1: &[f64], z2: &[f64]) -> Result<Vec<f64>> {
        z2.par_iter().try_for_each(|&z| self.theta(z).map(|_| ()))?;
        (0..z1.len() * z2.len())
            .into_par_iter()
            .map(|k| self.invasion_exponent(z1[k % z1.len()], z2[k / z1.len()]))
            .collect()
    }
}

/// Outcome of the convexity and endpoint-sign verification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct H1Report {
    /// Minimum sampled second derivative of `lambda` in the mutant trait.
    pub k_lower: f64,
    pub k_upper: f64,
    /// First derivative in the mutant trait at `(a, a)`.
    pub sign_a: f64,
    /// First derivative in the mutant trait at `(b, b)`.
    pub sign_b: f64,
    pub samples: usize,
    pub pass: bool,
}

pub fn check_h1(model: &InvasionModel) -> Result<H1Report> {
    check_h1_with(model, 21)
}

pub fn check_h1_with(model: &InvasionModel, samples: usize) -> Result<H1Report> {
    if samples < 2 {
        return Err(Error::invalid(
            "check_h1 needs at least two samples per axis",
        ));
    }
    let surface = model.lambda_surface(samples, samples)?;
    let (k_lower, k_upper) = surface
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| {
            (lo.min(d.d2), hi.max(d.d2))
        });
    let sign_a = surface.get(0, 0).d1;
    let sign_b = surface.get(samples - 1, samples - 1).d1;
    Ok(H1Report {
        k_lower,
        k_upper,
        sign_a,
        sign_b,
        samples,
        pass: k_lower > 0.0 && sign_a < 0.0 && sign_b > 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaOptions {
    /// Samples per axis of the rate box `[alpha0, alpha0 + l0]^2`.
    pub samples: usize,
    /// Rate difference step; `None` means `1e-2 * l0`.
    pub step: Option<f64>,
    pub a: f64,
    pub b: f64,
}

impl Default for AlphaOptions {
    fn default() -> Self {
        Self {
            samples: 17,
            step: None,
            a: -0.5,
            b: 0.5,
        }
    }
}

/// The explicit profile together with the probe that fixed its curvature
/// ratio.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaBuild {
    pub profile: DispersalProfile,
    /// Sample maximum of `|d^2 Lambda| / d Lambda`: a lower estimate of the
    /// supremum over the continuous box.
    pub k0: f64,
    pub z_m: f64,
    pub k0_argmax: (f64, f64),
    /// Smallest sampled `d Lambda / d alpha1`.
    pub min_slope: f64,
    /// Rates, slopes and curvatures of every probe point.
    pub probe: Vec<(f64, f64, LambdaDerivs)>,
}

pub fn construct_alpha(alpha0: f64, l0: f64, m: &ScalarField) -> Result<AlphaBuild> {
    construct_alpha_with(alpha0, l0, m, &AlphaOptions::default())
}

pub fn construct_alpha_with(
    alpha0: f64,
    l0: f64,
    m: &ScalarField,
    opts: &AlphaOptions,
) -> Result<AlphaBuild> {
    if !(alpha0.is_finite() && alpha0 > 0.0) {
        return Err(Error::invalid(format!(
            "alpha0 must be positive, got {alpha0}"
        )));
    }
    if !(l0.is_finite() && l0 > 0.0) {
        return Err(Error::invalid(format!("L0 must be positive, got {l0}")));
    }
    if opts.samples < 2 {
        return Err(Error::invalid(
            "the rate probe needs at least two samples per axis",
        ));
    }
    let step = opts.step.unwrap_or(1e-2 * l0);
    let rates = linspace(alpha0, alpha0 + l0, opts.samples);
    let model = RateModel::new(m.clone());
    rates
        .par_iter()
        .try_for_each(|&r| model.theta(r).map(|_| ()))?;
    let n = rates.len();
    let probe = (0..n * n)
        .into_par_iter()
        .map(|k| {
            let (a1, a2) = (rates[k % n], rates[k / n]);
            model.derivs(a1, a2, step).map(|d| (a1, a2, d))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut k0 = f64::NEG_INFINITY;
    let mut k0_argmax = (alpha0, alpha0);
    let mut min_slope = f64::INFINITY;
    for &(a1, a2, d) in &probe {
        min_slope = min_slope.min(d.d1);
        let ratio = d.d2.abs() / d.d1;
        if ratio > k0 {
            k0 = ratio;
            k0_argmax = (a1, a2);
        }
    }
    if !(min_slope > 0.0) {
        return Err(Error::invalid(format!(
            "rate probe found d Lambda / d alpha1 = {min_slope:e} <= 0; the resource must be nonconstant"
        )));
    }
    if !(k0.is_finite() && k0 > 0.0) {
        return Err(Error::invalid(format!("rate probe produced k0 = {k0}")));
    }
    let z_m = (-k0 * l0).exp().acos();
    let profile = DispersalProfile::new(
        ProfileShape::LogCosine(LogCosineParams {
            alpha0,
            l0,
            k0,
            z_m,
            k0_samples: opts.samples,
        }),
        opts.a,
        opts.b,
    )?;
    Ok(AlphaBuild {
        profile,
        k0,
        z_m,
        k0_argmax,
        min_slope,
        probe,
    })
}
