//! Trait-to-dispersal maps `z -> alpha(z)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the U-shaped log-cosine profile
/// `alpha = alpha0 - ln(cos u) / k0`, `u in [-z_m, z_m]`, mapped affinely onto
/// the trait interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogCosineParams {
    pub alpha0: f64,
    pub l0: f64,
    /// Curvature ratio bound. When built by sampling it is the sample
    /// maximum, a lower estimate of the supremum over the rate box.
    pub k0: f64,
    pub z_m: f64,
    pub k0_samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProfileShape {
    Constant {
        value: f64,
    },
    /// Linear interpolation between the values at the two endpoints.
    Affine {
        at_a: f64,
        at_b: f64,
    },
    Quadratic {
        min_value: f64,
        curvature: f64,
        center: f64,
    },
    LogCosine(LogCosineParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersalProfile {
    shape: ProfileShape,
    a: f64,
    b: f64,
}

impl DispersalProfile {
    pub fn new(shape: ProfileShape, a: f64, b: f64) -> Result<Self> {
        if !(a < b) {
            return Err(Error::invalid(format!(
                "trait interval needs a < b, got [{a}, {b}]"
            )));
        }
        if let ProfileShape::LogCosine(p) = shape {
            if !(p.k0 > 0.0) {
                return Err(Error::invalid(format!("k0 must be positive, got {}", p.k0)));
            }
            if !(p.z_m > 0.0 && p.z_m < std::f64::consts::FRAC_PI_2) {
                return Err(Error::invalid(format!(
                    "z_m must lie in (0, pi/2), got {}",
                    p.z_m
                )));
            }
        }
        let profile = Self { shape, a, b };
        // Positivity on a fine sample; every shape is monotone or convex, so
        // sampled extremes bracket the true range closely.
        let (lo, hi) = profile.sampled_range(1025);
        if !(lo > 0.0 && hi.is_finite()) {
            return Err(Error::invalid(format!(
                "dispersal rate must stay in (0, inf) on [{a}, {b}], sampled range [{lo}, {hi}]"
            )));
        }
        Ok(profile)
    }

    pub fn constant(value: f64, a: f64, b: f64) -> Result<Self> {
        Self::new(ProfileShape::Constant { value }, a, b)
    }

    pub fn shape(&self) -> &ProfileShape {
        &self.shape
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    fn logcos_map(&self, p: &LogCosineParams, z: f64) -> (f64, f64) {
        let scale = 2.0 * p.z_m / (self.b - self.a);
        (-p.z_m + scale * (z - self.a), scale)
    }

    pub fn value(&self, z: f64) -> f64 {
        match self.shape {
            ProfileShape::Constant { value } => value,
            ProfileShape::Affine { at_a, at_b } => {
                at_a + (at_b - at_a) * (z - self.a) / (self.b - self.a)
            }
            ProfileShape::Quadratic {
                min_value,
                curvature,
                center,
            } => min_value + curvature * (z - center).powi(2),
            ProfileShape::LogCosine(p) => {
                let (u, _) = self.logcos_map(&p, z);
                p.alpha0 - u.cos().ln() / p.k0
            }
        }
    }

    pub fn derivative(&self, z: f64) -> f64 {
        match self.shape {
            ProfileShape::Constant { .. } => 0.0,
            ProfileShape::Affine { at_a, at_b } => (at_b - at_a) / (self.b - self.a),
            ProfileShape::Quadratic {
                curvature, center, ..
            } => 2.0 * curvature * (z - center),
            ProfileShape::LogCosine(p) => {
                let (u, s) = self.logcos_map(&p, z);
                s * u.tan() / p.k0
            }
        }
    }

    pub fn second_derivative(&self, z: f64) -> f64 {
        match self.shape {
            ProfileShape::Constant { .. } | ProfileShape::Affine { .. } => 0.0,
            ProfileShape::Quadratic { curvature, .. } => 2.0 * curvature,
            ProfileShape::LogCosine(p) => {
                let (u, s) = self.logcos_map(&p, z);
                s * s / (p.k0 * u.cos().powi(2))
            }
        }
    }

    /// Location of the minimum of `alpha` when it is attained at a unique
    /// interior point.
    pub fn interior_argmin(&self) -> Option<f64> {
        match self.shape {
            ProfileShape::Constant { .. } | ProfileShape::Affine { .. } => None,
            ProfileShape::Quadratic {
                curvature, center, ..
            } => (curvature > 0.0 && center > self.a && center < self.b).then_some(center),
            ProfileShape::LogCosine(_) => Some(0.5 * (self.a + self.b)),
        }
    }

    pub fn sampled_range(&self, samples: usize) -> (f64, f64) {
        let samples = samples.max(2);
        (0..samples)
            .map(|k| self.value(self.a + (self.b - self.a) * k as f64 / (samples - 1) as f64))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            })
    }
}
