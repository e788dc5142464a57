//! Forcing terms `R` of the constrained equation `d_t V + |d_z V|^2 = R - c(t)`.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::ecology::InvasionModel;
use crate::error::{Error, Result};
use crate::floquet::{interp_nodes, EffectiveHamiltonian};
use crate::grid::{TraitGrid, UniformGrid};

/// `lambda(z_j, zbar)` on trait nodes `z_j`, tabulated at resident traits on
/// the same nodes and interpolated in the resident by Catmull-Rom cubics.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaTable {
    traits: TraitGrid,
    /// `values[k * n + j] = lambda(z_j, z_k)`.
    values: Vec<f64>,
    /// `d lambda / d z1` at `(z_k, z_k)`.
    diag_slope: Vec<f64>,
}

impl LambdaTable {
    /// Tabulates the surface and checks `lambda(z, z) = 0` within `tolerance`
    /// on every node.
    pub fn build(model: &InvasionModel, traits: &TraitGrid, tolerance: f64) -> Result<Self> {
        let (a, b) = model.profile().interval();
        if (traits.lower() - a).abs() > 1e-12 || (traits.upper() - b).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "trait grid [{}, {}] differs from the profile interval [{a}, {b}]",
                traits.lower(),
                traits.upper()
            )));
        }
        let nodes = traits.nodes();
        let values = model.lambda_table(&nodes, &nodes)?;
        let n = nodes.len();
        if let Some(k) = (0..n).find(|&k| values[k * n + k].abs() > tolerance) {
            return Err(Error::invalid(format!(
                "lambda(z, z) = {:e} at z = {} exceeds the diagonal tolerance {tolerance:e}",
                values[k * n + k],
                nodes[k]
            )));
        }
        let diag_slope = nodes
            .par_iter()
            .map(|&z| model.lambda_derivs(z, z).map(|d| d.d1))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            traits: *traits,
            values,
            diag_slope,
        })
    }

    pub fn traits(&self) -> &TraitGrid {
        &self.traits
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let n = self.traits.len();
        &self.values[k * n..(k + 1) * n]
    }

    /// `lambda(z_j, zbar)` for every node `z_j`.
    pub fn row_at(&self, zbar: f64, out: &mut [f64]) {
        let n = self.traits.len();
        let s =
            ((zbar - self.traits.lower()) / self.traits.spacing() - 0.5).clamp(0.0, (n - 1) as f64);
        let k = (s.floor() as usize).min(n - 2);
        let w = s - k as f64;
        // Catmull-Rom weights for nodes k-1, k, k+1, k+2 (clamped at the ends).
        let w2 = w * w;
        let w3 = w2 * w;
        let c = [
            0.5 * (-w3 + 2.0 * w2 - w),
            0.5 * (3.0 * w3 - 5.0 * w2 + 2.0),
            0.5 * (-3.0 * w3 + 4.0 * w2 + w),
            0.5 * (w3 - w2),
        ];
        let idx = [k.saturating_sub(1), k, k + 1, (k + 2).min(n - 1)];
        out.iter_mut().for_each(|o| *o = 0.0);
        for (ci, &ki) in c.iter().zip(&idx) {
            for (o, v) in out.iter_mut().zip(self.row(ki)) {
                *o += ci * v;
            }
        }
    }

    pub fn diagonal_slope(&self, z: f64) -> f64 {
        interp_nodes(&self.traits, &self.diag_slope, z)
    }

    pub fn diagonal_slopes(&self) -> &[f64] {
        &self.diag_slope
    }
}

type SyntheticFn = dyn Fn(f64, f64, f64) -> f64 + Send + Sync;
type SlopeFn = dyn Fn(f64) -> f64 + Send + Sync;

/// A closed-form forcing `R(z, zbar, t)`.
#[derive(Clone)]
pub struct SyntheticSource {
    f: Arc<SyntheticFn>,
    slope: Option<Arc<SlopeFn>>,
    uses_zbar: bool,
}

impl SyntheticSource {
    /// A forcing that depends on `(z, t)` only.
    pub fn time_only(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            f: Arc::new(move |z, _, t| f(z, t)),
            slope: None,
            uses_zbar: false,
        }
    }

    /// A forcing coupled to the current minimizer.
    pub fn coupled(f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            f: Arc::new(f),
            slope: None,
            uses_zbar: true,
        }
    }

    /// Attach `z -> d R / d z (z, z, .)`, used to orient monotonicity checks.
    pub fn with_diagonal_slope(
        mut self,
        slope: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.slope = Some(Arc::new(slope));
        self
    }

    pub fn eval(&self, z: f64, zbar: f64, t: f64) -> f64 {
        (self.f)(z, zbar, t)
    }
}

impl fmt::Debug for SyntheticSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SyntheticSource")
            .field("uses_zbar", &self.uses_zbar)
            .field("has_slope", &self.slope.is_some())
            .finish()
    }
}

#[derive(Debug, Clone)]
pub enum Source {
    /// `R(z, zbar) = lambda(z, zbar)`.
    SelfConsistent(Arc<LambdaTable>),
    /// `R(z, t) = H_eps(z, t)` from a Floquet table.
    External(Arc<EffectiveHamiltonian>),
    Synthetic(SyntheticSource),
}

impl Source {
    pub fn uses_zbar(&self) -> bool {
        match self {
            Source::SelfConsistent(_) => true,
            Source::External(_) => false,
            Source::Synthetic(s) => s.uses_zbar,
        }
    }

    /// `R` at every node of `grid`.
    pub fn row(&self, grid: &TraitGrid, zbar: f64, t: f64, out: &mut [f64]) {
        match self {
            Source::SelfConsistent(table) => {
                if table.traits() == grid {
                    table.row_at(zbar, out);
                } else {
                    let mut own = vec![0.0; table.traits().len()];
                    table.row_at(zbar, &mut own);
                    for (j, o) in out.iter_mut().enumerate() {
                        *o = interp_nodes(table.traits(), &own, grid.node(j));
                    }
                }
            }
            Source::External(h) => {
                if h.traits == *grid {
                    h.row_at(t, out);
                } else {
                    let mut own = vec![0.0; h.n_z()];
                    h.row_at(t, &mut own);
                    for (j, o) in out.iter_mut().enumerate() {
                        *o = interp_nodes(&h.traits, &own, grid.node(j));
                    }
                }
            }
            Source::Synthetic(s) => {
                for (j, o) in out.iter_mut().enumerate() {
                    *o = s.eval(grid.node(j), zbar, t);
                }
            }
        }
    }

    /// `d R / d z` on the diagonal `zbar = z`, when the source exposes it.
    pub fn diagonal_slope(&self, z: f64) -> Option<f64> {
        match self {
            Source::SelfConsistent(table) => Some(table.diagonal_slope(z)),
            Source::External(_) => None,
            Source::Synthetic(s) => s.slope.as_ref().map(|f| f(z)),
        }
    }
}
