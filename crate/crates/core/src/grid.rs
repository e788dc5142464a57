//! Cell-centred grids on the spatial domain `(0, 1)` and the trait interval
//! `(a, b)`, fields over them, and discrete Neumann operators.
//!
//! Both grids are uniform with nodes at cell centres. The Neumann condition is
//! closed with mirror ghosts (`f[-1] = f[0]`, `f[n] = f[n-1]`), which makes
//! the three-point Laplacian a symmetric matrix whose columns sum to zero, so
//! the midpoint quadrature of any discrete Laplacian vanishes exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A uniform cell-centred grid on a bounded interval.
pub trait UniformGrid: Copy + std::fmt::Debug + PartialEq {
    fn len(&self) -> usize;
    fn lower(&self) -> f64;
    fn upper(&self) -> f64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn spacing(&self) -> f64 {
        (self.upper() - self.lower()) / self.len() as f64
    }

    fn node(&self, i: usize) -> f64 {
        self.lower() + (i as f64 + 0.5) * self.spacing()
    }

    fn nodes(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }
}

/// Grid on the spatial domain `D = (0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    cells: usize,
}

impl SpatialGrid {
    pub const MIN_CELLS: usize = 8;

    pub fn new(cells: usize) -> Result<Self> {
        if cells < Self::MIN_CELLS {
            return Err(Error::invalid(format!(
                "spatial grid needs at least {} cells, got {cells}",
                Self::MIN_CELLS
            )));
        }
        Ok(Self { cells })
    }
}

impl UniformGrid for SpatialGrid {
    fn len(&self) -> usize {
        self.cells
    }
    fn lower(&self) -> f64 {
        0.0
    }
    fn upper(&self) -> f64 {
        1.0
    }
}

/// Grid on the trait interval `I = (a, b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraitGrid {
    cells: usize,
    a: f64,
    b: f64,
}

impl TraitGrid {
    pub const MIN_CELLS: usize = 16;

    pub fn new(cells: usize, a: f64, b: f64) -> Result<Self> {
        if cells < Self::MIN_CELLS {
            return Err(Error::invalid(format!(
                "trait grid needs at least {} cells, got {cells}",
                Self::MIN_CELLS
            )));
        }
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::invalid(format!(
                "trait interval needs a < b, got [{a}, {b}]"
            )));
        }
        Ok(Self { cells, a, b })
    }

    /// Unit-length interval centred at the origin, `(-1/2, 1/2)`.
    pub fn centered(cells: usize) -> Result<Self> {
        Self::new(cells, -0.5, 0.5)
    }

    pub fn contains(&self, z: f64) -> bool {
        z >= self.a && z <= self.b
    }
}

impl UniformGrid for TraitGrid {
    fn len(&self) -> usize {
        self.cells
    }
    fn lower(&self) -> f64 {
        self.a
    }
    fn upper(&self) -> f64 {
        self.b
    }
}

/// Real values attached to every cell of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field<G> {
    grid: G,
    values: Vec<f64>,
}

/// A function of `x` alone (resource, steady states, eigenfunctions).
pub type ScalarField = Field<SpatialGrid>;
/// A function of the trait alone (dispersal rates, value functions).
pub type TraitField = Field<TraitGrid>;

impl<G: UniformGrid> Field<G> {
    pub fn new(grid: G, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid(format!(
                "field length {} does not match grid length {}",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite field value at cell {i}"
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: G, f: impl Fn(f64) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.node(i))).collect();
        Self { grid, values }
    }

    pub fn constant(grid: G, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub(crate) fn from_vec_unchecked(grid: G, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &G {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Midpoint quadrature `h * sum(values)`.
    pub fn integrate(&self) -> f64 {
        integrate(&self.values, self.grid.spacing())
    }

    /// Three-point Neumann Laplacian.
    pub fn laplacian(&self) -> Self {
        Self {
            grid: self.grid,
            values: neumann_laplacian(&self.values, self.grid.spacing()),
        }
    }

    /// Midpoint inner product `h * sum(f g)`.
    pub fn inner(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.grid.spacing()
            * self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.len(), other.len());
        Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn sup_distance(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |acc, (a, b)| acc.max((a - b).abs()))
    }
}

/// Midpoint quadrature of cell values with spacing `h`.
pub fn integrate(values: &[f64], h: f64) -> f64 {
    h * values.iter().sum::<f64>()
}

/// Three-point second difference with mirror-ghost Neumann closure.
pub fn neumann_laplacian(values: &[f64], h: f64) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    neumann_laplacian_into(values, h, &mut out);
    out
}

pub fn neumann_laplacian_into(values: &[f64], h: f64, out: &mut [f64]) {
    let n = values.len();
    debug_assert_eq!(out.len(), n);
    let inv = 1.0 / (h * h);
    if n == 1 {
        out[0] = 0.0;
        return;
    }
    out[0] = (values[1] - values[0]) * inv;
    for i in 1..n - 1 {
        out[i] = (values[i - 1] - 2.0 * values[i] + values[i + 1]) * inv;
    }
    out[n - 1] = (values[n - 2] - values[n - 1]) * inv;
}

pub fn laplacian_x(f: &ScalarField) -> ScalarField {
    f.laplacian()
}

pub fn laplacian_z(g: &TraitField) -> TraitField {
    g.laplacian()
}

/// Parabolic refinement of a discrete minimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    /// Node index of the (leftmost) discrete minimizer.
    pub index: usize,
    /// Refined minimizer location.
    pub location: f64,
    /// Value of the fitted parabola at its vertex.
    pub value: f64,
    /// Second derivative of the fitted parabola.
    pub curvature: f64,
}

/// Leftmost index of the minimum value.
pub fn argmin_index(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Refine the discrete minimizer of node values sampled on `grid` by a
/// three-point parabola. The minimizer must have at least two neighbours on
/// each side.
pub fn refine_min<G: UniformGrid>(grid: &G, values: &[f64]) -> Result<Vertex> {
    let n = values.len();
    let j = argmin_index(values);
    if j < 2 || j + 2 >= n {
        return Err(Error::BoundaryMinimizer { index: j, len: n });
    }
    let h = grid.spacing();
    let (gm, g0, gp) = (values[j - 1], values[j], values[j + 1]);
    let second = gp - 2.0 * g0 + gm;
    let (offset, value) = if second > 0.0 {
        let d = 0.5 * (gm - gp) / second;
        (d, g0 - (gp - gm).powi(2) / (8.0 * second))
    } else {
        (0.0, g0)
    };
    Ok(Vertex {
        index: j,
        location: grid.node(j) + offset * h,
        value,
        curvature: second / (h * h),
    })
}

pub fn argmin_refined(g: &TraitField) -> Result<Vertex> {
    refine_min(g.grid(), g.values())
}

/// Five-point least-squares quadratic curvature around node `j`.
pub fn curvature_lsq5(values: &[f64], j: usize, h: f64) -> Option<f64> {
    if j < 2 || j + 2 >= values.len() {
        return None;
    }
    // For offsets -2..=2 the least-squares second derivative is
    // sum((k^2 - 2) g_k) / (7 h^2).
    let s: f64 = (-2i32..=2)
        .map(|k| {
            let idx = (j as i32 + k) as usize;
            ((k * k) as f64 - 2.0) * values[idx]
        })
        .sum();
    Some(s / (7.0 * h * h))
}

/// Density-like values on the product grid, stored trait-slice by trait-slice
/// (`values[j * n_x + i]` is the cell `(x_i, z_j)`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseField {
    spatial: SpatialGrid,
    traits: TraitGrid,
    values: Vec<f64>,
}

impl PhaseField {
    pub fn new(spatial: SpatialGrid, traits: TraitGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != spatial.len() * traits.len() {
            return Err(Error::invalid(format!(
                "phase field length {} does not match {} x {}",
                values.len(),
                spatial.len(),
                traits.len()
            )));
        }
        Ok(Self {
            spatial,
            traits,
            values,
        })
    }

    pub fn spatial(&self) -> &SpatialGrid {
        &self.spatial
    }

    pub fn traits(&self) -> &TraitGrid {
        &self.traits
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.spatial.len() + i]
    }

    pub fn trait_slice(&self, j: usize) -> &[f64] {
        let nx = self.spatial.len();
        &self.values[j * nx..(j + 1) * nx]
    }
}

/// The population density `n(x, z, t)` at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseDensity {
    field: PhaseField,
    time: f64,
}

impl PhaseDensity {
    pub fn new(
        spatial: SpatialGrid,
        traits: TraitGrid,
        values: Vec<f64>,
        time: f64,
    ) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid(format!(
                "density must be finite and nonnegative (cell {i} = {})",
                values[i]
            )));
        }
        Ok(Self {
            field: PhaseField::new(spatial, traits, values)?,
            time,
        })
    }

    pub fn field(&self) -> &PhaseField {
        &self.field
    }

    pub(crate) fn values_mut(&mut self) -> &mut Vec<f64> {
        &mut self.field.values
    }

    pub(crate) fn set_time(&mut self, t: f64) {
        self.time = t;
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn spatial(&self) -> &SpatialGrid {
        &self.field.spatial
    }

    pub fn traits(&self) -> &TraitGrid {
        &self.field.traits
    }

    pub fn values(&self) -> &[f64] {
        &self.field.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.field.get(i, j)
    }

    /// `rho(x) = int_I n(x, z) dz`.
    pub fn rho(&self) -> ScalarField {
        let nx = self.spatial().len();
        let hz = self.traits().spacing();
        let mut rho = vec![0.0; nx];
        for slice in self.field.values.chunks_exact(nx) {
            for (r, v) in rho.iter_mut().zip(slice) {
                *r += v;
            }
        }
        rho.iter_mut().for_each(|r| *r *= hz);
        ScalarField::from_vec_unchecked(*self.spatial(), rho)
    }

    /// `M(z) = int_D n(x, z) dx`.
    pub fn trait_marginal(&self) -> TraitField {
        let hx = self.spatial().spacing();
        let nx = self.spatial().len();
        let values = self
            .field
            .values
            .chunks_exact(nx)
            .map(|slice| integrate(slice, hx))
            .collect();
        TraitField::from_vec_unchecked(*self.traits(), values)
    }

    pub fn total_mass(&self) -> f64 {
        self.values().iter().sum::<f64>() * self.spatial().spacing() * self.traits().spacing()
    }
}
