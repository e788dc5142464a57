//! Normalised principal Floquet bundles of `d_tau Psi = alpha L Psi + c(x, tau) Psi`
//! and the effective Hamiltonian assembled from them.
//!
//! The bundle `(Phi, H)` solves `d_tau Phi = alpha L Phi + c Phi + H Phi` with
//! `int Phi = 1`; integrating over the domain gives `H = -int c Phi`.

use rayon::prelude::*;
use serde::Serialize;

use crate::ecology::{two_smallest_eigenvalues, DispersalProfile};
use crate::error::{Error, Result};
use crate::grid::{integrate, ScalarField, SpatialGrid, TraitGrid, UniformGrid};
use crate::tridiag::Tridiagonal;

/// A potential `c(x, tau)` sampled on a spatial grid.
pub trait TimePotential: Sync {
    fn grid(&self) -> SpatialGrid;
    fn eval_into(&self, tau: f64, out: &mut [f64]);

    fn eval(&self, tau: f64) -> ScalarField {
        let g = self.grid();
        let mut v = vec![0.0; g.len()];
        self.eval_into(tau, &mut v);
        ScalarField::from_vec_unchecked(g, v)
    }
}

/// A potential that does not depend on time.
#[derive(Debug, Clone)]
pub struct StaticPotential(pub ScalarField);

impl TimePotential for StaticPotential {
    fn grid(&self) -> SpatialGrid {
        *self.0.grid()
    }

    fn eval_into(&self, _tau: f64, out: &mut [f64]) {
        out.copy_from_slice(self.0.values());
    }
}

/// A potential given by a closure `(x, tau) -> c`.
pub struct FnPotential<F> {
    grid: SpatialGrid,
    f: F,
}

impl<F: Fn(f64, f64) -> f64 + Sync> FnPotential<F> {
    pub fn new(grid: SpatialGrid, f: F) -> Self {
        Self { grid, f }
    }
}

impl<F: Fn(f64, f64) -> f64 + Sync> TimePotential for FnPotential<F> {
    fn grid(&self) -> SpatialGrid {
        self.grid
    }

    fn eval_into(&self, tau: f64, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = (self.f)(self.grid.node(i), tau);
        }
    }
}

/// Stored samples of `rho(x, t)` in slow time, linearly interpolated and
/// held constant outside the sampled range.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RhoHistory {
    times: Vec<f64>,
    samples: Vec<ScalarField>,
}

impl RhoHistory {
    pub fn new(times: Vec<f64>, samples: Vec<ScalarField>) -> Result<Self> {
        if times.is_empty() || times.len() != samples.len() {
            return Err(Error::invalid(format!(
                "rho history needs matching nonempty times and samples ({} vs {})",
                times.len(),
                samples.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid(
                "rho history times must be strictly increasing",
            ));
        }
        let g = *samples[0].grid();
        if samples.iter().any(|s| *s.grid() != g) {
            return Err(Error::invalid(
                "rho history samples live on different grids",
            ));
        }
        Ok(Self { times, samples })
    }

    pub fn push(&mut self, t: f64, rho: ScalarField) -> Result<()> {
        if t <= *self.times.last().expect("history is nonempty") {
            return Err(Error::invalid(format!(
                "history time {t} is not increasing"
            )));
        }
        self.times.push(t);
        self.samples.push(rho);
        Ok(())
    }

    pub fn grid(&self) -> SpatialGrid {
        *self.samples[0].grid()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn samples(&self) -> &[ScalarField] {
        &self.samples
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().expect("history is nonempty")
    }

    pub fn at_into(&self, t: f64, out: &mut [f64]) {
        let n = self.times.len();
        if t <= self.times[0] || n == 1 {
            out.copy_from_slice(self.samples[0].values());
            return;
        }
        if t >= self.times[n - 1] {
            out.copy_from_slice(self.samples[n - 1].values());
            return;
        }
        let k = self.times.partition_point(|&s| s <= t) - 1;
        let w = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        let (a, b) = (self.samples[k].values(), self.samples[k + 1].values());
        for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
            *o = (1.0 - w) * x + w * y;
        }
    }

    pub fn at(&self, t: f64) -> ScalarField {
        let mut v = vec![0.0; self.grid().len()];
        self.at_into(t, &mut v);
        ScalarField::from_vec_unchecked(self.grid(), v)
    }
}

/// `c(x, tau) = m(x) - rho(x, eps * max(tau, 1))`: the population's
/// potential in fast time, frozen before `t = eps`.
pub struct FeedbackPotential<'a> {
    pub m: &'a ScalarField,
    pub history: &'a RhoHistory,
    pub epsilon: f64,
}

impl TimePotential for FeedbackPotential<'_> {
    fn grid(&self) -> SpatialGrid {
        *self.m.grid()
    }

    fn eval_into(&self, tau: f64, out: &mut [f64]) {
        self.history.at_into(self.epsilon * tau.max(1.0), out);
        for (o, &mi) in out.iter_mut().zip(self.m.values()) {
            *o = mi - *o;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BundleOptions {
    /// Upper bound on the fast-time step.
    pub max_dtau: f64,
    /// Spin-up duration; `None` selects `spin_up_factor / gap`.
    pub spin_up: Option<f64>,
    pub spin_up_factor: f64,
    /// Rerun with twice the spin-up and require agreement of `H`.
    pub check_spin_up: bool,
    pub spin_up_tolerance: f64,
    /// Initial profile at the start of the spin-up; `None` means `Psi = 1`.
    pub initial: Option<ScalarField>,
}

impl Default for BundleOptions {
    fn default() -> Self {
        Self {
            max_dtau: 0.05,
            spin_up: None,
            spin_up_factor: 20.0,
            check_spin_up: false,
            spin_up_tolerance: 1e-8,
            initial: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FloquetBundle {
    pub taus: Vec<f64>,
    pub phi: Vec<ScalarField>,
    pub h: Vec<f64>,
    pub dtau: f64,
    pub spin_up: f64,
    /// Largest `sup Phi / inf Phi` over the retained window.
    pub harnack_ratio: f64,
    /// Largest `|H + int c Phi|` over the retained window.
    pub mass_defect: f64,
    /// Sup-norm change of `H` when the spin-up was doubled, if checked.
    pub spin_up_deviation: Option<f64>,
}

/// Rate of attraction of the discrete march towards the bundle, from the two
/// lowest eigenvalues of the time-averaged operator.
fn effective_gap(
    alpha: f64,
    c: &dyn TimePotential,
    tau_start: f64,
    tau_end: f64,
    dtau: f64,
) -> f64 {
    let g = c.grid();
    let samples = if tau_end > tau_start { 17 } else { 1 };
    let mut mean = vec![0.0; g.len()];
    let mut buf = vec![0.0; g.len()];
    for k in 0..samples {
        let tau = if samples == 1 {
            tau_start
        } else {
            tau_start + (tau_end - tau_start) * k as f64 / (samples - 1) as f64
        };
        c.eval_into(tau, &mut buf);
        for (m, b) in mean.iter_mut().zip(&buf) {
            *m += b / samples as f64;
        }
    }
    let c_max = mean.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (l0, l1) = two_smallest_eigenvalues(alpha, &ScalarField::from_vec_unchecked(g, mean));
    ((1.0 + dtau * (l1 + c_max)) / (1.0 + dtau * (l0 + c_max))).ln() / dtau
}

/// Fast-time grid `tau_start + k * dtau`, `k = 0..=steps`, with `dtau` no
/// larger than `max_dtau`.
fn retained_grid(tau_start: f64, tau_end: f64, max_dtau: f64) -> (usize, f64) {
    let len = tau_end - tau_start;
    if len <= 0.0 {
        return (0, max_dtau);
    }
    let steps = (len / max_dtau).ceil().max(1.0) as usize;
    (steps, len / steps as f64)
}

/// Core march. Steps are fused backward Euler,
/// `(I - dtau (alpha L + diag(c - max c))) Psi' = Psi`, followed by
/// renormalisation to unit mass, which keeps every iterate positive and makes
/// the exact discrete eigenpair a fixed point for static potentials.
/// `record(k, tau_k, Phi_k, H_k)` is called on the retained window.
#[allow(clippy::too_many_arguments)]
fn march(
    alpha: f64,
    c: &dyn TimePotential,
    tau_start: f64,
    steps: usize,
    dtau: f64,
    spin_steps: usize,
    initial: Option<&ScalarField>,
    mut record: impl FnMut(usize, f64, &[f64], f64),
) -> Result<()> {
    let g = c.grid();
    let n = g.len();
    let h = g.spacing();
    let mut psi = match initial {
        Some(init) => init.values().to_vec(),
        None => vec![1.0; n],
    };
    if psi.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::invalid("initial bundle profile must be positive"));
    }
    let mass = integrate(&psi, h);
    psi.iter_mut().for_each(|p| *p /= mass);

    let mut cv = vec![0.0; n];
    let tau0 = tau_start - spin_steps as f64 * dtau;
    let eval = |tau: f64, out: &mut [f64]| c.eval_into(tau.max(tau_start), out);
    let total = spin_steps + steps;
    for s in 0..=total {
        if s > 0 {
            let tau = tau0 + s as f64 * dtau;
            eval(tau, &mut cv);
            let c_max = cv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let extra: Vec<f64> = cv.iter().map(|&ci| -dtau * (ci - c_max)).collect();
            let a = Tridiagonal::shifted_laplacian(n, h, 1.0, -dtau * alpha, Some(&extra));
            a.solve_in_place(&mut psi)
                .ok_or_else(|| Error::Invariant("bundle step matrix is singular".into()))?;
            if let Some(i) = psi.iter().position(|&p| !(p > 0.0 && p.is_finite())) {
                return Err(Error::Invariant(format!(
                    "bundle iterate lost positivity at cell {i} (tau = {tau})"
                )));
            }
            let mass = integrate(&psi, h);
            psi.iter_mut().for_each(|p| *p /= mass);
        }
        if s >= spin_steps {
            let k = s - spin_steps;
            let tau = tau_start + k as f64 * dtau;
            eval(tau, &mut cv);
            let hk = -h * cv.iter().zip(&psi).map(|(a, b)| a * b).sum::<f64>();
            record(k, tau, &psi, hk);
        }
    }
    Ok(())
}

fn resolve_spin_up(
    alpha: f64,
    c: &dyn TimePotential,
    tau_start: f64,
    tau_end: f64,
    dtau: f64,
    opts: &BundleOptions,
) -> Result<f64> {
    let spin = match opts.spin_up {
        Some(s) => s,
        None => opts.spin_up_factor / effective_gap(alpha, c, tau_start, tau_end, dtau),
    };
    if !(spin.is_finite() && spin > 0.0) {
        return Err(Error::invalid(format!(
            "spin-up must be positive, got {spin}"
        )));
    }
    Ok(spin)
}

fn check_inputs(alpha: f64, tau_start: f64, tau_end: f64, opts: &BundleOptions) -> Result<()> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::invalid(format!(
            "dispersal rate must be positive, got {alpha}"
        )));
    }
    if !(tau_end >= tau_start) {
        return Err(Error::invalid(format!(
            "empty bundle window [{tau_start}, {tau_end}]"
        )));
    }
    if !(opts.max_dtau > 0.0) {
        return Err(Error::invalid(format!(
            "fast-time step must be positive, got {}",
            opts.max_dtau
        )));
    }
    Ok(())
}

/// The bundle on `[tau_start, tau_end]`, approximating the eternal solution
/// by a spin-up from `tau_start - spin_up` with `c` frozen at its
/// `tau_start` value before the window.
pub fn compute_bundle(
    alpha: f64,
    c: &dyn TimePotential,
    tau_start: f64,
    tau_end: f64,
    opts: &BundleOptions,
) -> Result<FloquetBundle> {
    check_inputs(alpha, tau_start, tau_end, opts)?;
    let (steps, dtau) = retained_grid(tau_start, tau_end, opts.max_dtau);
    let spin_up = resolve_spin_up(alpha, c, tau_start, tau_end, dtau, opts)?;
    let run = |spin: f64| -> Result<FloquetBundle> {
        let spin_steps = (spin / dtau).ceil() as usize;
        let mut b = FloquetBundle {
            taus: Vec::with_capacity(steps + 1),
            phi: Vec::with_capacity(steps + 1),
            h: Vec::with_capacity(steps + 1),
            dtau,
            spin_up: spin_steps as f64 * dtau,
            harnack_ratio: 0.0,
            mass_defect: 0.0,
            spin_up_deviation: None,
        };
        let grid = c.grid();
        let mut cv = vec![0.0; grid.len()];
        march(
            alpha,
            c,
            tau_start,
            steps,
            dtau,
            spin_steps,
            opts.initial.as_ref(),
            |_, tau, phi, hk| {
                let (lo, hi) = phi.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &p| {
                    (lo.min(p), hi.max(p))
                });
                b.harnack_ratio = b.harnack_ratio.max(hi / lo);
                c.eval_into(tau, &mut cv);
                let defect =
                    hk + grid.spacing() * cv.iter().zip(phi).map(|(a, b)| a * b).sum::<f64>();
                b.mass_defect = b.mass_defect.max(defect.abs());
                b.taus.push(tau);
                b.h.push(hk);
                b.phi
                    .push(ScalarField::from_vec_unchecked(grid, phi.to_vec()));
            },
        )?;
        Ok(b)
    };
    let mut bundle = run(spin_up)?;
    if opts.check_spin_up {
        let doubled = run(2.0 * spin_up)?;
        let dev = bundle
            .h
            .iter()
            .zip(&doubled.h)
            .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        bundle.spin_up_deviation = Some(dev);
        if dev > opts.spin_up_tolerance {
            return Err(Error::BundleNotConverged { deviation: dev });
        }
    }
    Ok(bundle)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveOptions {
    pub bundle: BundleOptions,
    /// Number of uniform output intervals on `[0, t_end]`.
    pub outputs: usize,
    /// Keep `-log Phi` every this many output times (0 disables).
    pub phi_every: usize,
}

impl Default for EffectiveOptions {
    fn default() -> Self {
        Self {
            bundle: BundleOptions::default(),
            outputs: 100,
            phi_every: 1,
        }
    }
}

/// `H_eps(z, t)` on trait nodes and uniform slow times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectiveHamiltonian {
    pub traits: TraitGrid,
    pub times: Vec<f64>,
    pub epsilon: f64,
    /// Time-major: `h[k * n_z + j]` is `H_eps(z_j, t_k)`.
    pub h: Vec<f64>,
    /// `-log Phi` at the time indices listed in `phi_times`, layout
    /// `[(slot * n_z + j) * n_x + i]`.
    pub phi: Vec<f64>,
    pub phi_times: Vec<usize>,
    pub spatial: SpatialGrid,
    pub harnack_ratio: f64,
    /// Fast-time spin-up used for each trait.
    pub spin_up: Vec<f64>,
    /// The spin-up reached before `t = eps`, where the history is frozen.
    pub spin_up_uses_frozen_extension: bool,
}

impl EffectiveHamiltonian {
    pub fn n_z(&self) -> usize {
        self.traits.len()
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.h[k * self.n_z() + j]
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let n = self.n_z();
        &self.h[k * n..(k + 1) * n]
    }

    /// Linear interpolation in time of the nodal table, clamped at the ends.
    pub fn row_at(&self, t: f64, out: &mut [f64]) {
        let n = self.times.len();
        if t <= self.times[0] || n == 1 {
            out.copy_from_slice(self.row(0));
            return;
        }
        if t >= self.times[n - 1] {
            out.copy_from_slice(self.row(n - 1));
            return;
        }
        let k = (self.times.partition_point(|&s| s <= t) - 1).min(n - 2);
        let w = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        for ((o, a), b) in out.iter_mut().zip(self.row(k)).zip(self.row(k + 1)) {
            *o = (1.0 - w) * a + w * b;
        }
    }

    /// Linear interpolation in both `z` (between nodes, clamped) and `t`.
    pub fn interpolate(&self, z: f64, t: f64) -> f64 {
        let mut row = vec![0.0; self.n_z()];
        self.row_at(t, &mut row);
        interp_nodes(&self.traits, &row, z)
    }

    pub fn phi_slice(&self, slot: usize, j: usize) -> &[f64] {
        let nx = self.spatial.len();
        let start = (slot * self.n_z() + j) * nx;
        &self.phi[start..start + nx]
    }
}

/// Piecewise-linear interpolation of nodal values, constant beyond the outer
/// nodes.
pub(crate) fn interp_nodes<G: UniformGrid>(grid: &G, values: &[f64], z: f64) -> f64 {
    let n = values.len();
    let s = (z - grid.lower()) / grid.spacing() - 0.5;
    if s <= 0.0 {
        return values[0];
    }
    if s >= (n - 1) as f64 {
        return values[n - 1];
    }
    let k = s.floor() as usize;
    let w = s - k as f64;
    (1.0 - w) * values[k] + w * values[k + 1]
}

/// Bundles for every trait node with `c = m - rho(., eps max(tau, 1))` on
/// `t in [0, t_end]`, reported at `t = t_end * k / outputs`.
pub fn effective_hamiltonian(
    history: &RhoHistory,
    m: &ScalarField,
    profile: &DispersalProfile,
    epsilon: f64,
    traits: &TraitGrid,
    t_end: f64,
    opts: &EffectiveOptions,
) -> Result<EffectiveHamiltonian> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if !(t_end > 0.0) || opts.outputs == 0 {
        return Err(Error::invalid(
            "effective Hamiltonian needs t_end > 0 and at least one output",
        ));
    }
    if history.grid() != *m.grid() {
        return Err(Error::invalid(
            "rho history and resource live on different grids",
        ));
    }
    let slack = 1e-9 * t_end.max(1.0);
    if history.start() > slack || history.end() < t_end - slack {
        return Err(Error::invalid(format!(
            "rho history covers [{}, {}], need [0, {t_end}]",
            history.start(),
            history.end()
        )));
    }
    let potential = FeedbackPotential {
        m,
        history,
        epsilon,
    };
    let tau_end = t_end / epsilon;
    let out_dtau = tau_end / opts.outputs as f64;
    let sub = (out_dtau / opts.bundle.max_dtau).ceil().max(1.0) as usize;
    let dtau = out_dtau / sub as f64;
    let steps = opts.outputs * sub;
    let nx = m.len();
    let phi_times: Vec<usize> = if opts.phi_every == 0 {
        Vec::new()
    } else {
        (0..=opts.outputs).step_by(opts.phi_every).collect()
    };

    struct Column {
        h: Vec<f64>,
        phi: Vec<Vec<f64>>,
        harnack: f64,
        spin: f64,
    }
    let columns = (0..traits.len())
        .into_par_iter()
        .map(|j| -> Result<Column> {
            let alpha = profile.value(traits.node(j));
            let spin = resolve_spin_up(alpha, &potential, 0.0, tau_end, dtau, &opts.bundle)?;
            let spin_steps = (spin / dtau).ceil() as usize;
            let mut col = Column {
                h: Vec::with_capacity(opts.outputs + 1),
                phi: Vec::with_capacity(phi_times.len()),
                harnack: 0.0,
                spin: spin_steps as f64 * dtau,
            };
            march(
                alpha,
                &potential,
                0.0,
                steps,
                dtau,
                spin_steps,
                opts.bundle.initial.as_ref(),
                |k, _, phi, hk| {
                    if k % sub != 0 {
                        return;
                    }
                    let out = k / sub;
                    let (lo, hi) = phi.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &p| {
                        (lo.min(p), hi.max(p))
                    });
                    col.harnack = col.harnack.max(hi / lo);
                    col.h.push(hk);
                    if opts.phi_every > 0 && out.is_multiple_of(opts.phi_every) {
                        col.phi.push(phi.iter().map(|p| -p.ln()).collect());
                    }
                },
            )?;
            Ok(col)
        })
        .collect::<Result<Vec<_>>>()?;

    let nz = traits.len();
    let nt = opts.outputs + 1;
    let mut h = vec![0.0; nt * nz];
    let mut phi = vec![0.0; phi_times.len() * nz * nx];
    for (j, col) in columns.iter().enumerate() {
        for (k, &v) in col.h.iter().enumerate() {
            h[k * nz + j] = v;
        }
        for (slot, p) in col.phi.iter().enumerate() {
            let start = (slot * nz + j) * nx;
            phi[start..start + nx].copy_from_slice(p);
        }
    }
    Ok(EffectiveHamiltonian {
        traits: *traits,
        times: (0..nt)
            .map(|k| t_end * k as f64 / opts.outputs as f64)
            .collect(),
        epsilon,
        h,
        phi,
        phi_times,
        spatial: *m.grid(),
        harnack_ratio: columns.iter().fold(0.0, |acc, c| acc.max(c.harnack)),
        spin_up: columns.iter().map(|c| c.spin).collect(),
        // The window starts at tau = 0 and the history is frozen for tau < 1,
        // so any positive spin-up lies in the frozen extension.
        spin_up_uses_frozen_extension: true,
    })
}

/// Finite-difference `z` derivatives of an effective Hamiltonian table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HDerivatives {
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

/// Central differences on interior nodes, one-sided second-order stencils
/// on the two outer nodes.
pub fn finite_diff_z(table: &EffectiveHamiltonian) -> Result<HDerivatives> {
    let nz = table.n_z();
    if nz < 5 {
        return Err(Error::invalid(
            "finite_diff_z needs at least five trait samples",
        ));
    }
    let hz = table.traits.spacing();
    let mut d1 = vec![0.0; table.h.len()];
    let mut d2 = vec![0.0; table.h.len()];
    for k in 0..table.times.len() {
        let row = table.row(k);
        let (r1, r2) = diff_row(row, hz);
        d1[k * nz..(k + 1) * nz].copy_from_slice(&r1);
        d2[k * nz..(k + 1) * nz].copy_from_slice(&r2);
    }
    Ok(HDerivatives { d1, d2 })
}

pub(crate) fn diff_row(f: &[f64], h: f64) -> (Vec<f64>, Vec<f64>) {
    let n = f.len();
    let mut d1 = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    for j in 1..n - 1 {
        d1[j] = (f[j + 1] - f[j - 1]) / (2.0 * h);
        d2[j] = (f[j + 1] - 2.0 * f[j] + f[j - 1]) / (h * h);
    }
    d1[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h);
    d2[0] = (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) / (h * h);
    d1[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * h);
    d2[n - 1] = (2.0 * f[n - 1] - 5.0 * f[n - 2] + 4.0 * f[n - 3] - f[n - 4]) / (h * h);
    (d1, d2)
}

/// Minimum of `d^2 H / dz^2` over nodes with `z` in `z_window` and `t` in
/// `t_window`; `None` if the window holds no node.
pub fn min_convexity(
    table: &EffectiveHamiltonian,
    derivs: &HDerivatives,
    z_window: (f64, f64),
    t_window: (f64, f64),
) -> Option<f64> {
    let nz = table.n_z();
    let mut best: Option<f64> = None;
    for (k, &t) in table.times.iter().enumerate() {
        if t < t_window.0 || t > t_window.1 {
            continue;
        }
        for j in 0..nz {
            let z = table.traits.node(j);
            if z < z_window.0 || z > z_window.1 {
                continue;
            }
            let v = derivs.d2[k * nz + j];
            best = Some(best.map_or(v, |b: f64| b.min(v)));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecology::{default_resource, principal_eigenpair, solve_theta};

    fn grid() -> SpatialGrid {
        SpatialGrid::new(32).unwrap()
    }

    #[test]
    fn constant_potential_gives_flat_bundle() {
        let c = StaticPotential(ScalarField::constant(grid(), 0.7));
        let b = compute_bundle(0.5, &c, 0.0, 2.0, &BundleOptions::default()).unwrap();
        for (phi, h) in b.phi.iter().zip(&b.h) {
            assert!((h + 0.7).abs() < 1e-14);
            assert!(phi.values().iter().all(|p| (p - 1.0).abs() < 1e-13));
        }
    }

    #[test]
    fn static_potential_reduces_to_eigenpair() {
        let m = default_resource(grid());
        let c = m.map(|v| 0.3 * v);
        let pair = principal_eigenpair(0.4, &c).unwrap();
        let b = compute_bundle(
            0.4,
            &StaticPotential(c),
            0.0,
            1.0,
            &BundleOptions::default(),
        )
        .unwrap();
        for (phi, h) in b.phi.iter().zip(&b.h) {
            assert!((h - pair.lambda).abs() < 1e-9, "{h} {}", pair.lambda);
            assert!(phi.sup_distance(&pair.phi) < 1e-8);
        }
        assert!(b.mass_defect < 1e-12);
    }

    #[test]
    fn history_interpolates_and_clamps() {
        let g = grid();
        let h = RhoHistory::new(
            vec![0.0, 1.0],
            vec![ScalarField::constant(g, 1.0), ScalarField::constant(g, 3.0)],
        )
        .unwrap();
        assert_eq!(h.at(0.25).values()[0], 1.5);
        assert_eq!(h.at(-1.0).values()[0], 1.0);
        assert_eq!(h.at(7.0).values()[0], 3.0);
    }

    #[test]
    fn feedback_potential_is_frozen_before_eps() {
        let g = grid();
        let m = ScalarField::constant(g, 2.0);
        let h = RhoHistory::new(
            vec![0.0, 1.0],
            vec![ScalarField::constant(g, 0.0), ScalarField::constant(g, 1.0)],
        )
        .unwrap();
        let p = FeedbackPotential {
            m: &m,
            history: &h,
            epsilon: 0.1,
        };
        let frozen = p.eval(1.0).values()[0];
        assert!((frozen - 1.9).abs() < 1e-15);
        assert_eq!(p.eval(0.0).values()[0], frozen);
        assert_eq!(p.eval(0.5).values()[0], frozen);
    }

    #[test]
    fn quadratic_table_has_exact_second_difference() {
        let traits = TraitGrid::centered(16).unwrap();
        let f: Vec<f64> = (0..16)
            .map(|j| 3.0 * (traits.node(j) - 0.1).powi(2))
            .collect();
        let (d1, d2) = diff_row(&f, traits.spacing());
        for j in 0..16 {
            assert!((d2[j] - 6.0).abs() < 1e-9);
            assert!((d1[j] - 6.0 * (traits.node(j) - 0.1)).abs() < 1e-10);
        }
    }

    #[test]
    fn frozen_resident_history_gives_invasion_exponent() {
        let g = grid();
        let m = default_resource(g);
        let profile = DispersalProfile::new(
            crate::ecology::ProfileShape::Quadratic {
                min_value: 0.4,
                curvature: 1.0,
                center: 0.0,
            },
            -0.5,
            0.5,
        )
        .unwrap();
        let zhat = 0.2;
        let theta = solve_theta(profile.value(zhat), &m).unwrap();
        let hist = RhoHistory::new(vec![0.0, 1.0], vec![theta.clone(), theta.clone()]).unwrap();
        let traits = TraitGrid::centered(16).unwrap();
        let opts = EffectiveOptions {
            outputs: 4,
            ..Default::default()
        };
        let table = effective_hamiltonian(&hist, &m, &profile, 0.1, &traits, 1.0, &opts).unwrap();
        let c = m.zip_map(&theta, |a, b| a - b);
        for j in [0, 5, 11, 15] {
            let lam = principal_eigenpair(profile.value(traits.node(j)), &c)
                .unwrap()
                .lambda;
            for k in 0..table.times.len() {
                assert!((table.get(j, k) - lam).abs() < 1e-9);
            }
        }
        assert!(table.spin_up_uses_frozen_extension);
    }
}
