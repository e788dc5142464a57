//! Direct solver for
//!
//! ```text
//! eps d_t n = alpha(z) Lap_x n + n (m - rho) + eps^2 d_zz n,   rho = int n dz
//! ```
//!
//! by Lie splitting: implicit diffusion in `x`, implicit diffusion in `z`,
//! then the reaction with `rho` frozen over the step.

use rayon::prelude::*;
use serde::Serialize;

use crate::ecology::DispersalProfile;
use crate::error::{Error, Result};
use crate::floquet::RhoHistory;
use crate::grid::{
    refine_min, PhaseDensity, PhaseField, ScalarField, SpatialGrid, TraitField, TraitGrid,
    UniformGrid,
};
use crate::tridiag::{Tridiagonal, TridiagonalLu};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub epsilon: f64,
    pub t_end: f64,
    /// `dt = c_t * epsilon`.
    pub c_t: f64,
    pub spatial: SpatialGrid,
    pub traits: TraitGrid,
    pub profile: DispersalProfile,
    pub m: ScalarField,
    /// Initial data `V0 = k0 (z - zbar0)^2`.
    pub k0: f64,
    pub zbar0: f64,
    /// Store `rho` in the history every this many steps.
    pub rho_every: usize,
    /// Emit a run record every this many steps.
    pub record_every: usize,
    /// Floor applied before taking logarithms.
    pub floor: f64,
    /// Test switches: disable the trait mutation or the reaction substep.
    pub mutation: bool,
    pub reaction: bool,
    /// A step is out of bounds when `rho` leaves `[env_min / f, f * env_max]`
    /// of the running envelope.
    pub envelope_factor: f64,
    /// Consecutive out-of-bounds steps tolerated before aborting.
    pub envelope_patience: usize,
}

impl SimConfig {
    /// Defaults for everything but the physics.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        epsilon: f64,
        t_end: f64,
        spatial: SpatialGrid,
        traits: TraitGrid,
        profile: DispersalProfile,
        m: ScalarField,
        k0: f64,
        zbar0: f64,
    ) -> Self {
        Self {
            epsilon,
            t_end,
            c_t: 0.1,
            spatial,
            traits,
            profile,
            m,
            k0,
            zbar0,
            rho_every: 10,
            record_every: 1,
            floor: 1e-300,
            mutation: true,
            reaction: true,
            envelope_factor: 10.0,
            envelope_patience: 3,
        }
    }

    pub fn dt(&self) -> f64 {
        self.c_t * self.epsilon
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 0.1) {
            return Err(Error::invalid(format!(
                "epsilon must lie in (0, 0.1], got {}",
                self.epsilon
            )));
        }
        if !(self.c_t > 0.0 && self.c_t <= 0.2) {
            return Err(Error::invalid(format!(
                "dt / epsilon must lie in (0, 0.2] for the frozen reaction, got {}",
                self.c_t
            )));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::invalid(format!(
                "horizon must be positive, got {}",
                self.t_end
            )));
        }
        if !(self.k0 > 0.0) {
            return Err(Error::invalid(format!(
                "initial curvature k0 must be positive, got {}",
                self.k0
            )));
        }
        let (a, b) = self.profile.interval();
        if (self.traits.lower() - a).abs() > 1e-12 || (self.traits.upper() - b).abs() > 1e-12 {
            return Err(Error::invalid(
                "trait grid and dispersal profile use different intervals",
            ));
        }
        let h = self.traits.spacing();
        if !(self.zbar0 > a + 2.0 * h && self.zbar0 < b - 2.0 * h) {
            return Err(Error::invalid(format!(
                "initial dominant trait {} must lie in the interior of [{a}, {b}]",
                self.zbar0
            )));
        }
        if *self.m.grid() != self.spatial {
            return Err(Error::invalid(
                "resource is sampled on a different spatial grid",
            ));
        }
        if self.m.values().iter().any(|&v| v <= 0.0) {
            return Err(Error::invalid("resource must be positive"));
        }
        if self.rho_every == 0 || self.record_every == 0 {
            return Err(Error::invalid(
                "history and record strides must be positive",
            ));
        }
        if !(self.floor > 0.0) {
            return Err(Error::invalid("log floor must be positive"));
        }
        if !(self.envelope_factor > 1.0) {
            return Err(Error::invalid("envelope factor must exceed 1"));
        }
        Ok(())
    }

    pub fn initial_value(&self, z: f64) -> f64 {
        self.k0 * (z - self.zbar0).powi(2)
    }
}

/// Logged excursion of `rho` outside the running envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundViolation {
    pub t: f64,
    pub rho_min: f64,
    pub rho_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimState {
    pub n: PhaseDensity,
    pub rho: ScalarField,
    pub step: usize,
    /// Running `[min rho, max rho]` over accepted steps.
    pub envelope: (f64, f64),
    pub violations: Vec<BoundViolation>,
    consecutive: usize,
}

impl SimState {
    pub fn t(&self) -> f64 {
        self.n.time()
    }

    /// Empirical `C` with `1/C <= rho <= C` over the run so far.
    pub fn bound_constant(&self) -> f64 {
        self.envelope.1.max(1.0 / self.envelope.0)
    }
}

fn rho_range(rho: &ScalarField) -> (f64, f64) {
    (rho.min(), rho.max())
}

/// `n(x, z, 0) = eps^{-1/2} exp(-V0(z) / eps)`.
pub fn init_population(cfg: &SimConfig) -> Result<SimState> {
    cfg.validate()?;
    let eps = cfg.epsilon;
    let nx = cfg.spatial.len();
    let mut values = Vec::with_capacity(nx * cfg.traits.len());
    for j in 0..cfg.traits.len() {
        let v = (-cfg.initial_value(cfg.traits.node(j)) / eps).exp() / eps.sqrt();
        values.extend(std::iter::repeat_n(v, nx));
    }
    let n = PhaseDensity::new(cfg.spatial, cfg.traits, values, 0.0)?;
    let rho = n.rho();
    let envelope = rho_range(&rho);
    Ok(SimState {
        n,
        rho,
        step: 0,
        envelope,
        violations: Vec::new(),
        consecutive: 0,
    })
}

/// Factored implicit operators shared by every step of a run.
pub struct Stepper {
    cfg: SimConfig,
    x_solvers: Vec<TridiagonalLu>,
    z_solver: TridiagonalLu,
    scratch: Vec<f64>,
}

impl Stepper {
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let dt = cfg.dt();
        let eps = cfg.epsilon;
        let nx = cfg.spatial.len();
        let hx = cfg.spatial.spacing();
        let x_solvers = (0..cfg.traits.len())
            .map(|j| {
                let alpha = cfg.profile.value(cfg.traits.node(j));
                Tridiagonal::shifted_laplacian(nx, hx, 1.0, -dt * alpha / eps, None)
                    .factor()
                    .ok_or_else(|| Error::Invariant("x-diffusion matrix is singular".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        let z_scale = if cfg.mutation { -dt * eps } else { 0.0 };
        let z_solver = Tridiagonal::shifted_laplacian(
            cfg.traits.len(),
            cfg.traits.spacing(),
            1.0,
            z_scale,
            None,
        )
        .factor()
        .ok_or_else(|| Error::Invariant("z-diffusion matrix is singular".into()))?;
        Ok(Self {
            cfg: cfg.clone(),
            x_solvers,
            z_solver,
            scratch: vec![0.0; nx * cfg.traits.len()],
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    /// Advances the state by one step of length `c_t * eps`.
    pub fn step(&mut self, state: &mut SimState) -> Result<()> {
        let cfg = &self.cfg;
        let nx = cfg.spatial.len();
        let nz = cfg.traits.len();
        let dt = cfg.dt();
        let t_new = state.t() + dt;
        let x_solvers = &self.x_solvers;
        let z_solver = &self.z_solver;
        {
            let n = state.n.values_mut();
            // (i) x-diffusion, one contiguous trait slice per solve.
            n.par_chunks_mut(nx)
                .zip(x_solvers.par_iter())
                .for_each(|(slice, lu)| lu.solve_in_place(slice));
            // (ii) z-diffusion on the transposed layout.
            if cfg.mutation {
                let t = &mut self.scratch;
                for j in 0..nz {
                    for i in 0..nx {
                        t[i * nz + j] = n[j * nx + i];
                    }
                }
                t.par_chunks_mut(nz)
                    .for_each(|col| z_solver.solve_in_place(col));
                for j in 0..nz {
                    for i in 0..nx {
                        n[j * nx + i] = t[i * nz + j];
                    }
                }
            }
        }
        // (iii) reaction with rho frozen at its post-diffusion value.
        if cfg.reaction {
            let rho = state.n.rho();
            let growth: Vec<f64> = cfg
                .m
                .values()
                .iter()
                .zip(rho.values())
                .map(|(m, r)| ((dt / cfg.epsilon) * (m - r)).exp())
                .collect();
            state.n.values_mut().par_chunks_mut(nx).for_each(|slice| {
                for (v, g) in slice.iter_mut().zip(&growth) {
                    *v *= g;
                }
            });
        }
        state.n.set_time(t_new);
        state.step += 1;
        if let Some(idx) = state.n.values().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                t: t_new,
                index: idx,
                dump: Box::new(state.n.clone()),
            });
        }
        state.rho = state.n.rho();
        self.check_bounds(state)
    }

    fn check_bounds(&self, state: &mut SimState) -> Result<()> {
        let (lo, hi) = rho_range(&state.rho);
        let (env_lo, env_hi) = state.envelope;
        let f = self.cfg.envelope_factor;
        if lo < env_lo / f || hi > env_hi * f {
            state.violations.push(BoundViolation {
                t: state.t(),
                rho_min: lo,
                rho_max: hi,
            });
            state.consecutive += 1;
            if state.consecutive > self.cfg.envelope_patience {
                return Err(Error::AprioriViolated {
                    t: state.t(),
                    rho_min: lo,
                    rho_max: hi,
                    env_min: env_lo,
                    env_max: env_hi,
                });
            }
        } else {
            state.consecutive = 0;
            state.envelope = (env_lo.min(lo), env_hi.max(hi));
        }
        Ok(())
    }
}

/// One-off step; prefer [`Stepper`] for repeated stepping.
pub fn step(state: &mut SimState, cfg: &SimConfig) -> Result<()> {
    Stepper::new(cfg)?.step(state)
}

/// `u = -eps log(max(n, floor))` on the phase grid.
pub fn extract_u(n: &PhaseDensity, epsilon: f64, floor: f64) -> PhaseField {
    let values = n
        .values()
        .iter()
        .map(|&v| -epsilon * v.max(floor).ln())
        .collect();
    PhaseField::new(*n.spatial(), *n.traits(), values).expect("log of a floored density is finite")
}

/// `-log` of the trait marginal, floored.
pub fn log_marginal(n: &PhaseDensity, floor: f64) -> Result<TraitField> {
    let marginal = n.trait_marginal();
    if marginal.values().iter().all(|&v| v < floor) {
        return Err(Error::PopulationExtinct { t: n.time() });
    }
    Ok(marginal.map(|v| -v.max(floor).ln()))
}

/// Maximizer of the trait marginal, refined by a parabola through `-log`
/// of the marginal.
pub fn dominant_trait(n: &PhaseDensity, floor: f64) -> Result<f64> {
    let lm = log_marginal(n, floor)?;
    Ok(refine_min(lm.grid(), lm.values())?.location)
}

/// Second moment of the normalised trait marginal about `center`.
pub fn concentration_width(n: &PhaseDensity, center: f64) -> f64 {
    let marginal = n.trait_marginal();
    let g = marginal.grid();
    let (mut mass, mut second) = (0.0, 0.0);
    for (j, &w) in marginal.values().iter().enumerate() {
        mass += w;
        second += w * (g.node(j) - center).powi(2);
    }
    second / mass
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunRecord {
    pub t: f64,
    pub zbar: f64,
    pub mass: f64,
    pub rho_min: f64,
    pub rho_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOutput {
    pub records: Vec<RunRecord>,
    pub history: RhoHistory,
    /// `(t, u)` at the requested snapshot times (nearest step at or after).
    pub snapshots: Vec<(f64, PhaseField)>,
    pub envelope: (f64, f64),
    pub violations: Vec<BoundViolation>,
    pub final_state: SimState,
}

/// Runs to `t_end`, calling `observe` on the initial state and after every
/// step.
pub fn run(
    cfg: &SimConfig,
    snapshot_times: &[f64],
    mut observe: impl FnMut(&SimState) -> Result<()>,
) -> Result<RunOutput> {
    let mut stepper = Stepper::new(cfg)?;
    let mut state = init_population(cfg)?;
    let dt = cfg.dt();
    let steps = (cfg.t_end / dt - 1e-9).ceil() as usize;
    let mut pending: Vec<f64> = snapshot_times.to_vec();
    pending.sort_by(f64::total_cmp);
    pending.reverse();

    let mut records = Vec::new();
    let mut snapshots = Vec::new();
    let mut history = RhoHistory::new(vec![0.0], vec![state.rho.clone()])?;
    let record = |state: &SimState, records: &mut Vec<RunRecord>| -> Result<()> {
        let (lo, hi) = rho_range(&state.rho);
        records.push(RunRecord {
            t: state.t(),
            zbar: dominant_trait(&state.n, cfg.floor)?,
            mass: state.n.total_mass(),
            rho_min: lo,
            rho_max: hi,
        });
        Ok(())
    };
    let take_snapshots =
        |state: &SimState, pending: &mut Vec<f64>, snapshots: &mut Vec<(f64, PhaseField)>| {
            while pending.last().is_some_and(|&ts| ts <= state.t() + 1e-12) {
                pending.pop();
                snapshots.push((state.t(), extract_u(&state.n, cfg.epsilon, cfg.floor)));
            }
        };
    record(&state, &mut records)?;
    take_snapshots(&state, &mut pending, &mut snapshots);
    observe(&state)?;
    for k in 1..=steps {
        stepper.step(&mut state)?;
        if k % cfg.record_every == 0 || k == steps {
            record(&state, &mut records)?;
        }
        if k % cfg.rho_every == 0 || k == steps {
            history.push(state.t(), state.rho.clone())?;
        }
        take_snapshots(&state, &mut pending, &mut snapshots);
        observe(&state)?;
    }
    Ok(RunOutput {
        records,
        history,
        snapshots,
        envelope: state.envelope,
        violations: state.violations.clone(),
        final_state: state,
    })
}
