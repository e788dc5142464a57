//! The epsilon sweep: full phase-space runs compared against the limiting
//! constrained problem, the resident equilibria and the effective
//! Hamiltonian.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use dispersal_core::ecology::{construct_alpha, default_resource, AlphaBuild, InvasionModel};
use dispersal_core::floquet::{effective_hamiltonian, EffectiveHamiltonian, EffectiveOptions};
use dispersal_core::grid::{ScalarField, SpatialGrid, TraitField, TraitGrid, UniformGrid};
use dispersal_core::hj::{
    monotonicity_check, solve_constrained_hj, HjOptions, HjScheme, HjSolution, LambdaTable,
    MonotonicityReport, Source,
};
use dispersal_core::kinetic::{
    concentration_width, dominant_trait, extract_u, run, RunOutput, SimConfig,
};
use dispersal_core::{Error, Result};

/// Relative slack allowed when checking that a metric does not grow.
pub const TREND_SLACK: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergeSpec {
    /// Strictly decreasing, at least three values.
    pub epsilons: Vec<f64>,
    pub n_x: usize,
    pub n_z: usize,
    pub t_end: f64,
    pub c_t: f64,
    pub k0: f64,
    pub zbar0: f64,
    pub alpha0: f64,
    pub l0: f64,
    /// Limit-problem step; `None` picks half the initial CFL bound.
    pub hj_dt: Option<f64>,
    pub hj_scheme: HjScheme,
    /// Spacing of comparison times.
    pub compare_interval: f64,
    /// Window of `t` for the resident comparison.
    pub rho_window: (f64, f64),
    /// Window of `t` for the effective-Hamiltonian comparison.
    pub h_window: (f64, f64),
    pub bundle_dtau: f64,
    /// Skip the Floquet tables (metric for criterion 8 left empty).
    pub with_hamiltonian: bool,
}

impl Default for ConvergeSpec {
    fn default() -> Self {
        Self {
            epsilons: vec![0.05, 0.025, 0.0125],
            n_x: 64,
            n_z: 128,
            t_end: 1.0,
            c_t: 0.00625,
            k0: 4.0,
            zbar0: 0.1,
            alpha0: 0.5,
            l0: 0.5,
            hj_dt: None,
            hj_scheme: HjScheme::Eno2,
            compare_interval: 0.01,
            rho_window: (0.1, 1.0),
            h_window: (0.2, 0.9),
            bundle_dtau: 0.05,
            with_hamiltonian: true,
        }
    }
}

impl ConvergeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.epsilons.len() < 3 {
            return Err(Error::InvalidInput(
                "the epsilon list needs at least three values".into(),
            ));
        }
        if self.epsilons.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::InvalidInput(
                "the epsilon list must be strictly decreasing".into(),
            ));
        }
        if !(self.compare_interval > 0.0 && self.t_end > 0.0) {
            return Err(Error::InvalidInput(
                "t_end and compare_interval must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Quantities measured for one epsilon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsilonMetrics {
    pub epsilon: f64,
    /// `sup_t |zbar_eps - zbar|`.
    pub zbar_gap: f64,
    /// `sup_{x, t in window} |rho_eps - theta_{zbar(t)}|`.
    pub rho_gap: f64,
    /// `sup_{x, z, t} |u_eps - eps/2 log eps - V|`.
    pub u_gap: f64,
    /// `sup_{z, t} (max_x u_eps - min_x u_eps)`.
    pub x_oscillation: f64,
    /// `x_oscillation / eps`.
    pub oscillation_constant: f64,
    /// Second moment of the trait marginal about `zbar_eps` at `t_end`.
    pub width: f64,
    /// `sup_{z, t in window} |H_eps(z, t) - lambda(z, zbar_eps(t))|`.
    pub h_gap: Option<f64>,
    /// `sup_t |int_0^t H_eps(zbar_eps(s), s) ds|`.
    pub h_integral: Option<f64>,
    /// `[min rho, max rho]` over the run.
    pub envelope: (f64, f64),
    pub bound_constant: f64,
    pub violations: usize,
    pub final_zbar: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdicts {
    pub zbar_gap: bool,
    pub rho_gap: bool,
    pub u_gap: bool,
    /// Fitted oscillation constants within a factor 2 of each other.
    pub oscillation_constant: bool,
    pub width: bool,
    pub h_gap: Option<bool>,
    pub h_integral: Option<bool>,
    /// Envelope endpoints within a factor 2 across the sweep.
    pub envelope: bool,
}

impl Verdicts {
    /// The five limit-trajectory metrics.
    pub fn headline(&self) -> bool {
        self.zbar_gap && self.rho_gap && self.u_gap && self.oscillation_constant && self.width
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub epsilons: Vec<f64>,
    pub metrics: Vec<EpsilonMetrics>,
    pub verdicts: Verdicts,
    pub k0_probe: f64,
    pub limit_final_zbar: f64,
    pub limit_k3: f64,
    pub trait_spacing: f64,
    pub argmin_alpha: f64,
}

/// `true` when every value is at most `(1 + slack)` times its predecessor.
pub fn weakly_decreasing(values: &[f64], slack: f64) -> bool {
    values.windows(2).all(|w| w[1] <= (1.0 + slack) * w[0])
}

pub fn within_factor(values: &[f64], factor: f64) -> bool {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    lo > 0.0 && hi <= factor * lo
}

/// Everything shared by the runs of a sweep.
pub struct SweepSetup {
    pub spatial: SpatialGrid,
    pub traits: TraitGrid,
    pub m: ScalarField,
    pub build: AlphaBuild,
    pub model: Arc<InvasionModel>,
    pub table: Arc<LambdaTable>,
}

impl SweepSetup {
    pub fn new(n_x: usize, n_z: usize, alpha0: f64, l0: f64) -> Result<Self> {
        let spatial = SpatialGrid::new(n_x)?;
        let traits = TraitGrid::centered(n_z)?;
        let m = default_resource(spatial);
        let build = construct_alpha(alpha0, l0, &m)?;
        let model = Arc::new(InvasionModel::new(build.profile, m.clone()));
        let table = Arc::new(LambdaTable::build(&model, &traits, 1e-8)?);
        Ok(Self {
            spatial,
            traits,
            m,
            build,
            model,
            table,
        })
    }

    pub fn initial_value(&self, k0: f64, zbar0: f64) -> TraitField {
        let v = TraitField::from_fn(self.traits, |z| k0 * (z - zbar0).powi(2));
        let vmin = v.min();
        v.map(|x| x - vmin)
    }

    /// Half of the CFL bound of the initial data.
    pub fn default_hj_dt(&self, k0: f64, zbar0: f64) -> f64 {
        let v0 = self.initial_value(k0, zbar0);
        let h = self.traits.spacing();
        let slope = v0
            .values()
            .windows(2)
            .fold(0.0f64, |a, w| a.max((w[1] - w[0]).abs()))
            / h;
        0.5 * h / (2.0 * slope + 1e-8)
    }

    pub fn limit_solution(
        &self,
        scheme: HjScheme,
        k0: f64,
        zbar0: f64,
        t_end: f64,
        dt: f64,
        interval: Option<f64>,
    ) -> Result<HjSolution> {
        let opts = HjOptions {
            scheme,
            t_end,
            dt,
            output_interval: interval,
            ..Default::default()
        };
        solve_constrained_hj(
            &Source::SelfConsistent(Arc::clone(&self.table)),
            &self.initial_value(k0, zbar0),
            &opts,
        )
    }

    pub fn sim_config(&self, epsilon: f64, t_end: f64, c_t: f64, k0: f64, zbar0: f64) -> SimConfig {
        let mut cfg = SimConfig::new(
            epsilon,
            t_end,
            self.spatial,
            self.traits,
            self.build.profile,
            self.m.clone(),
            k0,
            zbar0,
        );
        cfg.c_t = c_t;
        cfg
    }

    /// `theta` at a trait between nodes, by linear interpolation of the
    /// nodal equilibria.
    pub fn theta_at(&self, z: f64) -> Result<Vec<f64>> {
        let g = &self.traits;
        let n = g.len();
        let s = ((z - g.lower()) / g.spacing() - 0.5).clamp(0.0, (n - 1) as f64);
        let k = (s.floor() as usize).min(n - 2);
        let w = s - k as f64;
        let a = self.model.theta(g.node(k))?;
        let b = self.model.theta(g.node(k + 1))?;
        Ok(a.values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (1.0 - w) * x + w * y)
            .collect())
    }
}

/// Output of one epsilon run, kept for CSV emission.
pub struct EpsilonRun {
    pub metrics: EpsilonMetrics,
    pub output: RunOutput,
    pub hamiltonian: Option<EffectiveHamiltonian>,
}

fn interp_field(limit: &HjSolution, t: f64, out: &mut [f64]) {
    let snaps = &limit.snapshots;
    let k = snaps.partition_point(|(s, _)| *s <= t);
    if k == 0 {
        out.copy_from_slice(snaps[0].1.values());
        return;
    }
    if k >= snaps.len() {
        out.copy_from_slice(snaps[snaps.len() - 1].1.values());
        return;
    }
    let (t0, a) = (&snaps[k - 1].0, snaps[k - 1].1.values());
    let (t1, b) = (&snaps[k].0, snaps[k].1.values());
    let w = (t - t0) / (t1 - t0);
    for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
        *o = (1.0 - w) * x + w * y;
    }
}

pub fn run_epsilon(
    setup: &SweepSetup,
    spec: &ConvergeSpec,
    limit: &HjSolution,
    epsilon: f64,
) -> Result<EpsilonRun> {
    let cfg = setup.sim_config(epsilon, spec.t_end, spec.c_t, spec.k0, spec.zbar0);
    let nx = setup.spatial.len();
    let nz = setup.traits.len();
    let offset = 0.5 * epsilon * epsilon.ln();
    let mut next_compare = 0.0;
    let (mut zbar_gap, mut rho_gap, mut u_gap, mut osc) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut v = vec![0.0; nz];
    let tol = 1e-9;
    let observe = |state: &dispersal_core::kinetic::SimState| -> Result<()> {
        let t = state.t();
        if t + tol < next_compare && t + tol < spec.t_end {
            return Ok(());
        }
        next_compare += spec.compare_interval;
        let zbar_eps = dominant_trait(&state.n, cfg.floor)?;
        let zbar = limit.zbar_at(t);
        zbar_gap = zbar_gap.max((zbar_eps - zbar).abs());
        if t >= spec.rho_window.0 - tol && t <= spec.rho_window.1 + tol {
            let theta = setup.theta_at(zbar)?;
            let gap = state
                .rho
                .values()
                .iter()
                .zip(&theta)
                .fold(0.0f64, |a, (r, th)| a.max((r - th).abs()));
            rho_gap = rho_gap.max(gap);
        }
        interp_field(limit, t, &mut v);
        let u = extract_u(&state.n, epsilon, cfg.floor);
        for (j, vj) in v.iter().enumerate() {
            let slice = u.trait_slice(j);
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &ui in slice {
                u_gap = u_gap.max((ui - offset - vj).abs());
                lo = lo.min(ui);
                hi = hi.max(ui);
            }
            osc = osc.max(hi - lo);
        }
        debug_assert_eq!(u.values().len(), nx * nz);
        Ok(())
    };
    let output = run(&cfg, &[], observe)?;
    let final_state = &output.final_state;
    let final_zbar = dominant_trait(&final_state.n, cfg.floor)?;
    let width = concentration_width(&final_state.n, final_zbar);

    let (hamiltonian, h_gap, h_integral) = if spec.with_hamiltonian {
        let outputs = (spec.t_end / spec.compare_interval).round().max(1.0) as usize;
        let opts = EffectiveOptions {
            outputs,
            phi_every: 0,
            bundle: dispersal_core::floquet::BundleOptions {
                max_dtau: spec.bundle_dtau,
                ..Default::default()
            },
        };
        let table = effective_hamiltonian(
            &output.history,
            &setup.m,
            &setup.build.profile,
            epsilon,
            &setup.traits,
            spec.t_end,
            &opts,
        )?;
        let zbar_eps_at = |t: f64| -> f64 {
            let recs = &output.records;
            let k = recs.partition_point(|r| r.t <= t);
            if k == 0 {
                return recs[0].zbar;
            }
            if k >= recs.len() {
                return recs[recs.len() - 1].zbar;
            }
            let (a, b) = (&recs[k - 1], &recs[k]);
            let w = (t - a.t) / (b.t - a.t);
            (1.0 - w) * a.zbar + w * b.zbar
        };
        let mut lam = vec![0.0; nz];
        let mut gap = 0.0f64;
        let mut integral = 0.0;
        let mut sup_integral = 0.0f64;
        let mut prev: Option<(f64, f64)> = None;
        for (k, &t) in table.times.iter().enumerate() {
            let zb = zbar_eps_at(t);
            if t >= spec.h_window.0 - 1e-12 && t <= spec.h_window.1 + 1e-12 {
                setup.table.row_at(zb, &mut lam);
                for (h, l) in table.row(k).iter().zip(&lam) {
                    gap = gap.max((h - l).abs());
                }
            }
            let hz = table.interpolate(zb, t);
            if let Some((tp, hp)) = prev {
                integral += 0.5 * (t - tp) * (hz + hp);
                sup_integral = sup_integral.max(integral.abs());
            }
            prev = Some((t, hz));
        }
        (Some(table), Some(gap), Some(sup_integral))
    } else {
        (None, None, None)
    };

    let metrics = EpsilonMetrics {
        epsilon,
        zbar_gap,
        rho_gap,
        u_gap,
        x_oscillation: osc,
        oscillation_constant: osc / epsilon,
        width,
        h_gap,
        h_integral,
        envelope: output.envelope,
        bound_constant: final_state.bound_constant(),
        violations: output.violations.len(),
        final_zbar,
        steps: final_state.step,
    };
    Ok(EpsilonRun {
        metrics,
        output,
        hamiltonian,
    })
}

pub fn assemble(
    spec: &ConvergeSpec,
    setup: &SweepSetup,
    limit: &HjSolution,
    runs: &[EpsilonRun],
) -> ConvergenceReport {
    let metrics: Vec<EpsilonMetrics> = runs.iter().map(|r| r.metrics.clone()).collect();
    let col = |f: &dyn Fn(&EpsilonMetrics) -> f64| metrics.iter().map(f).collect::<Vec<_>>();
    let opt_col = |f: &dyn Fn(&EpsilonMetrics) -> Option<f64>| {
        metrics.iter().map(f).collect::<Option<Vec<_>>>()
    };
    let verdicts = Verdicts {
        zbar_gap: weakly_decreasing(&col(&|m| m.zbar_gap), TREND_SLACK),
        rho_gap: weakly_decreasing(&col(&|m| m.rho_gap), TREND_SLACK),
        u_gap: weakly_decreasing(&col(&|m| m.u_gap), TREND_SLACK),
        oscillation_constant: within_factor(&col(&|m| m.oscillation_constant), 2.0),
        width: weakly_decreasing(&col(&|m| m.width), TREND_SLACK),
        h_gap: opt_col(&|m| m.h_gap).map(|v| weakly_decreasing(&v, TREND_SLACK)),
        h_integral: opt_col(&|m| m.h_integral).map(|v| weakly_decreasing(&v, TREND_SLACK)),
        envelope: within_factor(&col(&|m| m.envelope.0), 2.0)
            && within_factor(&col(&|m| m.envelope.1), 2.0),
    };
    ConvergenceReport {
        epsilons: spec.epsilons.clone(),
        metrics,
        verdicts,
        k0_probe: setup.build.k0,
        limit_final_zbar: limit.records.last().map(|r| r.zbar).unwrap_or(f64::NAN),
        limit_k3: limit.k3,
        trait_spacing: setup.traits.spacing(),
        argmin_alpha: setup.build.profile.interior_argmin().unwrap_or(f64::NAN),
    }
}

/// Runs the whole sweep; epsilon runs execute concurrently.
pub fn converge(
    spec: &ConvergeSpec,
) -> Result<(ConvergenceReport, SweepSetup, HjSolution, Vec<EpsilonRun>)> {
    spec.validate()?;
    let setup = SweepSetup::new(spec.n_x, spec.n_z, spec.alpha0, spec.l0)?;
    let dt = spec
        .hj_dt
        .unwrap_or_else(|| setup.default_hj_dt(spec.k0, spec.zbar0));
    let limit = setup.limit_solution(
        spec.hj_scheme,
        spec.k0,
        spec.zbar0,
        spec.t_end,
        dt,
        Some(spec.compare_interval),
    )?;
    let runs = spec
        .epsilons
        .par_iter()
        .map(|&eps| run_epsilon(&setup, spec, &limit, eps))
        .collect::<Result<Vec<_>>>()?;
    let report = assemble(spec, &setup, &limit, &runs);
    Ok((report, setup, limit, runs))
}

/// Oriented monotonicity of a trajectory towards the minimum of `alpha`.
pub fn approach_report(setup: &SweepSetup, zbar: &[f64]) -> MonotonicityReport {
    monotonicity_check(
        zbar,
        &Source::SelfConsistent(Arc::clone(&setup.table)),
        &setup.traits,
        setup.traits.spacing(),
    )
}
