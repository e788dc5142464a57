//! One function per CLI command. Each writes its artifacts and returns a
//! JSON summary plus any failed checks.

use std::sync::Arc;

use serde_json::{json, Value};

use dispersal_core::ecology::{
    check_h1_with, principal_eigenpair, solve_theta, theta_residual, InvasionModel,
};
use dispersal_core::floquet::{
    compute_bundle, finite_diff_z, BundleOptions, EffectiveHamiltonian, StaticPotential,
};
use dispersal_core::grid::{PhaseField, TraitField, UniformGrid};
use dispersal_core::hj::{
    canonical_ode, lax_oleinik, monotonicity_check, solve_constrained_hj, HjOptions, HjSolution,
    LambdaTable, LaxOleinikOptions, Source, SyntheticSource,
};
use dispersal_core::kinetic::{run, RunOutput, SimConfig};

use crate::config::*;
use crate::converge::{approach_report, converge, ConvergenceReport};
use crate::error::{HarnessError, Result};
use crate::output::{format_float, line_plot, surface_plot, Artifacts};

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub summary: Value,
    /// Checks that did not pass; a non-empty list maps to exit code 4.
    pub failures: Vec<String>,
}

impl Outcome {
    fn ok(summary: Value) -> Self {
        Self {
            summary,
            failures: Vec::new(),
        }
    }
}

pub fn run_command(spec: &ExperimentSpec) -> Result<Outcome> {
    let art = Artifacts::new(&spec.out_dir, spec.command.name(), spec.echo())?;
    dispatch(spec, spec.command, art)
}

fn dispatch(spec: &ExperimentSpec, command: Command, mut art: Artifacts) -> Result<Outcome> {
    match command {
        Command::Theta => theta(spec, &mut art),
        Command::LambdaSurface => lambda_surface(spec, &mut art),
        Command::AlphaBuild => alpha_build(spec, &mut art),
        Command::CheckH1 => check_h1(spec, &mut art),
        Command::FloquetTest => floquet_test(spec, &mut art),
        Command::Hj => hj(spec, &mut art),
        Command::LaxOleinik => lax(spec, &mut art),
        Command::Pde => pde(spec, &mut art),
        Command::Converge => converge_cmd(spec, &mut art),
        Command::Pipeline => pipeline(spec, &art),
    }
}

fn model(
    spec: &ExperimentSpec,
) -> Result<(InvasionModel, Option<dispersal_core::ecology::AlphaBuild>)> {
    let (profile, build) = spec.common.profile()?;
    Ok((InvasionModel::new(profile, spec.common.resource()?), build))
}

fn initial_value(
    traits: dispersal_core::grid::TraitGrid,
    k0: f64,
    zbar0: f64,
) -> Result<TraitField> {
    if !(k0 > 0.0) {
        return Err(HarnessError::config("k0 must be positive"));
    }
    let v = TraitField::from_fn(traits, |z| k0 * (z - zbar0).powi(2));
    let vmin = v.min();
    Ok(v.map(|x| x - vmin))
}

fn theta(spec: &ExperimentSpec, art: &mut Artifacts) -> Result<Outcome> {
    let p: ThetaParams = spec.params(Command::Theta)?;
    let m = spec.common.resource()?;
    let theta = solve_theta(p.alpha, &m)?;
    let residual = theta_residual(p.alpha, &m, &theta);
    let g = *m.grid();
    let rows = (0..g.len()).map(|i| [g.node(i), m.values()[i], theta.values()[i]]);
    art.csv(
        "theta",
        &["x", "m", "theta"],
        rows,
        json!({ "alpha": p.alpha, "residual": residual }),
    )?;
    art.script(
        "theta",
        &line_plot(
            "theta.csv",
            "resident equilibrium",
            (1, "x"),
            &[(2, "m"), (3, "theta")],
            false,
        ),
    )?;
    Ok(Outcome::ok(
        json!({ "alpha": p.alpha, "residual": residual, "mass": theta.integrate() }),
    ))
}

fn lambda_surface(spec: &ExperimentSpec, art: &mut Artifacts) -> Result<Outcome> {
    let p: SurfaceParams = spec.params(Command::LambdaSurface)?;
    if p.n_z1 < 2 || p.n_z2 < 2 {
        return Err(HarnessError::config("n_z1 and n_z2 must be at least 2"));
    }
    let (model, _) = model(spec)?;
    let s = model.lambda_surface(p.n_z1, p.n_z2)?;
    let rows = (0..p.n_z2).flat_map(|j| {
        let s = &s;
        (0..p.n_z1).map(move |i| {
            let d = s.get(i, j);
            [s.z1[i], s.z2[j], d.value, d.d1, d.d2]
        })
    });
    art.csv(
        "lambda_surface",
        &["z1", "z2", "lambda", "dlambda_dz1", "d2lambda_dz1"],
        rows,
        json!({ "deriv_step": model.deriv_step(), "cached_thetas": model.cached_thetas() }),
    )?;
    art.script(
        "lambda_surface",
        &surface_plot(
            "lambda_surface.csv",
            "invasion exponent",
            "mutant z1",
            "resident z2",
            3,
        ),
    )?;
    let max_diag = (0..p.n_z1.min(p.n_z2))
        .filter(|&k| s.z1[k] == s.z2[k])
        .map(|k| s.get(k, k).value.abs())
        .fold(0.0f64, f64::max);
    Ok(Outcome::ok(
        json!({ "points": s.values.len(), "max_diagonal": max_diag }),
    ))
}

fn alpha_build(spec: &ExperimentSpec, art: &mut Artifacts) -> Result<Outcome> {
    let p: AlphaParams = spec.params(Command::AlphaBuild)?;
    if p.points < 2 {
        return Err(HarnessError::config("points must be at least 2"));
    }
    let (profile, build) = spec.common.profile()?;
    let (a, b) = profile.interval();
    let rows = (0..p.points).map(|k| {
        let z = a + (b - a) * k as f64 / (p.points - 1) as f64;
        [
            z,
            profile.value(z),
            profile.derivative(z),
            profile.second_derivative(z),
        ]
    });
    let meta = match &build {
        Some(bd) => json!({
            "k0": bd.k0,
            "k0_is_sample_max": true,
            "z_m": bd.z_m,
            "k0_argmax": [bd.k0_argmax.0, bd.k0_argmax.1],
            "min_slope": bd.min_slope,
            "probe_points": bd.probe.len(),
        }),
        None => json!({ "shape": profile.shape() }),
    };
    art.csv(
        "alpha",
        &["z", "alpha", "dalpha", "d2alpha"],
        rows,
        meta.clone(),
    )?;
    art.script(
        "alpha",
        &line_plot(
            "alpha.csv",
            "dispersal profile",
            (1, "z"),
            &[(2, "alpha")],
            false,
        ),
    )?;
    let mut failures = Vec::new();
    if let Some(bd) = &build {
        let ends = (profile.value(a), profile.value(b));
        let target = spec.common.alpha0 + spec.common.l0;
        if (ends.0 - target).abs() > 1e-9 || (ends.1 - target).abs() > 1e-9 {
            failures.push(format!(
                "endpoint values {ends:?} differ from alpha0 + l0 = {target}"
            ));
        }
        if bd.min_slope <= 0.0 {
            failures.push("probe slope is not positive".into());
        }
    }
    Ok(Outcome {
        summary: meta,
        failures,
    })
}

fn check_h1(spec: &ExperimentSpec, art: &mut Artifacts) -> Result<Outcome> {
    let p: H1Params = spec.params(Command::CheckH1)?;
    let (model, _) = model(spec)?;
    let report = check_h1_with(&model, p.samples)?;
    let summary = serde_json::to_value(report).expect("report serialises");
    art.sidecar("h1", json!({ "report": summary }))?;
    let failures = if report.pass {
        Vec::new()
    } else {
        vec![format!(
            "convexity and endpoint-sign conditions fail: {summary}"
        )]
    };
    Ok(Outcome { summary, failures })
}

fn floquet_test(spec: &ExperimentSpec, art: &mut Artifacts) -> Result<Outcome> {
    let p: FloquetParams = spec.params(Command::FloquetTest)?;
    let (model, _) = model(spec)?;
    let alpha = model.profile().value(p.mutant);
    let theta = model.theta(p.resident)?;
    let c = spec.common.resource()?.zip_map(&theta, |m, t| m - t);
    let exact = principal_eigenpair(alpha, &c)?;
    let opts = BundleOptions {
        max_dtau: p.max_dtau,
        spin_up: p.spin_up,
        ..Default::default()
    };
    let bundle = compute_bundle(alpha, &StaticPotential(c), 0.0, p.tau_end, &opts)?;
    let gap = bundle
        .h
        .iter()
        .fold(0.0f64, |a, h| a.max((h - exact.lambda).abs()));
    let rows = bundle.taus.iter().zip(&bundle.h).map(|(t, h)| [*t, *h]);
    let summary = json!({
        "lambda": exact.lambda,
        "max_gap": gap,
        "mass_defect": bundle.mass_defect,
        "harnack_ratio": bundle.harnack_ratio,
        "spin_up": bundle.spin_up,
        "dtau": bundle.dtau,
    });
    art.csv("bundle", &["tau", "H"], rows, summary.clone())?;
    art.script(
        "bundle",
        &line_plot(
            "bundle.csv",
            "Floquet normaliser",
            (1, "tau"),
            &[(2, "H")],
            false,
        ),
    )?;
    let mut failures = Vec::new();
    if gap > p.tolerance {
        failures.push(format!(
            "bundle normaliser differs from the eigenvalue by {gap:e}"
        ));
    }
    if bundle.mass_defect > 1e-10 {
        failures.push(format!(
            "normaliser identity defect {:e}",
            bundle.mass_defect
        ));
    }
    Ok(Outcome { summary, failures })
}

fn hj_source(
    spec: &ExperimentSpec,
    forcing: ForcingKind,
    traits: &dispersal_core::grid::TraitGrid,
) -> Result<(Source, Option<Arc<InvasionModel>>)> {
    Ok(match forcing {
        ForcingKind::Zero => (
            Source::Synthetic(SyntheticSource::time_only(|_, _| 0.0)),
            None,
        ),
        ForcingKind::SelfConsistent => {
            let (model, _) = model(spec)?;
            let model = Arc::new(model);
            let table = LambdaTable::build(&model, traits, 1e-8)?;
            (Source::SelfConsistent(Arc::new(table)), Some(model))
        }
    })
}

fn default_dt(v0: &TraitField) -> f64 {
    let h = v0.grid().spacing();
    let slope = v0
        .values()
        .windows(2)
        .fold(0.0f64, |a, w| a.max((w[1] - w[0]).abs()))
        / h;
    0.5 * h / (2.0 * slope + 1e-8)
}

fn write_limit(art: &mut Artifacts, sol: &HjSolution, meta: Value) -> Result<()> {
    let rows = sol
        .records
        .iter()
        .map(|r| [r.t, r.zbar, r.sigma, r.multiplier]);
    art.csv(
        "trajectory",
        &["t", "zbar", "sigma", "multiplier"],
        rows,
        meta,
    )?;
    write_field(art, "field", &sol.snapshots)?;
    art.script(
        "trajectory",
        &line_plot(
            "trajectory.csv",
            "dominant trait",
            (1, "t"),
            &[(2, "zbar")],
            false,
        ),
    )?;
    Ok(())
}

fn write_field(art: &mut Artifacts, name: &str, snapshots: &[(f64, TraitField)]) -> Result<()> {
    let rows = snapshots.iter().flat_map(|(t, v)| {
        let g = *v.grid();
        v.values()
            .iter()
            .enumerate()
            .map(move |(j, x)| [*t, g.node(j), *x])
    });
    art.csv(name, &["t", "z", "V"], rows, Value::Null)?;
    Ok(())
}

fn hj(spec: &ExperimentSpec, art: &mut Artifacts) -> Result<Outcome> {
    let p: HjParams = spec.params(Command::Hj)?;
    let traits = spec.common.traits()?;
    let v0 = initial_value(traits, p.k0, p.zbar0)?;
    let (source, model) = hj_source(spec, p.forcing, &traits)?;
    let opts = HjOptions {
        scheme: p.scheme,
        t_end: p.t_end,
        dt: p.dt.unwrap_or_else(|| default_dt(&v0)),
        output_interval: Some(p.output_interval),
        picard: p.picard,
        ..Default::default()
    };
    let sol = solve_constrained_hj(&source, &v0, &opts)?;
    let mono = monotonicity_check(&sol.zbar(), &source, &traits, traits.spacing());
    let mut summary = json!({
        "final_zbar": sol.records.last().map(|r| r.zbar),
        "k3": sol.k3,
        "dt_requested": sol.dt_requested,
        "dt_min": sol.dt_min,
        "max_drift": sol.max_drift,
        "drift_ratio": sol.drift_ratio,
        "lipschitz": sol.lipschitz,
        "sigma_fallbacks": sol.sigma_fallbacks,
        "monotonicity": mono,
    });
    write_limit(art, &sol, summary.clone())?;
    if let (Some(model), true) = (model, p.canonical_dt > 0.0) {
        let traj = canonical_ode(&model, &sol, sol.records[0].zbar, p.t_end, p.canonical_dt)?;
        let gap = sol
            .records
            .iter()
            .fold(0.0f64, |a, r| a.max((traj.at(r.t) - r.zbar).abs()));
        summary["canonical_gap"] = json!(gap);
        summary["canonical_gap_cells"] = json!(gap / traits.spacing());
        let rows = traj.times.iter().zip(&traj.z).map(|(t, z)| [*t, *z]);
        art.csv("canonical", &["t", "zbar"], rows, json!({ "gap": gap }))?;
    }
    Ok(Outcome::ok(summary))
}

fn lax(spec: &ExperimentSpec, art: &mut Artifacts) -> Result<Outcome> {
    let p: LaxParams = spec.params(Command::LaxOleinik)?;
    let traits = spec.common.traits()?;
    let v0 = initial_value(traits, p.k0, p.zbar0)?;
    let (source, _) = hj_source(spec, p.forcing, &traits)?;
    let opts = LaxOleinikOptions {
        t_end: p.t_end,
        dt: p.dt.unwrap_or(4.0 * traits.spacing()),
        reach: p.reach,
        normalize: p.normalize,
        ..Default::default()
    };
    // A coupled forcing follows the minimizer path of an upwind solve.
    let companion = match source {
        Source::SelfConsistent(_) => {
            let hopts = HjOptions {
                t_end: p.t_end,
                dt: default_dt(&v0),
                ..Default::default()
            };
            Some(solve_constrained_hj(&source, &v0, &hopts)?)
        }
        _ => None,
    };
    let path = companion.as_ref().map(|c| move |t: f64| c.zbar_at(t));
    let sol = lax_oleinik(
        &source,
        &v0,
        &opts,
        path.as_ref().map(|f| f as &dyn Fn(f64) -> f64),
    )?;
    let rows = sol
        .records
        .iter()
        .map(|r| [r.t, r.zbar, r.sigma, r.multiplier]);
    let summary = json!({
        "reach": sol.reach,
        "dt": opts.dt,
        "final_zbar": sol.records.last().map(|r| r.zbar),
    });
    art.csv(
        "trajectory",
        &["t", "zbar", "sigma", "multiplier"],
        rows,
        summary.clone(),
    )?;
    write_field(art, "field", &[(p.t_end, sol.field)])?;
    Ok(Outcome::ok(summary))
}

fn sim_config(spec: &ExperimentSpec, p: &PdeParams) -> Result<SimConfig> {
    let (profile, _) = spec.common.profile()?;
    let mut cfg = SimConfig::new(
        p.epsilon,
        p.t_end,
        spec.common.spatial()?,
        spec.common.traits()?,
        profile,
        spec.common.resource()?,
        p.k0,
        p.zbar0,
    );
    cfg.c_t = p.c_t;
    cfg.rho_every = p.rho_every.max(1);
    cfg.record_every = p.record_every.max(1);
    cfg.floor = p.floor;
    cfg.validate()?;
    Ok(cfg)
}

/// `labels` are the requested snapshot times, used for file names.
fn write_run(art: &mut Artifacts, out: &RunOutput, labels: &[f64], meta: Value) -> Result<()> {
    let rows = out
        .records
        .iter()
        .map(|r| [r.t, r.zbar, r.mass, r.rho_min, r.rho_max]);
    art.csv(
        "run",
        &["t", "zbar_eps", "mass", "rho_min", "rho_max"],
        rows,
        meta,
    )?;
    let h = &out.history;
    let g = h.grid();
    let rows = h.times().iter().zip(h.samples()).flat_map(|(t, rho)| {
        rho.values()
            .iter()
            .enumerate()
            .map(move |(i, r)| [*t, g.node(i), *r])
    });
    art.csv("rho", &["t", "x", "rho"], rows, Value::Null)?;
    let mut labels = labels.to_vec();
    labels.sort_by(f64::total_cmp);
    for (label, (_, u)) in labels.iter().zip(&out.snapshots) {
        write_u(art, &format!("u_snap_{}", format_float(*label)), u)?;
    }
    art.script(
        "run",
        &line_plot(
            "run.csv",
            "dominant trait",
            (1, "t"),
            &[(2, "zbar_eps")],
            false,
        ),
    )?;
    Ok(())
}

fn write_u(art: &mut Artifacts, name: &str, u: &PhaseField) -> Result<()> {
    let (sx, sz) = (*u.spatial(), *u.traits());
    let rows = (0..sz.len())
        .flat_map(|j| (0..sx.len()).map(move |i| [sz.node(j), sx.node(i), u.get(i, j)]));
    art.csv(name, &["z", "x", "u"], rows, Value::Null)?;
    Ok(())
}

fn pde(spec: &ExperimentSpec, art: &mut Artifacts) -> Result<Outcome> {
    let p: PdeParams = spec.params(Command::Pde)?;
    let cfg = sim_config(spec, &p)?;
    let out = match run(&cfg, &p.snapshots, |_| Ok(())) {
        Ok(o) => o,
        Err(dispersal_core::Error::NonFinite { t, index, dump }) => {
            let (sx, sz) = (*dump.spatial(), *dump.traits());
            let rows = (0..sz.len()).flat_map(|j| {
                let d = &dump;
                (0..sx.len()).map(move |i| [sz.node(j), sx.node(i), d.get(i, j)])
            });
            art.csv(
                "dump",
                &["z", "x", "n"],
                rows,
                json!({ "t": t, "index": index }),
            )?;
            return Err(dispersal_core::Error::NonFinite { t, index, dump }.into());
        }
        Err(e) => return Err(e.into()),
    };
    let summary = json!({
        "steps": out.final_state.step,
        "dt": cfg.dt(),
        "envelope": [out.envelope.0, out.envelope.1],
        "bound_constant": out.final_state.bound_constant(),
        "violations": out.violations.iter().map(|v| json!({"t": v.t, "rho_min": v.rho_min, "rho_max": v.rho_max})).collect::<Vec<_>>(),
        "final_zbar": out.records.last().map(|r| r.zbar),
    });
    write_run(art, &out, &p.snapshots, summary.clone())?;
    Ok(Outcome::ok(summary))
}

fn write_hamiltonian(art: &mut Artifacts, table: &EffectiveHamiltonian) -> Result<()> {
    let d = finite_diff_z(table)?;
    let nz = table.n_z();
    let rows = table.times.iter().enumerate().flat_map(|(k, t)| {
        let d = &d;
        (0..nz).map(move |j| [table.traits.node(j), *t, table.get(j, k), d.d2[k * nz + j]])
    });
    art.csv(
        "hamiltonian",
        &["z", "t", "H", "d2H_dz2"],
        rows,
        json!({ "epsilon": table.epsilon, "harnack_ratio": table.harnack_ratio }),
    )?;
    art.script(
        "hamiltonian",
        &surface_plot("hamiltonian.csv", "effective Hamiltonian", "z", "t", 3),
    )?;
    Ok(())
}

pub fn report_failures(report: &ConvergenceReport) -> Vec<String> {
    let v = &report.verdicts;
    let mut f = Vec::new();
    let mut flag = |ok: bool, what: &str| {
        if !ok {
            f.push(format!("{what} is not weakly decreasing"));
        }
    };
    flag(v.zbar_gap, "dominant-trait gap");
    flag(v.rho_gap, "resident-density gap");
    flag(v.u_gap, "rate-function gap");
    flag(v.width, "concentration width");
    flag(v.h_gap.unwrap_or(true), "effective-Hamiltonian gap");
    flag(
        v.h_integral.unwrap_or(true),
        "integrated Hamiltonian along the dominant trait",
    );
    if !v.oscillation_constant {
        f.push("x-oscillation constants vary by more than 2x".into());
    }
    if !v.envelope {
        f.push("density envelope varies by more than 2x across epsilon".into());
    }
    f
}

fn converge_cmd(spec: &ExperimentSpec, art: &mut Artifacts) -> Result<Outcome> {
    let p: ConvergeParams = spec.params(Command::Converge)?;
    let cs = p.spec(&spec.common);
    let (report, setup, limit, runs) = converge(&cs)?;
    write_limit(art, &limit, json!({ "scheme": cs.hj_scheme }))?;
    for (k, r) in runs.iter().enumerate() {
        let mut sub = art.child(&format!("eps_{k}"))?;
        let mono = approach_report(
            &setup,
            &r.output.records.iter().map(|x| x.zbar).collect::<Vec<_>>(),
        );
        write_run(
            &mut sub,
            &r.output,
            &[],
            json!({ "epsilon": r.metrics.epsilon, "metrics": r.metrics, "monotonicity": mono }),
        )?;
        if let Some(h) = &r.hamiltonian {
            write_hamiltonian(&mut sub, h)?;
        }
    }
    let rows = report.metrics.iter().map(|m| {
        [
            m.epsilon,
            m.zbar_gap,
            m.rho_gap,
            m.u_gap,
            m.x_oscillation,
            m.oscillation_constant,
            m.width,
            m.h_gap.unwrap_or(f64::NAN),
            m.h_integral.unwrap_or(f64::NAN),
            m.envelope.0,
            m.envelope.1,
        ]
    });
    let summary = serde_json::to_value(&report).expect("report serialises");
    art.csv(
        "convergence",
        &[
            "epsilon",
            "zbar_gap",
            "rho_gap",
            "u_gap",
            "x_oscillation",
            "oscillation_constant",
            "width",
            "h_gap",
            "h_integral",
            "rho_envelope_min",
            "rho_envelope_max",
        ],
        rows,
        json!({ "verdicts": report.verdicts }),
    )?;
    art.script(
        "convergence",
        &line_plot(
            "convergence.csv",
            "convergence in epsilon",
            (1, "epsilon"),
            &[(2, "zbar_gap"), (3, "rho_gap"), (4, "u_gap"), (7, "width")],
            true,
        ),
    )?;
    art.sidecar("report", json!({ "report": summary }))?;
    Ok(Outcome {
        failures: report_failures(&report),
        summary,
    })
}

fn pipeline(spec: &ExperimentSpec, art: &Artifacts) -> Result<Outcome> {
    let mut summary = serde_json::Map::new();
    let mut failures = Vec::new();
    for stage in [
        Command::AlphaBuild,
        Command::CheckH1,
        Command::Hj,
        Command::Converge,
    ] {
        let out = dispatch(spec, stage, art.child(stage.name())?)?;
        failures.extend(out.failures.into_iter().map(|f| format!("{stage}: {f}")));
        summary.insert(stage.name().to_string(), out.summary);
    }
    Ok(Outcome {
        summary: Value::Object(summary),
        failures,
    })
}
