//! Dynamic-programming oracle: the discrete Lax-Oleinik semigroup
//!
//! ```text
//! V(z, t + dt) = min_y [ (z - y)^2 / (4 dt) + dt R(y, t) + V(y, t) ]
//! ```
//!
//! for `d_t V + |d_z V|^2 = R`, minimised over feet `y` in the reach window
//! with `V` and `R` interpolated linearly between nodes and extended evenly
//! across the trait boundaries.

use rayon::prelude::*;
use serde::Serialize;

use super::constrained::{validate_initial, HjRecord};
use super::source::Source;
use crate::error::{Error, Result};
use crate::grid::{argmin_index, refine_min, TraitField, UniformGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct LaxOleinikOptions {
    pub t_start: f64,
    pub t_end: f64,
    pub dt: f64,
    /// Largest admissible path speed; `None` uses `3 max |V0'| + 1`.
    pub reach: Option<f64>,
    /// Subtract the minimum after every step (the constrained problem).
    pub normalize: bool,
}

impl Default for LaxOleinikOptions {
    fn default() -> Self {
        Self {
            t_start: 0.0,
            t_end: 1.0,
            dt: 0.02,
            reach: None,
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LaxOleinikSolution {
    pub records: Vec<HjRecord>,
    pub field: TraitField,
    pub reach: f64,
}

/// Node index of extended index `l` under even reflection about both ends.
#[inline]
fn reflect(l: i64, n: i64) -> usize {
    let p = l.rem_euclid(2 * n);
    (if p >= n { 2 * n - 1 - p } else { p }) as usize
}

/// One semigroup step for every node. `f = V + dt R` on nodes.
fn dp_step(f: &[f64], lower: f64, h: f64, dt: f64, width: f64, out: &mut [f64]) {
    let n = f.len() as i64;
    out.par_iter_mut().enumerate().for_each(|(j, o)| {
        let z = lower + (j as f64 + 0.5) * h;
        let (w_lo, w_hi) = (z - width, z + width);
        let l_lo = ((w_lo - lower) / h - 0.5).floor() as i64;
        let l_hi = ((w_hi - lower) / h - 0.5).ceil() as i64;
        let cost = |y: f64, fy: f64| (z - y) * (z - y) / (4.0 * dt) + fy;
        let mut best = f64::INFINITY;
        for l in l_lo..l_hi {
            let y0 = lower + (l as f64 + 0.5) * h;
            let f0 = f[reflect(l, n)];
            let f1 = f[reflect(l + 1, n)];
            let slope = (f1 - f0) / h;
            let lo = y0.max(w_lo);
            let hi = (y0 + h).min(w_hi);
            if lo > hi {
                continue;
            }
            let y = (z - 2.0 * dt * slope).clamp(lo, hi);
            best = best.min(cost(y, f0 + slope * (y - y0)));
        }
        *o = best;
    });
}

/// Evolves `V0` by the discrete semigroup. Forcings coupled to the minimizer
/// use `zbar_path(t)` when given, else the current discrete minimizer.
pub fn lax_oleinik(
    source: &Source,
    v0: &TraitField,
    opts: &LaxOleinikOptions,
    zbar_path: Option<&dyn Fn(f64) -> f64>,
) -> Result<LaxOleinikSolution> {
    validate_initial(v0)?;
    let grid = *v0.grid();
    let h = grid.spacing();
    let n = grid.len();
    if !(opts.dt > 0.0 && opts.t_end > opts.t_start) {
        return Err(Error::invalid(
            "lax_oleinik needs dt > 0 and t_end > t_start",
        ));
    }
    let reach = opts.reach.unwrap_or_else(|| {
        let slope = v0
            .values()
            .windows(2)
            .fold(0.0f64, |a, w| a.max((w[1] - w[0]).abs()))
            / h;
        3.0 * slope + 1.0
    });
    let steps = ((opts.t_end - opts.t_start) / opts.dt).round().max(1.0) as usize;
    let dt = (opts.t_end - opts.t_start) / steps as f64;
    let width = reach * dt;
    if width < 0.5 * h {
        return Err(Error::invalid(format!(
            "reach window {width:e} is narrower than half a cell ({:e}); raise reach or dt",
            0.5 * h
        )));
    }

    let locate = |v: &[f64], t: f64| -> Result<HjRecord> {
        let vx = refine_min(&grid, v).map_err(|_| Error::TrajectoryHitBoundary {
            t,
            index: argmin_index(v),
        })?;
        Ok(HjRecord {
            t,
            zbar: vx.location,
            sigma: vx.curvature,
            multiplier: 0.0,
        })
    };
    let mut v = v0.values().to_vec();
    let mut records = vec![locate(&v, opts.t_start)?];
    let mut r = vec![0.0; n];
    let mut f = vec![0.0; n];
    let mut next = vec![0.0; n];
    for k in 0..steps {
        let t = opts.t_start + k as f64 * dt;
        let zbar = match zbar_path {
            Some(path) => path(t),
            None => records.last().expect("records start nonempty").zbar,
        };
        source.row(&grid, zbar, t, &mut r);
        for ((fi, vi), ri) in f.iter_mut().zip(&v).zip(&r) {
            *fi = vi + dt * ri;
        }
        dp_step(&f, grid.lower(), h, dt, width, &mut next);
        let mut sub = 0.0;
        if opts.normalize {
            sub = next.iter().cloned().fold(f64::INFINITY, f64::min);
            next.iter_mut().for_each(|x| *x -= sub);
        }
        std::mem::swap(&mut v, &mut next);
        let t1 = t + dt;
        let mut rec = if opts.normalize {
            locate(&v, t1)?
        } else {
            locate(&v, t1).unwrap_or(HjRecord {
                t: t1,
                zbar: grid.node(argmin_index(&v)),
                sigma: f64::NAN,
                multiplier: 0.0,
            })
        };
        rec.multiplier = sub / dt;
        records.push(rec);
    }
    Ok(LaxOleinikSolution {
        records,
        field: TraitField::new(grid, v)?,
        reach,
    })
}
