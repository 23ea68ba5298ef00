//! Chooses `(b, c, d)` of the processed family by minimizing `‖ρ‖_hbar`.
//!
//! The objective is exactly [`rho_norm`]; minimization is a deterministic
//! Nelder–Mead simplex, restarted from its best vertex until a restart no
//! longer improves the objective.

use crate::error::{Error, Result};
use crate::harmonic::{rho_norm, rho_profile};
use crate::splitting::ProcessedIntegrator;

/// `‖ρ‖_hbar` of the family member `(b, c, d)`.
pub fn evaluate(b: f64, c: f64, d: f64, hbar: f64) -> Result<f64> {
    let integ = ProcessedIntegrator::family(b, c, d)?;
    Ok(rho_norm(&integ, hbar))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    pub params: [f64; 3],
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub rho_norm: f64,
    pub hbar: f64,
    /// `ρ` at `hbar` and the largest interior local maximum of `ρ_h`.
    pub endpoint: f64,
    pub interior_max: f64,
    pub evaluations: usize,
    /// Best vertex after every simplex iteration.
    pub trace: Vec<TraceEntry>,
}

impl TuneResult {
    pub fn params(&self) -> [f64; 3] {
        [self.b, self.c, self.d]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuneOptions {
    /// Initial simplex edge per coordinate.
    pub initial_step: f64,
    /// Stop when the objective spread across the simplex falls below this.
    pub f_tol: f64,
    /// Stop when the simplex diameter falls below this.
    pub x_tol: f64,
    pub max_evaluations: usize,
    pub max_restarts: usize,
}

impl Default for TuneOptions {
    fn default() -> Self {
        TuneOptions {
            initial_step: 1e-2,
            f_tol: 1e-12,
            x_tol: 1e-10,
            max_evaluations: 6_000,
            max_restarts: 8,
        }
    }
}

pub fn tune(hbar: f64, init: [f64; 3]) -> Result<TuneResult> {
    tune_with(hbar, init, &TuneOptions::default())
}

pub fn tune_with(hbar: f64, init: [f64; 3], opts: &TuneOptions) -> Result<TuneResult> {
    if !(hbar.is_finite() && hbar > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "hbar must be positive, got {hbar}"
        )));
    }
    let objective = |x: &[f64; 3]| evaluate(x[0], x[1], x[2], hbar).unwrap_or(f64::INFINITY);
    let f0 = evaluate(init[0], init[1], init[2], hbar)?;
    if !f0.is_finite() {
        return Err(Error::NoDescent);
    }

    let mut evaluations = 1;
    let mut trace = vec![TraceEntry {
        iteration: 0,
        params: init,
        objective: f0,
    }];
    let (mut best_x, mut best_f) = (init, f0);
    let budget = opts.max_evaluations;
    for _ in 0..=opts.max_restarts {
        if evaluations >= budget {
            break;
        }
        let (x, f, used) = nelder_mead(
            &objective,
            best_x,
            best_f,
            opts,
            budget - evaluations,
            &mut trace,
        );
        evaluations += used;
        let improved = best_f - f > opts.f_tol;
        if f < best_f {
            best_x = x;
            best_f = f;
        }
        if !improved {
            break;
        }
    }

    let integ = ProcessedIntegrator::family(best_x[0], best_x[1], best_x[2])?;
    let profile = rho_profile(&integ, hbar);
    Ok(TuneResult {
        b: best_x[0],
        c: best_x[1],
        d: best_x[2],
        rho_norm: best_f,
        hbar,
        endpoint: profile.endpoint,
        interior_max: profile.interior_max,
        evaluations,
        trace,
    })
}

/// Tunes for each budget in turn, seeding from the previous optimum.
pub fn continuation_sweep(hbars: &[f64], init: [f64; 3]) -> Result<Vec<TuneResult>> {
    if hbars.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "budgets must be strictly increasing".into(),
        ));
    }
    let mut seed = init;
    let mut out = Vec::with_capacity(hbars.len());
    for &hbar in hbars {
        let r = tune(hbar, seed)?;
        seed = r.params();
        out.push(r);
    }
    Ok(out)
}

fn nelder_mead(
    f: &impl Fn(&[f64; 3]) -> f64,
    x0: [f64; 3],
    f0: f64,
    opts: &TuneOptions,
    budget: usize,
    trace: &mut Vec<TraceEntry>,
) -> ([f64; 3], f64, usize) {
    const ALPHA: f64 = 1.0;
    const GAMMA: f64 = 2.0;
    const RHO: f64 = 0.5;
    const SIGMA: f64 = 0.5;

    let mut evals = 0;
    let mut simplex: Vec<([f64; 3], f64)> = vec![(x0, f0)];
    for i in 0..3 {
        let mut x = x0;
        x[i] += opts.initial_step;
        evals += 1;
        simplex.push((x, f(&x)));
    }

    let mut iteration = trace.last().map_or(0, |t| t.iteration);
    while evals < budget {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        iteration += 1;
        trace.push(TraceEntry {
            iteration,
            params: simplex[0].0,
            objective: simplex[0].1,
        });
        let spread = simplex[3].1 - simplex[0].1;
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| dist(x, &simplex[0].0))
            .fold(0.0, f64::max);
        if spread < opts.f_tol || diameter < opts.x_tol {
            break;
        }

        let mut centroid = [0.0; 3];
        for (x, _) in &simplex[..3] {
            for k in 0..3 {
                centroid[k] += x[k] / 3.0;
            }
        }
        let worst = simplex[3];
        let along = |t: f64| -> [f64; 3] {
            std::array::from_fn(|k| centroid[k] + t * (worst.0[k] - centroid[k]))
        };

        let xr = along(-ALPHA);
        let fr = f(&xr);
        evals += 1;
        if fr < simplex[0].1 {
            let xe = along(-GAMMA);
            let fe = f(&xe);
            evals += 1;
            simplex[3] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[2].1 {
            simplex[3] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < worst.1 {
            let x = along(-RHO);
            (x, f(&x))
        } else {
            let x = along(RHO);
            (x, f(&x))
        };
        evals += 1;
        if fc < worst.1.min(fr) {
            simplex[3] = (xc, fc);
            continue;
        }
        let best = simplex[0].0;
        for v in simplex.iter_mut().skip(1) {
            let x: [f64; 3] = std::array::from_fn(|k| best[k] + SIGMA * (v.0[k] - best[k]));
            *v = (x, f(&x));
            evals += 1;
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    (simplex[0].0, simplex[0].1, evals)
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}
