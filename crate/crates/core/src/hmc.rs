//! Hamiltonian Monte Carlo: momentum refreshment, one integration leg,
//! Metropolis accept/reject, repeated.
//!
//! Randomness is a pure function of the master seed. Iteration `m` draws
//! its momentum and its uniform from ChaCha8 stream `m` of that seed, and
//! the initial exact draw uses stream `u64::MAX`, so a chain is
//! bit-reproducible no matter how chains are spread over threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::splitting::{FlowRunner, LegIntegrator, PhaseState};
use crate::targets::{self, Target};

/// How a chain evaluates its legs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LegMode {
    /// Integrate every leg step by step.
    #[default]
    Direct,
    /// For targets with [`Target::diagonal_quadratic`], integrate two probe
    /// legs from `(1, 0)` and `(0, 1)` once, then apply the resulting
    /// per-coordinate 2x2 maps to every proposal. Gradient counts are those
    /// of the probe leg. Other targets fall back to `Direct`.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HmcConfig {
    pub h: f64,
    /// Target leg length `N h`.
    pub leg_time: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub leg_mode: LegMode,
}

impl HmcConfig {
    pub fn new(h: f64, leg_time: f64, n_samples: usize, seed: u64) -> Self {
        HmcConfig {
            h,
            leg_time,
            n_samples,
            seed,
            leg_mode: LegMode::Direct,
        }
    }

    pub fn with_leg_mode(self, leg_mode: LegMode) -> Self {
        HmcConfig { leg_mode, ..self }
    }

    /// `N = max(1, round(leg_time / h))`.
    pub fn n_steps(&self) -> usize {
        ((self.leg_time / self.h).round() as usize).max(1)
    }

    fn validate(&self) -> Result<()> {
        if !(self.h.is_finite() && self.h > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "h must be positive, got {}",
                self.h
            )));
        }
        if !(self.leg_time.is_finite() && self.leg_time > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "leg_time must be positive, got {}",
                self.leg_time
            )));
        }
        Ok(())
    }
}

/// Outcome of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainStats {
    pub n_steps: usize,
    pub accepted: u64,
    pub proposed: u64,
    /// Gradient evaluations over all legs, processors included.
    pub grad_evals: u64,
    pub hessian_vec_evals: u64,
    /// `ΔH = H(proposal) - H(current)` per leg; `+∞` for legs that blew up.
    pub energy_errors: Vec<f64>,
    pub seed: u64,
}

impl ChainStats {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    pub fn grad_per_leg(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.grad_evals as f64 / self.proposed as f64
        }
    }

    /// Acceptance percentage divided by gradient evaluations per leg.
    pub fn accept_per_grad(&self) -> f64 {
        100.0 * self.acceptance_rate() / self.grad_per_leg()
    }

    /// Mean and standard error of the finite energy errors.
    pub fn energy_error_mean(&self) -> (f64, f64) {
        mean_and_se(self.energy_errors.iter().copied().filter(|x| x.is_finite()))
    }
}

pub(crate) fn mean_and_se(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut s, mut s2) = (0.0, 0.0, 0.0);
    for x in xs {
        n += 1.0;
        s += x;
        s2 += x * x;
    }
    let mean = s / n;
    let var = (s2 / n - mean * mean).max(0.0) * n / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Positions `q^(1) … q^(n)` of a chain, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    dim: usize,
    data: Vec<f64>,
}

impl Samples {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Initial position drawn exactly from the target.
pub fn initial_position(target: &dyn Target, seed: u64) -> Result<Vec<f64>> {
    target
        .exact_sample(&mut stream_rng(seed, u64::MAX))
        .ok_or_else(|| Error::InvalidArgument("target has no exact sampler; pass a start".into()))
}

/// `H(q, p) = p^T M^{-1} p / 2 + V(q)`.
pub fn energy(target: &dyn Target, s: &PhaseState) -> f64 {
    targets::energy(target, s)
}

/// Runs a chain started from an exact draw and keeps every position.
pub fn hmc_run(
    target: &dyn Target,
    integrator: &dyn LegIntegrator,
    cfg: &HmcConfig,
) -> Result<(Samples, ChainStats)> {
    let q0 = initial_position(target, cfg.seed)?;
    let dim = target.dim();
    let mut data = Vec::with_capacity(dim * cfg.n_samples);
    let stats = hmc_run_from(target, integrator, cfg, q0, |q| data.extend_from_slice(q))?;
    Ok((Samples { dim, data }, stats))
}

/// Runs a chain from `q0`, handing each new position to `observe`.
pub fn hmc_run_from(
    target: &dyn Target,
    integrator: &dyn LegIntegrator,
    cfg: &HmcConfig,
    q0: Vec<f64>,
    mut observe: impl FnMut(&[f64]),
) -> Result<ChainStats> {
    cfg.validate()?;
    let dim = target.dim();
    if q0.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: q0.len(),
        });
    }
    let n_steps = cfg.n_steps().max(integrator.min_steps());
    let linear = match cfg.leg_mode {
        LegMode::Linear if target.diagonal_quadratic() => {
            Some(LinearLeg::probe(target, integrator, cfg.h, n_steps)?)
        }
        _ => None,
    };
    let mut runner = FlowRunner::new(target);
    let mut current = q0;
    let mut state = PhaseState {
        q: current.clone(),
        p: vec![0.0; dim],
    };
    let mut energy_errors = Vec::with_capacity(cfg.n_samples);
    let mut accepted = 0u64;

    for m in 0..cfg.n_samples {
        let mut rng = stream_rng(cfg.seed, m as u64);
        state.q.copy_from_slice(&current);
        target.sample_momentum(&mut rng, &mut state.p);
        let h0 = runner.target().energy(&state);

        let leg = match &linear {
            Some(map) => map.apply(&mut state),
            None => integrator.integrate(&mut state, cfg.h, n_steps, &mut runner),
        };
        let delta = match leg {
            Ok(()) => {
                let d = runner.target().energy(&state) - h0;
                if d.is_nan() {
                    f64::INFINITY
                } else {
                    d
                }
            }
            Err(Error::NonFiniteState) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        energy_errors.push(delta);

        let u: f64 = rng.random();
        if u.ln() < -delta {
            accepted += 1;
            current.copy_from_slice(&state.q);
        }
        observe(&current);
    }

    let counts = runner.counts();
    let (grad_evals, hessian_vec_evals) = match &linear {
        Some(map) => {
            let n = cfg.n_samples as u64;
            (map.gradients * n, map.hessian_vecs * n)
        }
        None => (counts.gradients, counts.hessian_vecs),
    };
    Ok(ChainStats {
        n_steps,
        accepted,
        proposed: cfg.n_samples as u64,
        grad_evals,
        hessian_vec_evals,
        energy_errors,
        seed: cfg.seed,
    })
}

/// Per-coordinate leg maps `(q, p) -> (m11 q + m12 p, m21 q + m22 p)`.
struct LinearLeg {
    /// `None` when a probe leg left the finite range.
    maps: Option<[Vec<f64>; 4]>,
    gradients: u64,
    hessian_vecs: u64,
}

impl LinearLeg {
    fn probe(
        target: &dyn Target,
        integrator: &dyn LegIntegrator,
        h: f64,
        n: usize,
    ) -> Result<Self> {
        let dim = target.dim();
        let mut runner = FlowRunner::new(target);
        let mut from_q = PhaseState {
            q: vec![1.0; dim],
            p: vec![0.0; dim],
        };
        let first = integrator.integrate(&mut from_q, h, n, &mut runner);
        let per_leg = runner.counts();
        let mut from_p = PhaseState {
            q: vec![0.0; dim],
            p: vec![1.0; dim],
        };
        let second = integrator.integrate(&mut from_p, h, n, &mut runner);
        let maps = match (first, second) {
            (Ok(()), Ok(())) => Some([from_q.q, from_p.q, from_q.p, from_p.p]),
            (Err(Error::NonFiniteState), _) | (_, Err(Error::NonFiniteState)) => None,
            (Err(e), _) | (_, Err(e)) => return Err(e),
        };
        Ok(LinearLeg {
            maps,
            gradients: per_leg.gradients,
            hessian_vecs: per_leg.hessian_vecs,
        })
    }

    fn apply(&self, s: &mut PhaseState) -> Result<()> {
        let [m11, m12, m21, m22] = self.maps.as_ref().ok_or(Error::NonFiniteState)?;
        for j in 0..s.q.len() {
            let (q, p) = (s.q[j], s.p[j]);
            s.q[j] = m11[j] * q + m12[j] * p;
            s.p[j] = m21[j] * q + m22[j] * p;
        }
        if s.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFiniteState)
        }
    }
}

/// One point of an efficiency curve.
#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyPoint {
    pub h: f64,
    pub n_steps: usize,
    pub grad_per_leg: f64,
    pub accepted: u64,
    pub proposed: u64,
    pub acceptance_pct: f64,
    pub accept_per_grad: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyCurve {
    pub points: Vec<EfficiencyPoint>,
    /// Index of the largest `accept_per_grad`.
    pub best: Option<usize>,
}

/// One chain per step size; chain `i` uses seed `cfg.seed ^ i`. Chains run
/// on the current rayon pool and results come back in input order.
pub fn efficiency_curve(
    target: &dyn Target,
    integrator: &dyn LegIntegrator,
    h_list: &[f64],
    cfg: &HmcConfig,
) -> Result<EfficiencyCurve> {
    let points = h_list
        .par_iter()
        .enumerate()
        .map(|(i, &h)| {
            let seed = cfg.seed ^ i as u64;
            let run_cfg = HmcConfig { h, seed, ..*cfg };
            let q0 = initial_position(target, seed)?;
            let stats = hmc_run_from(target, integrator, &run_cfg, q0, |_| {})?;
            let rate = stats.acceptance_rate();
            Ok(EfficiencyPoint {
                h,
                n_steps: stats.n_steps,
                grad_per_leg: stats.grad_per_leg(),
                accepted: stats.accepted,
                proposed: stats.proposed,
                acceptance_pct: 100.0 * rate,
                accept_per_grad: stats.accept_per_grad(),
                seed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = points
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, p)| match best {
            Some((_, v)) if v >= p.accept_per_grad => best,
            _ => Some((i, p.accept_per_grad)),
        })
        .map(|(i, _)| i);
    Ok(EfficiencyCurve { points, best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splitting::{momentum_flip, ProcessedIntegrator};
    use crate::targets::{gaussian_model, oscillator_1d, ExactGaussianFlow};

    #[test]
    fn leg_count_rounding() {
        assert_eq!(HmcConfig::new(0.3, 5.0, 1, 0).n_steps(), 17);
        assert_eq!(HmcConfig::new(10.0, 5.0, 1, 0).n_steps(), 1);
        assert_eq!(HmcConfig::new(3.0 / 256.0, 5.0, 1, 0).n_steps(), 427);
    }

    #[test]
    fn energy_values() {
        let osc = oscillator_1d();
        let s = PhaseState::new(vec![1.0], vec![1.0]).unwrap();
        assert_eq!(energy(&osc, &s), 1.0);
        assert_eq!(energy(&osc, &momentum_flip(&s)), 1.0);
        let g = gaussian_model(5).unwrap();
        assert_eq!(
            energy(&g, &PhaseState::new(vec![0.0; 5], vec![0.0; 5]).unwrap()),
            0.0
        );
    }

    #[test]
    fn exact_flow_accepts_everything() {
        let g = gaussian_model(32).unwrap();
        let exact = ExactGaussianFlow::new(&g);
        let (samples, stats) = hmc_run(&g, &exact, &HmcConfig::new(0.05, 5.0, 200, 3)).unwrap();
        assert_eq!(stats.acceptance_rate(), 1.0);
        assert_eq!(samples.len(), 200);
        assert!(stats.energy_errors.iter().all(|d| d.abs() < 1e-10));
    }

    #[test]
    fn chains_are_reproducible() {
        let g = gaussian_model(8).unwrap();
        let lf = ProcessedIntegrator::leapfrog();
        let cfg = HmcConfig::new(0.2, 1.0, 50, 99);
        let a = hmc_run(&g, &lf, &cfg).unwrap();
        let b = hmc_run(&g, &lf, &cfg).unwrap();
        assert_eq!(a, b);
        let c = hmc_run(&g, &lf, &HmcConfig { seed: 100, ..cfg }).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn unstable_step_collapses_acceptance() {
        let d = 64;
        let g = gaussian_model(d).unwrap();
        let lf = ProcessedIntegrator::leapfrog();
        let h = 1.05 * 2.0 / d as f64;
        let (_, stats) = hmc_run(&g, &lf, &HmcConfig::new(h, 5.0, 200, 5)).unwrap();
        assert!(
            stats.acceptance_rate() < 0.05,
            "{}",
            stats.acceptance_rate()
        );
    }

    #[test]
    fn rejected_moves_keep_position() {
        let g = gaussian_model(16).unwrap();
        let lf = ProcessedIntegrator::leapfrog();
        let (samples, stats) = hmc_run(&g, &lf, &HmcConfig::new(0.12, 1.0, 100, 8)).unwrap();
        let mut prev = initial_position(&g, 8).unwrap();
        let mut moves = 0;
        for row in samples.rows() {
            if row != prev.as_slice() {
                moves += 1;
            }
            prev = row.to_vec();
        }
        assert_eq!(moves, stats.accepted);
    }

    #[test]
    fn gradient_accounting() {
        let g = gaussian_model(4).unwrap();
        let proc = ProcessedIntegrator::family(0.348674, -0.075640, 0.069720).unwrap();
        let (_, stats) = hmc_run(&g, &proc, &HmcConfig::new(0.5, 5.0, 10, 1)).unwrap();
        assert_eq!(stats.n_steps, 10);
        assert_eq!(stats.grad_per_leg(), 35.0);
        let pct = 100.0 * stats.acceptance_rate();
        assert!((stats.accept_per_grad() - pct / 35.0).abs() < 1e-15);
    }

    #[test]
    fn linear_legs_match_direct_legs() {
        let g = gaussian_model(64).unwrap();
        for integ in [
            ProcessedIntegrator::leapfrog(),
            ProcessedIntegrator::family(0.348674, -0.075640, 0.069720).unwrap(),
        ] {
            for h in [0.01, 0.03, 0.07] {
                let cfg = HmcConfig::new(h, 1.0, 60, 17);
                let (sd, direct) = hmc_run(&g, &integ, &cfg).unwrap();
                let (sl, linear) =
                    hmc_run(&g, &integ, &cfg.with_leg_mode(LegMode::Linear)).unwrap();
                assert_eq!(direct.accepted, linear.accepted);
                assert_eq!(direct.grad_evals, linear.grad_evals);
                for (a, b) in direct.energy_errors.iter().zip(&linear.energy_errors) {
                    assert!(a == b || (a - b).abs() <= 1e-9 * (1.0 + a.abs()), "{a} {b}");
                }
                for (a, b) in sd.rows().zip(sl.rows()) {
                    for (x, y) in a.iter().zip(b) {
                        assert!((x - y).abs() <= 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn linear_mode_ignored_for_nonlinear_targets() {
        let t = crate::targets::anharmonic_model(3).unwrap();
        let lf = ProcessedIntegrator::leapfrog();
        let cfg = HmcConfig::new(0.1, 1.0, 20, 2);
        let q0 = vec![0.1, -0.2, 0.3];
        let a = hmc_run_from(&t, &lf, &cfg, q0.clone(), |_| {}).unwrap();
        let b = hmc_run_from(&t, &lf, &cfg.with_leg_mode(LegMode::Linear), q0, |_| {}).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_config_rejected() {
        let g = gaussian_model(2).unwrap();
        let lf = ProcessedIntegrator::leapfrog();
        assert!(hmc_run(&g, &lf, &HmcConfig::new(0.0, 5.0, 10, 1)).is_err());
        assert!(hmc_run(&g, &lf, &HmcConfig::new(0.1, -1.0, 10, 1)).is_err());
        assert!(
            hmc_run_from(&g, &lf, &HmcConfig::new(0.1, 1.0, 10, 1), vec![0.0], |_| {}).is_err()
        );
    }

    #[test]
    fn curve_picks_best_and_keeps_order() {
        let g = gaussian_model(16).unwrap();
        let lf = ProcessedIntegrator::leapfrog();
        let hs = [0.02, 0.06, 0.1, 0.13];
        let curve = efficiency_curve(&g, &lf, &hs, &HmcConfig::new(0.0, 1.0, 100, 42)).unwrap();
        assert_eq!(curve.points.len(), 4);
        for (i, p) in curve.points.iter().enumerate() {
            assert_eq!(p.h, hs[i]);
            assert_eq!(p.seed, 42 ^ i as u64);
        }
        let best = curve.best.unwrap();
        assert!(curve
            .points
            .iter()
            .all(|p| p.accept_per_grad <= curve.points[best].accept_per_grad));
        let empty = efficiency_curve(&g, &lf, &[], &HmcConfig::new(0.1, 1.0, 10, 0)).unwrap();
        assert!(empty.points.is_empty() && empty.best.is_none());
    }
}
