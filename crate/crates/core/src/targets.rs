//! Target distributions `exp(-V(q))` and the evaluation counter that every
//! integrator goes through.
//!
//! A [`Target`] is immutable and shareable across threads. Each chain wraps
//! it in its own [`CountingTarget`], which is the single place where
//! gradient, Hessian-vector and potential evaluations are tallied.

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::splitting::{FlowRunner, LegIntegrator, PhaseState};

/// Potential, gradient and (optionally) curvature of a separable Hamiltonian
/// `H = p^T M^{-1} p / 2 + V(q)`.
pub trait Target: Send + Sync {
    fn dim(&self) -> usize;

    fn potential(&self, q: &[f64]) -> f64;

    /// Writes `grad V(q)` into `out`.
    fn gradient(&self, q: &[f64], out: &mut [f64]);

    /// Writes `Hess V(q) v` into `out` and returns `true`, or returns `false`
    /// when the model has no analytic Hessian-vector product.
    fn hessian_vec(&self, _q: &[f64], _v: &[f64], _out: &mut [f64]) -> bool {
        false
    }

    /// `true` when `M = I`; lets the drift skip the `M^{-1}` application.
    fn identity_mass(&self) -> bool {
        true
    }

    /// Writes `M^{-1} p` into `out`.
    fn inv_mass_apply(&self, p: &[f64], out: &mut [f64]) {
        out.copy_from_slice(p);
    }

    /// Draws `p ~ N(0, M)` into `out`. Must agree with `inv_mass_apply`.
    fn sample_momentum(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        for x in out.iter_mut() {
            *x = StandardNormal.sample(rng);
        }
    }

    /// Exact draw from the target, when one is available.
    fn exact_sample(&self, _rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        None
    }

    /// `true` when `V` is a quadratic form with diagonal Hessian and no
    /// linear term and `M` is diagonal, so that every integrator acts on
    /// each `(q_j, p_j)` pair as a fixed 2x2 matrix.
    fn diagonal_quadratic(&self) -> bool {
        false
    }
}

/// Evaluation tallies for one chain or one leg.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalCounts {
    pub gradients: u64,
    pub hessian_vecs: u64,
    pub potentials: u64,
}

impl std::ops::Sub for EvalCounts {
    type Output = EvalCounts;

    fn sub(self, rhs: EvalCounts) -> EvalCounts {
        EvalCounts {
            gradients: self.gradients - rhs.gradients,
            hessian_vecs: self.hessian_vecs - rhs.hessian_vecs,
            potentials: self.potentials - rhs.potentials,
        }
    }
}

/// A borrowed target plus the evaluation counter owned by one chain.
pub struct CountingTarget<'a> {
    target: &'a dyn Target,
    counts: EvalCounts,
}

impl<'a> CountingTarget<'a> {
    pub fn new(target: &'a dyn Target) -> Self {
        CountingTarget {
            target,
            counts: EvalCounts::default(),
        }
    }

    pub fn target(&self) -> &'a dyn Target {
        self.target
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    pub fn counts(&self) -> EvalCounts {
        self.counts
    }

    pub fn potential(&mut self, q: &[f64]) -> f64 {
        self.counts.potentials += 1;
        self.target.potential(q)
    }

    pub fn gradient(&mut self, q: &[f64], out: &mut [f64]) {
        self.counts.gradients += 1;
        self.target.gradient(q, out);
    }

    /// Hessian-vector product. Targets without an analytic one fall back to a
    /// central difference of the gradient along `v` with a position
    /// perturbation of `sqrt(eps) * (1 + |q|_inf)`. Either way the call counts
    /// as one Hessian-vector product.
    pub fn hessian_vec(&mut self, q: &[f64], v: &[f64], out: &mut [f64]) {
        self.counts.hessian_vecs += 1;
        if self.target.hessian_vec(q, v, out) {
            return;
        }
        fd_hessian_vec(self.target, q, v, out);
    }

    pub fn identity_mass(&self) -> bool {
        self.target.identity_mass()
    }

    pub fn inv_mass_apply(&self, p: &[f64], out: &mut [f64]) {
        self.target.inv_mass_apply(p, out);
    }

    /// `H(q, p) = p^T M^{-1} p / 2 + V(q)`; counts one potential evaluation.
    pub fn energy(&mut self, s: &PhaseState) -> f64 {
        let kinetic = if self.target.identity_mass() {
            0.5 * s.p.iter().map(|p| p * p).sum::<f64>()
        } else {
            let mut mp = vec![0.0; s.p.len()];
            self.target.inv_mass_apply(&s.p, &mut mp);
            0.5 * s.p.iter().zip(&mp).map(|(a, b)| a * b).sum::<f64>()
        };
        kinetic + self.potential(&s.q)
    }
}

pub(crate) fn fd_hessian_vec(target: &dyn Target, q: &[f64], v: &[f64], out: &mut [f64]) {
    let vmax = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if vmax == 0.0 {
        out.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let qmax = q.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let t = f64::EPSILON.sqrt() * (1.0 + qmax) / vmax;
    let plus: Vec<f64> = q.iter().zip(v).map(|(a, b)| a + t * b).collect();
    let minus: Vec<f64> = q.iter().zip(v).map(|(a, b)| a - t * b).collect();
    let mut gm = vec![0.0; q.len()];
    target.gradient(&plus, out);
    target.gradient(&minus, &mut gm);
    for (o, m) in out.iter_mut().zip(&gm) {
        *o = (*o - m) / (2.0 * t);
    }
}

/// Energy `H(q, p)` of a target with its own mass matrix. Does not count.
pub fn energy(target: &dyn Target, s: &PhaseState) -> f64 {
    let kinetic = if target.identity_mass() {
        0.5 * s.p.iter().map(|p| p * p).sum::<f64>()
    } else {
        let mut mp = vec![0.0; s.p.len()];
        target.inv_mass_apply(&s.p, &mut mp);
        0.5 * s.p.iter().zip(&mp).map(|(a, b)| a * b).sum::<f64>()
    };
    kinetic + target.potential(&s.q)
}

/// Independent Gaussian with precision `j^2` in coordinate `j = 1..d`:
/// `V(q) = sum_j j^2 q_j^2 / 2`.
#[derive(Debug, Clone)]
pub struct GaussianModel {
    precisions: Vec<f64>,
}

impl GaussianModel {
    pub fn new(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument(
                "dimension must be at least 1".into(),
            ));
        }
        Ok(GaussianModel {
            precisions: (1..=d).map(|j| (j * j) as f64).collect(),
        })
    }

    pub fn precisions(&self) -> &[f64] {
        &self.precisions
    }

    /// Largest angular frequency of the model, `d`.
    pub fn max_frequency(&self) -> f64 {
        self.precisions.len() as f64
    }
}

impl Target for GaussianModel {
    fn dim(&self) -> usize {
        self.precisions.len()
    }

    fn potential(&self, q: &[f64]) -> f64 {
        0.5 * q
            .iter()
            .zip(&self.precisions)
            .map(|(x, w)| w * x * x)
            .sum::<f64>()
    }

    fn gradient(&self, q: &[f64], out: &mut [f64]) {
        for ((o, x), w) in out.iter_mut().zip(q).zip(&self.precisions) {
            *o = w * x;
        }
    }

    fn hessian_vec(&self, _q: &[f64], v: &[f64], out: &mut [f64]) -> bool {
        for ((o, x), w) in out.iter_mut().zip(v).zip(&self.precisions) {
            *o = w * x;
        }
        true
    }

    fn exact_sample(&self, rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        Some(
            self.precisions
                .iter()
                .map(|w| {
                    let z: f64 = StandardNormal.sample(rng);
                    z / w.sqrt()
                })
                .collect(),
        )
    }

    fn diagonal_quadratic(&self) -> bool {
        true
    }
}

/// The Gaussian benchmark target of dimension `d`.
pub fn gaussian_model(d: usize) -> Result<GaussianModel> {
    GaussianModel::new(d)
}

/// Unit harmonic oscillator `V(q) = q^2 / 2`.
pub fn oscillator_1d() -> GaussianModel {
    GaussianModel {
        precisions: vec![1.0],
    }
}

/// `V(q) = sum_j (q_j^2 / 2 + q_j^4 / 4)`, a nonlinear test bed.
#[derive(Debug, Clone, Copy)]
pub struct AnharmonicModel {
    d: usize,
}

pub fn anharmonic_model(d: usize) -> Result<AnharmonicModel> {
    if d == 0 {
        return Err(Error::InvalidArgument(
            "dimension must be at least 1".into(),
        ));
    }
    Ok(AnharmonicModel { d })
}

impl Target for AnharmonicModel {
    fn dim(&self) -> usize {
        self.d
    }

    fn potential(&self, q: &[f64]) -> f64 {
        q.iter()
            .map(|x| {
                let x2 = x * x;
                0.5 * x2 + 0.25 * x2 * x2
            })
            .sum()
    }

    fn gradient(&self, q: &[f64], out: &mut [f64]) {
        for (o, x) in out.iter_mut().zip(q) {
            *o = x + x * x * x;
        }
    }

    fn hessian_vec(&self, q: &[f64], v: &[f64], out: &mut [f64]) -> bool {
        for ((o, x), y) in out.iter_mut().zip(q).zip(v) {
            *o = (1.0 + 3.0 * x * x) * y;
        }
        true
    }
}

/// Wraps a target with a diagonal mass matrix `M = diag(masses)`.
#[derive(Debug, Clone)]
pub struct DiagonalMass<T> {
    inner: T,
    masses: Vec<f64>,
}

impl<T: Target> DiagonalMass<T> {
    pub fn new(inner: T, masses: Vec<f64>) -> Result<Self> {
        if masses.len() != inner.dim() {
            return Err(Error::DimensionMismatch {
                expected: inner.dim(),
                got: masses.len(),
            });
        }
        if masses.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(Error::InvalidArgument("masses must be positive".into()));
        }
        Ok(DiagonalMass { inner, masses })
    }
}

impl<T: Target> Target for DiagonalMass<T> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn potential(&self, q: &[f64]) -> f64 {
        self.inner.potential(q)
    }

    fn gradient(&self, q: &[f64], out: &mut [f64]) {
        self.inner.gradient(q, out)
    }

    fn hessian_vec(&self, q: &[f64], v: &[f64], out: &mut [f64]) -> bool {
        self.inner.hessian_vec(q, v, out)
    }

    fn identity_mass(&self) -> bool {
        false
    }

    fn inv_mass_apply(&self, p: &[f64], out: &mut [f64]) {
        for ((o, x), m) in out.iter_mut().zip(p).zip(&self.masses) {
            *o = x / m;
        }
    }

    fn sample_momentum(&self, rng: &mut dyn RngCore, out: &mut [f64]) {
        for (x, m) in out.iter_mut().zip(&self.masses) {
            let z: f64 = StandardNormal.sample(rng);
            *x = z * m.sqrt();
        }
    }

    fn exact_sample(&self, rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        self.inner.exact_sample(rng)
    }

    fn diagonal_quadratic(&self) -> bool {
        self.inner.diagonal_quadratic()
    }
}

/// The exact Hamiltonian flow of a [`GaussianModel`] (identity mass): each
/// coordinate rotates with angular frequency `j`. Energy is conserved up to
/// roundoff, so it serves as a zero-error baseline integrator.
#[derive(Debug, Clone)]
pub struct ExactGaussianFlow {
    frequencies: Vec<f64>,
}

impl ExactGaussianFlow {
    pub fn new(model: &GaussianModel) -> Self {
        ExactGaussianFlow {
            frequencies: model.precisions.iter().map(|w| w.sqrt()).collect(),
        }
    }
}

impl LegIntegrator for ExactGaussianFlow {
    fn name(&self) -> &str {
        "exact"
    }

    fn integrate(
        &self,
        state: &mut PhaseState,
        h: f64,
        n: usize,
        runner: &mut FlowRunner<'_>,
    ) -> Result<()> {
        runner.check_dim(state)?;
        let t = h * n as f64;
        for ((q, p), w) in state
            .q
            .iter_mut()
            .zip(state.p.iter_mut())
            .zip(&self.frequencies)
        {
            let (s, c) = (w * t).sin_cos();
            let (q0, p0) = (*q, *p);
            *q = c * q0 + s * p0 / w;
            *p = -w * s * q0 + c * p0;
        }
        if state.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFiniteState)
        }
    }
}
