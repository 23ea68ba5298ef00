//! Splitting kernels, symmetric processors and processed integration legs
//! for separable Hamiltonians `dq/dt = M^{-1} p`, `dp/dt = -grad V(q)`.
//!
//! Schedules are stored in *action order*: the first flow in the list is the
//! first one applied to the state. A leg of a processed integrator applies
//! the preprocessor once, the kernel `N` times and the adjoint of the
//! preprocessor once.
//!
//! Consecutive kicks evaluated at the same position share one gradient
//! evaluation (the cache is invalidated by any drift), so a two-stage kernel
//! costs `3N + 1` gradients per leg and the processed family `3N + 5`.

use crate::error::{Error, Result};
use crate::targets::{CountingTarget, EvalCounts, Target};

/// Position/momentum pair advanced by the integrators.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
}

impl PhaseState {
    pub fn new(q: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if q.is_empty() {
            return Err(Error::InvalidArgument("phase state needs d >= 1".into()));
        }
        if q.len() != p.len() {
            return Err(Error::DimensionMismatch {
                expected: q.len(),
                got: p.len(),
            });
        }
        let s = PhaseState { q, p };
        if !s.is_finite() {
            return Err(Error::NonFiniteState);
        }
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.p).all(|x| x.is_finite())
    }

    /// Max-norm over both position and momentum.
    pub fn max_norm(&self) -> f64 {
        self.q
            .iter()
            .chain(&self.p)
            .fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Max-norm distance to another state of the same dimension.
    pub fn max_distance(&self, other: &PhaseState) -> f64 {
        self.q
            .iter()
            .zip(&other.q)
            .chain(self.p.iter().zip(&other.p))
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// `(q, p) -> (q, -p)`.
pub fn momentum_flip(s: &PhaseState) -> PhaseState {
    PhaseState {
        q: s.q.clone(),
        p: s.p.iter().map(|x| -x).collect(),
    }
}

/// One exact flow of a split system, acting over `coefficient * h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Flow {
    /// `q <- q + coeff h M^{-1} p`
    Drift(f64),
    /// `p <- p - coeff h grad V(q)`
    Kick(f64),
    /// `p <- p - coeff h grad V~(q)` with the modified potential
    /// `V~ = b V - h^2 c grad V^T M^{-1} grad V`.
    ModifiedKick { coeff: f64, b: f64, c: f64 },
}

impl Flow {
    fn is_finite(&self) -> bool {
        match *self {
            Flow::Drift(a) | Flow::Kick(a) => a.is_finite(),
            Flow::ModifiedKick { coeff, b, c } => {
                coeff.is_finite() && b.is_finite() && c.is_finite()
            }
        }
    }

    /// Contribution of this flow to the kick consistency sum.
    fn kick_weight(&self) -> f64 {
        match *self {
            Flow::Drift(_) => 0.0,
            Flow::Kick(b) => b,
            Flow::ModifiedKick { coeff, b, .. } => coeff * b,
        }
    }

    fn drift_weight(&self) -> f64 {
        match *self {
            Flow::Drift(a) => a,
            _ => 0.0,
        }
    }
}

/// Ordered list of elementary flows, in action order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlowSchedule {
    flows: Vec<Flow>,
}

impl FlowSchedule {
    pub fn new(flows: Vec<Flow>) -> Result<Self> {
        if let Some(f) = flows.iter().find(|f| !f.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite flow {f:?}")));
        }
        Ok(FlowSchedule { flows })
    }

    pub fn empty() -> Self {
        FlowSchedule::default()
    }

    pub fn flows(&self) -> &[Flow] {
        &self.flows
    }

    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }

    /// Reversed order; each exact flow is its own adjoint.
    pub fn adjoint(&self) -> FlowSchedule {
        FlowSchedule {
            flows: self.flows.iter().rev().copied().collect(),
        }
    }

    pub fn is_palindromic(&self) -> bool {
        self.flows.iter().eq(self.flows.iter().rev())
    }

    pub fn drift_sum(&self) -> f64 {
        self.flows.iter().map(Flow::drift_weight).sum()
    }

    pub fn kick_sum(&self) -> f64 {
        self.flows.iter().map(Flow::kick_weight).sum()
    }
}

/// Adjoint of a schedule: the flows in reverse order.
pub fn adjoint_schedule(s: &FlowSchedule) -> FlowSchedule {
    s.adjoint()
}

/// Two-stage palindromic kernel `(1/2 - b, a, b, 1 - 2a, b, a, 1/2 - b)`
/// with `a = b / (6b - 1)`.
pub fn build_kernel(b: f64) -> Result<FlowSchedule> {
    let denom = 6.0 * b - 1.0;
    if !b.is_finite() || denom.abs() < 1e-12 {
        return Err(Error::DegenerateParameter(b));
    }
    let a = b / denom;
    if !a.is_finite() {
        return Err(Error::DegenerateParameter(b));
    }
    FlowSchedule::new(vec![
        Flow::Kick(0.5 - b),
        Flow::Drift(a),
        Flow::Kick(b),
        Flow::Drift(1.0 - 2.0 * a),
        Flow::Kick(b),
        Flow::Drift(a),
        Flow::Kick(0.5 - b),
    ])
}

/// Preprocessor with action order kick `d`, drift `c`, kick `-d`, drift `-c`.
/// Its adjoint (the postprocessor) is drift `-c`, kick `-d`, drift `c`, kick `d`.
pub fn build_processor(c: f64, d: f64) -> Result<FlowSchedule> {
    if !c.is_finite() || !d.is_finite() {
        return Err(Error::InvalidArgument(
            "processor coefficients must be finite".into(),
        ));
    }
    FlowSchedule::new(vec![
        Flow::Kick(d),
        Flow::Drift(c),
        Flow::Kick(-d),
        Flow::Drift(-c),
    ])
}

/// Velocity Verlet: kick 1/2, drift 1, kick 1/2.
pub fn verlet_kernel() -> FlowSchedule {
    FlowSchedule {
        flows: vec![Flow::Kick(0.5), Flow::Drift(1.0), Flow::Kick(0.5)],
    }
}

/// Parameters of the three-parameter processed family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilyParams {
    pub b: f64,
    pub a: f64,
    pub c: f64,
    pub d: f64,
}

const CONSISTENCY_TOL: f64 = 1e-14;

/// A kernel together with a preprocessor and its adjoint postprocessor.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedIntegrator {
    name: String,
    kernel: FlowSchedule,
    pre: FlowSchedule,
    post: FlowSchedule,
    params: Option<FamilyParams>,
}

impl ProcessedIntegrator {
    /// Checks that the kernel is palindromic and consistent and that the
    /// preprocessor coefficients sum to zero.
    pub fn new(name: impl Into<String>, kernel: FlowSchedule, pre: FlowSchedule) -> Result<Self> {
        if kernel.is_empty() || !kernel.is_palindromic() {
            return Err(Error::InvalidArgument(
                "kernel must be a non-empty palindrome".into(),
            ));
        }
        if (kernel.drift_sum() - 1.0).abs() > CONSISTENCY_TOL
            || (kernel.kick_sum() - 1.0).abs() > CONSISTENCY_TOL
        {
            return Err(Error::InvalidArgument(format!(
                "inconsistent kernel: drift sum {}, kick sum {}",
                kernel.drift_sum(),
                kernel.kick_sum()
            )));
        }
        if pre.drift_sum().abs() > CONSISTENCY_TOL || pre.kick_sum().abs() > CONSISTENCY_TOL {
            return Err(Error::InvalidArgument(
                "preprocessor drift and kick coefficients must each sum to zero".into(),
            ));
        }
        let post = pre.adjoint();
        Ok(ProcessedIntegrator {
            name: name.into(),
            kernel,
            pre,
            post,
            params: None,
        })
    }

    /// Member `(b, c, d)` of the processed two-stage family.
    pub fn family(b: f64, c: f64, d: f64) -> Result<Self> {
        let kernel = build_kernel(b)?;
        let pre = if c == 0.0 && d == 0.0 {
            FlowSchedule::empty()
        } else {
            build_processor(c, d)?
        };
        let mut integ = ProcessedIntegrator::new(format!("proc(b={b})"), kernel, pre)?;
        integ.params = Some(FamilyParams {
            b,
            a: b / (6.0 * b - 1.0),
            c,
            d,
        });
        Ok(integ)
    }

    /// Two-stage kernel with empty processors.
    pub fn unprocessed(b: f64) -> Result<Self> {
        ProcessedIntegrator::family(b, 0.0, 0.0)
    }

    pub fn leapfrog() -> Self {
        ProcessedIntegrator::new("leapfrog", verlet_kernel(), FlowSchedule::empty())
            .expect("verlet kernel is consistent")
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kernel(&self) -> &FlowSchedule {
        &self.kernel
    }

    pub fn pre(&self) -> &FlowSchedule {
        &self.pre
    }

    pub fn post(&self) -> &FlowSchedule {
        &self.post
    }

    pub fn params(&self) -> Option<FamilyParams> {
        self.params
    }
}

/// Executes flows against one chain's counted target, caching the gradient
/// (and the modified force) at the current position.
pub struct FlowRunner<'a> {
    target: CountingTarget<'a>,
    fusion: bool,
    grad: Vec<f64>,
    grad_valid: bool,
    force: Vec<f64>,
    force_key: Option<(f64, f64, f64)>,
    scratch: Vec<f64>,
    hv: Vec<f64>,
}

impl<'a> FlowRunner<'a> {
    pub fn new(target: &'a dyn Target) -> Self {
        let d = target.dim();
        FlowRunner {
            target: CountingTarget::new(target),
            fusion: true,
            grad: vec![0.0; d],
            grad_valid: false,
            force: vec![0.0; d],
            force_key: None,
            scratch: vec![0.0; d],
            hv: vec![0.0; d],
        }
    }

    /// With fusion off every kick re-evaluates its gradient. Trajectories are
    /// identical either way; only the counts change.
    pub fn with_fusion(mut self, fusion: bool) -> Self {
        self.fusion = fusion;
        self
    }

    pub fn counts(&self) -> EvalCounts {
        self.target.counts()
    }

    pub fn target(&mut self) -> &mut CountingTarget<'a> {
        &mut self.target
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    /// Drops cached gradients; call whenever the position changes outside
    /// of a drift (e.g. a rejected proposal).
    pub fn invalidate(&mut self) {
        self.grad_valid = false;
        self.force_key = None;
    }

    pub fn check_dim(&self, s: &PhaseState) -> Result<()> {
        let d = self.target.dim();
        if s.q.len() != d || s.p.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: s.q.len().max(s.p.len()),
            });
        }
        Ok(())
    }

    fn ensure_gradient(&mut self, q: &[f64]) {
        if !(self.fusion && self.grad_valid) {
            self.target.gradient(q, &mut self.grad);
            self.grad_valid = true;
        }
    }

    /// Applies one flow without a finiteness check.
    pub(crate) fn step(&mut self, s: &mut PhaseState, flow: Flow, h: f64) {
        match flow {
            Flow::Drift(a) => {
                if a == 0.0 {
                    return;
                }
                let t = a * h;
                if self.target.identity_mass() {
                    for (q, p) in s.q.iter_mut().zip(&s.p) {
                        *q += t * p;
                    }
                } else {
                    self.target.inv_mass_apply(&s.p, &mut self.scratch);
                    for (q, v) in s.q.iter_mut().zip(&self.scratch) {
                        *q += t * v;
                    }
                }
                self.invalidate();
            }
            Flow::Kick(b) => {
                if b == 0.0 {
                    return;
                }
                self.ensure_gradient(&s.q);
                let t = b * h;
                for (p, g) in s.p.iter_mut().zip(&self.grad) {
                    *p -= t * g;
                }
            }
            Flow::ModifiedKick { coeff, b, c } => {
                if coeff == 0.0 {
                    return;
                }
                let key = (b, c, h);
                if !(self.fusion && self.force_key == Some(key)) {
                    self.ensure_gradient(&s.q);
                    if c == 0.0 {
                        for (f, g) in self.force.iter_mut().zip(&self.grad) {
                            *f = b * g;
                        }
                    } else {
                        self.target.inv_mass_apply(&self.grad, &mut self.scratch);
                        self.target.hessian_vec(&s.q, &self.scratch, &mut self.hv);
                        let w = 2.0 * h * h * c;
                        for ((f, g), hv) in self.force.iter_mut().zip(&self.grad).zip(&self.hv) {
                            *f = b * g - w * hv;
                        }
                    }
                    self.force_key = Some(key);
                }
                let t = coeff * h;
                for (p, f) in s.p.iter_mut().zip(&self.force) {
                    *p -= t * f;
                }
            }
        }
    }

    pub(crate) fn run_schedule(&mut self, s: &mut PhaseState, sched: &FlowSchedule, h: f64) {
        for &f in sched.flows() {
            self.step(s, f, h);
        }
    }
}

/// Applies a single flow. Kicks with coefficient zero are skipped outright.
pub fn apply_flow(
    s: &mut PhaseState,
    flow: Flow,
    h: f64,
    runner: &mut FlowRunner<'_>,
) -> Result<()> {
    runner.check_dim(s)?;
    runner.step(s, flow, h);
    if s.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteState)
    }
}

/// Anything that can carry a phase state across a leg of `n` steps of size `h`.
pub trait LegIntegrator: Send + Sync {
    fn name(&self) -> &str;

    /// Smallest admissible number of steps per leg.
    fn min_steps(&self) -> usize {
        1
    }

    fn integrate(
        &self,
        state: &mut PhaseState,
        h: f64,
        n: usize,
        runner: &mut FlowRunner<'_>,
    ) -> Result<()>;
}

pub(crate) fn check_leg_args(h: f64, n: usize, min_steps: usize) -> Result<()> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "step size must be positive, got {h}"
        )));
    }
    if n < min_steps {
        return Err(Error::InsufficientSteps {
            required: min_steps,
            got: n,
        });
    }
    Ok(())
}

impl LegIntegrator for ProcessedIntegrator {
    fn name(&self) -> &str {
        &self.name
    }

    fn integrate(
        &self,
        state: &mut PhaseState,
        h: f64,
        n: usize,
        runner: &mut FlowRunner<'_>,
    ) -> Result<()> {
        check_leg_args(h, n, 1)?;
        runner.check_dim(state)?;
        runner.invalidate();
        runner.run_schedule(state, &self.pre, h);
        for _ in 0..n {
            runner.run_schedule(state, &self.kernel, h);
        }
        runner.run_schedule(state, &self.post, h);
        if state.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFiniteState)
        }
    }
}

/// Runs one leg `post o kernel^N o pre` in place and returns the number of
/// gradient evaluations it used.
pub fn integrate_leg(
    state: &mut PhaseState,
    h: f64,
    n: usize,
    integ: &dyn LegIntegrator,
    runner: &mut FlowRunner<'_>,
) -> Result<u64> {
    let before = runner.counts();
    integ.integrate(state, h, n, runner)?;
    Ok((runner.counts() - before).gradients)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{anharmonic_model, gaussian_model, oscillator_1d};

    #[test]
    fn kernel_coefficients() {
        let k = build_kernel(0.381120).unwrap();
        let Flow::Drift(a) = k.flows()[1] else {
            panic!()
        };
        assert!((a - 0.381120 / (6.0 * 0.381120 - 1.0)).abs() < 1e-15);
        assert!((a - 0.296195).abs() < 5e-7);
        let k2 = build_kernel(0.348674).unwrap();
        let Flow::Drift(a2) = k2.flows()[1] else {
            panic!()
        };
        assert!((a2 - 0.319286).abs() < 5e-7);
        assert!(k.is_palindromic());
        assert!((k.drift_sum() - 1.0).abs() < 1e-14);
        assert!((k.kick_sum() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn kernel_degenerate() {
        assert_eq!(
            build_kernel(1.0 / 6.0),
            Err(Error::DegenerateParameter(1.0 / 6.0))
        );
        assert!(build_kernel(f64::NAN).is_err());
    }

    #[test]
    fn processor_sums_and_adjoint() {
        let p = build_processor(-0.075640, 0.069720).unwrap();
        assert_eq!(p.drift_sum(), 0.0);
        assert_eq!(p.kick_sum(), 0.0);
        assert_eq!(
            p.adjoint().flows(),
            &[
                Flow::Drift(0.075640),
                Flow::Kick(-0.069720),
                Flow::Drift(-0.075640),
                Flow::Kick(0.069720)
            ]
        );
        let z = build_processor(0.0, 0.0).unwrap();
        assert!(z
            .flows()
            .iter()
            .all(|f| f.kick_weight() == 0.0 && f.drift_weight() == 0.0));
        assert!(build_processor(f64::INFINITY, 0.0).is_err());
    }

    #[test]
    fn adjoint_reverses() {
        let s = FlowSchedule::new(vec![Flow::Kick(0.3), Flow::Drift(0.7)]).unwrap();
        assert_eq!(s.adjoint().flows(), &[Flow::Drift(0.7), Flow::Kick(0.3)]);
        assert_eq!(s.adjoint().adjoint(), s);
    }

    #[test]
    fn drift_moves_position() {
        let osc = gaussian_model(2).unwrap();
        let mut r = FlowRunner::new(&osc);
        let mut s = PhaseState::new(vec![0.0, 0.0], vec![2.0, 0.0]).unwrap();
        apply_flow(&mut s, Flow::Drift(1.0), 0.1, &mut r).unwrap();
        assert!((s.q[0] - 0.2).abs() < 1e-15);
        assert_eq!(s.q[1], 0.0);
        assert_eq!(r.counts().gradients, 0);
    }

    #[test]
    fn zero_kick_is_skipped() {
        let osc = oscillator_1d();
        let mut r = FlowRunner::new(&osc);
        let mut s = PhaseState::new(vec![1.0], vec![0.5]).unwrap();
        let before = s.clone();
        apply_flow(&mut s, Flow::Kick(0.0), 0.1, &mut r).unwrap();
        assert_eq!(s, before);
        assert_eq!(r.counts().gradients, 0);
    }

    #[test]
    fn modified_kick_without_correction_is_scaled_kick() {
        let m = anharmonic_model(2).unwrap();
        let start = PhaseState::new(vec![0.7, -0.4], vec![0.1, 0.2]).unwrap();
        let mut a = start.clone();
        let mut b = start.clone();
        let mut ra = FlowRunner::new(&m);
        let mut rb = FlowRunner::new(&m);
        apply_flow(
            &mut a,
            Flow::ModifiedKick {
                coeff: 1.0,
                b: 0.3,
                c: 0.0,
            },
            0.2,
            &mut ra,
        )
        .unwrap();
        apply_flow(&mut b, Flow::Kick(0.3), 0.2, &mut rb).unwrap();
        assert!(a.max_distance(&b) < 1e-16);
        assert_eq!(ra.counts().hessian_vecs, 0);
    }

    #[test]
    fn non_finite_state_detected() {
        let osc = oscillator_1d();
        let mut r = FlowRunner::new(&osc);
        let mut s = PhaseState::new(vec![1e308], vec![1e308]).unwrap();
        assert_eq!(
            apply_flow(&mut s, Flow::Drift(10.0), 10.0, &mut r),
            Err(Error::NonFiniteState)
        );
        assert!(PhaseState::new(vec![f64::NAN], vec![0.0]).is_err());
        assert!(PhaseState::new(vec![0.0], vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn gradient_counts_per_leg() {
        let g = gaussian_model(3).unwrap();
        let s0 = PhaseState::new(vec![0.1, 0.2, 0.3], vec![1.0, -1.0, 0.5]).unwrap();
        let cases: [(ProcessedIntegrator, u64); 3] = [
            (
                ProcessedIntegrator::family(0.348674, -0.075640, 0.069720).unwrap(),
                35,
            ),
            (ProcessedIntegrator::unprocessed(0.381120).unwrap(), 31),
            (ProcessedIntegrator::leapfrog(), 11),
        ];
        for (integ, expected) in cases {
            let mut r = FlowRunner::new(&g);
            let mut s = s0.clone();
            let n = integrate_leg(&mut s, 0.01, 10, &integ, &mut r).unwrap();
            assert_eq!(n, expected, "{}", integ.name());
        }
    }

    #[test]
    fn fusion_is_bit_identical() {
        let m = anharmonic_model(3).unwrap();
        let integ = ProcessedIntegrator::family(0.340200, -0.093500, 0.072800).unwrap();
        let s0 = PhaseState::new(vec![0.5, -1.0, 0.2], vec![0.3, 0.1, -0.8]).unwrap();
        let mut a = s0.clone();
        let mut b = s0.clone();
        let mut ra = FlowRunner::new(&m);
        let mut rb = FlowRunner::new(&m).with_fusion(false);
        let na = integrate_leg(&mut a, 0.05, 20, &integ, &mut ra).unwrap();
        let nb = integrate_leg(&mut b, 0.05, 20, &integ, &mut rb).unwrap();
        assert_eq!(a, b);
        assert_eq!(na, 65);
        assert_eq!(nb, 4 * 20 + 4);
    }

    #[test]
    fn invalid_leg_arguments() {
        let g = oscillator_1d();
        let mut r = FlowRunner::new(&g);
        let integ = ProcessedIntegrator::leapfrog();
        let mut s = PhaseState::new(vec![1.0], vec![0.0]).unwrap();
        assert!(integrate_leg(&mut s, 0.1, 0, &integ, &mut r).is_err());
        assert!(integrate_leg(&mut s, -0.1, 3, &integ, &mut r).is_err());
        let mut wrong = PhaseState::new(vec![1.0, 2.0], vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            integrate_leg(&mut wrong, 0.1, 3, &integ, &mut r),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rejects_inconsistent_kernels() {
        let bad =
            FlowSchedule::new(vec![Flow::Kick(0.5), Flow::Drift(0.9), Flow::Kick(0.5)]).unwrap();
        assert!(ProcessedIntegrator::new("bad", bad, FlowSchedule::empty()).is_err());
        let lopsided = FlowSchedule::new(vec![Flow::Kick(1.0), Flow::Drift(1.0)]).unwrap();
        assert!(ProcessedIntegrator::new("bad", lopsided, FlowSchedule::empty()).is_err());
        let pre = FlowSchedule::new(vec![Flow::Kick(0.1), Flow::Drift(0.1)]).unwrap();
        assert!(ProcessedIntegrator::new("bad", verlet_kernel(), pre).is_err());
    }

    #[test]
    fn flip_is_involution() {
        let s = PhaseState::new(vec![1.0, 2.0], vec![-3.0, 4.0]).unwrap();
        let f = momentum_flip(&s);
        assert_eq!(f.q, s.q);
        assert_eq!(f.p, vec![3.0, -4.0]);
        assert_eq!(momentum_flip(&f), s);
    }
}
