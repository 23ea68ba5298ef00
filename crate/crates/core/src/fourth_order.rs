//! Fourth-order processing of the Rowlands kernel with positive coefficients.
//!
//! The kernel is velocity Verlet with kicks taken from the modified potential
//! `V~ = V/2 - (h^2/48) grad V^T M^{-1} grad V`. Writing `κ = ψ ∘ π` turns the
//! processed leg `π* ∘ ψ^N ∘ π` into `κ* ∘ ψ^(N-2) ∘ κ`, and `κ` can be
//! chosen with every coefficient positive:
//!
//! ```text
//! κ (action order): modified kick (23/72, 55/1728), drift 6/7, kick 49/72, drift 1/7
//! ```

use crate::error::{Error, Result};
use crate::splitting::{
    check_leg_args, Flow, FlowRunner, FlowSchedule, LegIntegrator, PhaseState, ProcessedIntegrator,
};
use crate::targets::{fd_hessian_vec, Target};

/// Exact fraction `num / den` with `den > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub num: i64,
    pub den: i64,
}

impl Ratio {
    pub const fn new(num: i64, den: i64) -> Self {
        Ratio { num, den }
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn is_positive(self) -> bool {
        self.den > 0 && self.num > 0
    }

    pub fn is_one(self) -> bool {
        self.num == self.den
    }
}

impl std::ops::Add for Ratio {
    type Output = Ratio;

    fn add(self, o: Ratio) -> Ratio {
        Ratio::new(self.num * o.den + o.num * self.den, self.den * o.den)
    }
}

/// Kernel modified-kick weights `(b, c)`.
pub const KERNEL_B: Ratio = Ratio::new(1, 2);
pub const KERNEL_C: Ratio = Ratio::new(1, 48);

pub const ALPHA_1: Ratio = Ratio::new(6, 7);
pub const BETA_1: Ratio = Ratio::new(23, 72);
pub const GAMMA_1: Ratio = Ratio::new(55, 1728);
pub const ALPHA_2: Ratio = Ratio::new(1, 7);
pub const BETA_2: Ratio = Ratio::new(49, 72);

/// Every rational coefficient that multiplies `h` in the kernel and in `κ`.
pub const POSITIVE_COEFFICIENTS: [Ratio; 7] = [
    KERNEL_B, KERNEL_C, ALPHA_1, BETA_1, GAMMA_1, ALPHA_2, BETA_2,
];

/// Rowlands kernel plus its fourth-order processing map and adjoint.
#[derive(Debug, Clone, PartialEq)]
pub struct RowlandsScheme {
    kernel: FlowSchedule,
    kappa: FlowSchedule,
    kappa_star: FlowSchedule,
}

impl Default for RowlandsScheme {
    fn default() -> Self {
        Self::new()
    }
}

impl RowlandsScheme {
    pub fn new() -> Self {
        let mk = Flow::ModifiedKick {
            coeff: 1.0,
            b: KERNEL_B.to_f64(),
            c: KERNEL_C.to_f64(),
        };
        let kernel = FlowSchedule::new(vec![mk, Flow::Drift(1.0), mk]).expect("finite");
        let kappa = FlowSchedule::new(vec![
            Flow::ModifiedKick {
                coeff: 1.0,
                b: BETA_1.to_f64(),
                c: GAMMA_1.to_f64(),
            },
            Flow::Drift(ALPHA_1.to_f64()),
            Flow::Kick(BETA_2.to_f64()),
            Flow::Drift(ALPHA_2.to_f64()),
        ])
        .expect("finite");
        let kappa_star = kappa.adjoint();
        RowlandsScheme {
            kernel,
            kappa,
            kappa_star,
        }
    }

    pub fn kernel(&self) -> &FlowSchedule {
        &self.kernel
    }

    pub fn kappa(&self) -> &FlowSchedule {
        &self.kappa
    }

    pub fn kappa_star(&self) -> &FlowSchedule {
        &self.kappa_star
    }

    /// The bare kernel iterated `N` times, without processing.
    pub fn unprocessed(&self) -> ProcessedIntegrator {
        ProcessedIntegrator::new(
            "rowlands-kernel",
            self.kernel.clone(),
            FlowSchedule::empty(),
        )
        .expect("Rowlands kernel is a consistent palindrome")
    }
}

impl LegIntegrator for RowlandsScheme {
    fn name(&self) -> &str {
        "rowlands"
    }

    fn min_steps(&self) -> usize {
        2
    }

    fn integrate(
        &self,
        state: &mut PhaseState,
        h: f64,
        n: usize,
        runner: &mut FlowRunner<'_>,
    ) -> Result<()> {
        check_leg_args(h, n, 2)?;
        runner.check_dim(state)?;
        runner.invalidate();
        runner.run_schedule(state, &self.kappa, h);
        for _ in 0..n - 2 {
            runner.run_schedule(state, &self.kernel, h);
        }
        runner.run_schedule(state, &self.kappa_star, h);
        if state.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFiniteState)
        }
    }
}

/// Processed Rowlands leg `κ* ∘ ψ^(N-2) ∘ κ` spanning `N h`.
pub fn rowlands_leg(s0: &PhaseState, h: f64, n: usize, target: &dyn Target) -> Result<PhaseState> {
    let mut runner = FlowRunner::new(target);
    let mut s = s0.clone();
    RowlandsScheme::new().integrate(&mut s, h, n, &mut runner)?;
    Ok(s)
}

/// `grad V~ = b grad V - 2 h^2 c Hess V M^{-1} grad V`.
pub fn modified_force(q: &[f64], b: f64, c: f64, h: f64, target: &dyn Target) -> Vec<f64> {
    let d = q.len();
    let mut g = vec![0.0; d];
    target.gradient(q, &mut g);
    if c == 0.0 {
        return g.iter().map(|x| b * x).collect();
    }
    let mut mg = vec![0.0; d];
    target.inv_mass_apply(&g, &mut mg);
    let mut hv = vec![0.0; d];
    if !target.hessian_vec(q, &mg, &mut hv) {
        fd_hessian_vec(target, q, &mg, &mut hv);
    }
    g.iter()
        .zip(&hv)
        .map(|(gi, hi)| b * gi - 2.0 * h * h * c * hi)
        .collect()
}

/// Errors at successively halved step sizes and the observed orders
/// `log2(e_k / e_{k+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderReport {
    pub step_sizes: Vec<f64>,
    pub errors: Vec<f64>,
    pub orders: Vec<f64>,
}

/// Integrates from `s0` over `t_end` with step sizes `h0, h0/2, …`
/// (`levels` of them) and compares each end state with `reference` in the
/// max norm over `(q, p)`.
pub fn order_estimate(
    target: &dyn Target,
    integ: &dyn LegIntegrator,
    s0: &PhaseState,
    t_end: f64,
    h0: f64,
    levels: usize,
    reference: &PhaseState,
) -> Result<OrderReport> {
    if levels < 2 {
        return Err(Error::InvalidArgument(
            "order estimate needs at least 2 levels".into(),
        ));
    }
    let mut step_sizes = Vec::with_capacity(levels);
    let mut errors = Vec::with_capacity(levels);
    for k in 0..levels {
        let h = h0 / (1u64 << k) as f64;
        let n = steps_for(t_end, h, integ.min_steps())?;
        let mut s = s0.clone();
        let mut runner = FlowRunner::new(target);
        integ.integrate(&mut s, h, n, &mut runner)?;
        step_sizes.push(h);
        errors.push(s.max_distance(reference));
    }
    let orders = errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    Ok(OrderReport {
        step_sizes,
        errors,
        orders,
    })
}

fn steps_for(t_end: f64, h: f64, min_steps: usize) -> Result<usize> {
    let n = (t_end / h).round();
    if (n * h - t_end).abs() > 1e-9 * t_end.abs().max(1.0) || n < min_steps as f64 {
        return Err(Error::InvalidArgument(format!(
            "t_end = {t_end} is not a whole number (>= {min_steps}) of steps h = {h}"
        )));
    }
    Ok(n as usize)
}

/// High-accuracy reference: the processed Rowlands scheme at `h0 / 64`.
pub fn fine_reference(
    target: &dyn Target,
    s0: &PhaseState,
    t_end: f64,
    h0: f64,
) -> Result<PhaseState> {
    let h = h0 / 64.0;
    let n = steps_for(t_end, h, 2)?;
    rowlands_leg(s0, h, n, target)
}
