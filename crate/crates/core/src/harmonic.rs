//! Linear analysis on the unit harmonic oscillator `H = (p^2 + q^2) / 2`.
//!
//! Every schedule acts on `(q, p)` as a 2x2 unit-determinant matrix. For a
//! palindromic kernel the `N`-step map is
//! `[[cos Nθ, χ sin Nθ], [-sin Nθ / χ, cos Nθ]]`; a preprocessor acts as
//! `[[α, β], [γ, δ]]` and its adjoint as `[[δ, β], [γ, α]]`. From these
//! come the expected energy error of one leg at stationarity and its
//! `N`-independent upper bound `ρ_h`, the quantity the tuner minimizes.

use crate::error::{Error, Result};
use crate::splitting::{Flow, FlowSchedule, ProcessedIntegrator};

/// Linear map `(q, p) -> (m11 q + m12 p, m21 q + m22 p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferMatrix {
    pub m11: f64,
    pub m12: f64,
    pub m21: f64,
    pub m22: f64,
}

impl TransferMatrix {
    pub const IDENTITY: TransferMatrix = TransferMatrix {
        m11: 1.0,
        m12: 0.0,
        m21: 0.0,
        m22: 1.0,
    };

    pub fn new(m11: f64, m12: f64, m21: f64, m22: f64) -> Self {
        TransferMatrix { m11, m12, m21, m22 }
    }

    /// Exact oscillator flow over time `t`.
    pub fn rotation(t: f64) -> Self {
        let (s, c) = t.sin_cos();
        TransferMatrix::new(c, s, -s, c)
    }

    pub fn det(&self) -> f64 {
        self.m11 * self.m22 - self.m12 * self.m21
    }

    /// `self * rhs`: apply `rhs` first, then `self`.
    pub fn mul(&self, rhs: &TransferMatrix) -> TransferMatrix {
        TransferMatrix {
            m11: self.m11 * rhs.m11 + self.m12 * rhs.m21,
            m12: self.m11 * rhs.m12 + self.m12 * rhs.m22,
            m21: self.m21 * rhs.m11 + self.m22 * rhs.m21,
            m22: self.m21 * rhs.m12 + self.m22 * rhs.m22,
        }
    }

    /// Repeated multiplication, `n` factors.
    pub fn pow(&self, n: usize) -> TransferMatrix {
        (0..n).fold(TransferMatrix::IDENTITY, |acc, _| self.mul(&acc))
    }

    pub fn apply(&self, q: f64, p: f64) -> (f64, f64) {
        (self.m11 * q + self.m12 * p, self.m21 * q + self.m22 * p)
    }

    pub fn max_abs_diff(&self, o: &TransferMatrix) -> f64 {
        [
            self.m11 - o.m11,
            self.m12 - o.m12,
            self.m21 - o.m21,
            self.m22 - o.m22,
        ]
        .iter()
        .fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Matrix of one flow with `V = q^2 / 2`, `M = 1`. A modified kick acts as a
/// plain kick of weight `coeff (b - 2 h^2 c)` since `grad V~ = (b - 2h^2 c) q`.
pub fn flow_matrix(f: Flow, h: f64) -> TransferMatrix {
    match f {
        Flow::Drift(a) => TransferMatrix::new(1.0, a * h, 0.0, 1.0),
        Flow::Kick(b) => TransferMatrix::new(1.0, 0.0, -b * h, 1.0),
        Flow::ModifiedKick { coeff, b, c } => {
            TransferMatrix::new(1.0, 0.0, -coeff * (b - 2.0 * h * h * c) * h, 1.0)
        }
    }
}

/// Product of the flow matrices in action order.
pub fn schedule_matrix(s: &FlowSchedule, h: f64) -> TransferMatrix {
    // Shears are applied directly to the rows to keep this hot path cheap.
    let mut m = TransferMatrix::IDENTITY;
    for &f in s.flows() {
        match f {
            Flow::Drift(a) => {
                let t = a * h;
                m.m11 += t * m.m21;
                m.m12 += t * m.m22;
            }
            Flow::Kick(_) | Flow::ModifiedKick { .. } => {
                let k = flow_matrix(f, h).m21;
                m.m21 += k * m.m11;
                m.m22 += k * m.m12;
            }
        }
    }
    m
}

/// Rotation angle and eccentricity of a stable palindromic kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpectrum {
    pub chi: f64,
    pub theta: f64,
}

/// `Some` when `|m11| < 1` and `m12 m21 < 0` (strict: the boundary counts as
/// unstable), with `θ = arccos m11 ∈ (0, π)` and `χ = sqrt(m12 / -m21) > 0`.
pub fn spectrum(m: &TransferMatrix) -> Option<KernelSpectrum> {
    let stable = m.m11.abs() < 1.0 && m.m12 * m.m21 < 0.0;
    if !stable {
        return None;
    }
    let chi = (m.m12 / -m.m21).sqrt();
    // keep m12 = χ sin θ when the kernel turns backwards (m12 < 0)
    let theta = if m.m12 > 0.0 {
        m.m11.acos()
    } else {
        -m.m11.acos()
    };
    Some(KernelSpectrum { chi, theta })
}

/// Stability length `h_s` of a palindromic kernel: the first step size at
/// which the kernel matrix stops being stable. Scans in steps of `1e-3`
/// and bisects the first crossing to `1e-12`. Returns `0` if the kernel is
/// already unstable at the first probe and `H_SCAN_MAX` if no instability is
/// found below it.
pub fn stability_length(kernel: &FlowSchedule) -> f64 {
    const SCAN: f64 = 1e-3;
    let stable = |h: f64| spectrum(&schedule_matrix(kernel, h)).is_some();
    if !stable(SCAN) {
        return 0.0;
    }
    let mut i = 1u64;
    loop {
        let h = (i + 1) as f64 * SCAN;
        if h > H_SCAN_MAX {
            return H_SCAN_MAX;
        }
        if !stable(h) {
            break;
        }
        i += 1;
    }
    let (mut lo, mut hi) = (i as f64 * SCAN, (i + 1) as f64 * SCAN);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if stable(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Upper end of the stability scan.
pub const H_SCAN_MAX: f64 = 100.0;

/// Entries `α, β, γ, δ` of a preprocessor matrix at a given step size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessorPolys {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

pub fn processor_polys(pre: &FlowSchedule, h: f64) -> ProcessorPolys {
    let m = schedule_matrix(pre, h);
    ProcessorPolys {
        alpha: m.m11,
        beta: m.m12,
        gamma: m.m21,
        delta: m.m22,
    }
}

/// Leg matrix `post · kernel^N · pre` from the closed forms
///
/// ```text
/// A = C(αδ + βγ) + S(γδχ - αβ/χ)
/// B = 2Cβδ + S(δ²χ - β²/χ)
/// C = 2Cαγ + S(γ²χ - α²/χ)
/// ```
///
/// with `C = cos Nθ`, `S = sin Nθ`.
pub fn leg_matrix(integ: &ProcessedIntegrator, h: f64, n: usize) -> Result<TransferMatrix> {
    let spec = spectrum(&schedule_matrix(integ.kernel(), h)).ok_or(Error::UnstableStep(h))?;
    let pp = processor_polys(integ.pre(), h);
    Ok(leg_matrix_closed_form(spec, pp, n))
}

pub fn leg_matrix_closed_form(
    spec: KernelSpectrum,
    pp: ProcessorPolys,
    n: usize,
) -> TransferMatrix {
    let ProcessorPolys {
        alpha,
        beta,
        gamma,
        delta,
    } = pp;
    let chi = spec.chi;
    let (s, c) = (n as f64 * spec.theta).sin_cos();
    let a = c * (alpha * delta + beta * gamma) + s * (gamma * delta * chi - alpha * beta / chi);
    let b = c * (2.0 * beta * delta) + s * (delta * delta * chi - beta * beta / chi);
    let cc = c * (2.0 * alpha * gamma) + s * (gamma * gamma * chi - alpha * alpha / chi);
    TransferMatrix::new(a, b, cc, a)
}

/// `E(Δ) = (m12 + m21)^2 / 2` for `(q0, p0)` standard normal.
pub fn expected_energy_error(m: &TransferMatrix) -> f64 {
    let s = m.m12 + m.m21;
    0.5 * s * s
}

/// `ρ_h = 2(αγ + βδ)^2 + [(δ² + γ²)χ - (α² + β²)/χ]^2 / 2`, or `+∞` where
/// the kernel is unstable.
pub fn rho(integ: &ProcessedIntegrator, h: f64) -> f64 {
    rho_parts(integ.kernel(), integ.pre(), h)
}

fn rho_parts(kernel: &FlowSchedule, pre: &FlowSchedule, h: f64) -> f64 {
    let Some(spec) = spectrum(&schedule_matrix(kernel, h)) else {
        return f64::INFINITY;
    };
    let ProcessorPolys {
        alpha,
        beta,
        gamma,
        delta,
    } = processor_polys(pre, h);
    let chi = spec.chi;
    let cross = alpha * gamma + beta * delta;
    let ecc = (delta * delta + gamma * gamma) * chi - (alpha * alpha + beta * beta) / chi;
    2.0 * cross * cross + 0.5 * ecc * ecc
}

/// Number of uniform grid points used by [`rho_norm`].
pub const RHO_GRID: usize = 10_000;
const GOLDEN_TOL: f64 = 1e-8;

/// `max ρ_h` over `0 < h <= hbar`: a uniform grid of [`RHO_GRID`] points, then
/// golden-section refinement around every grid-local maximum that reaches
/// at least half of the grid maximum. `+∞` if any grid point is unstable.
pub fn rho_norm(integ: &ProcessedIntegrator, hbar: f64) -> f64 {
    rho_profile(integ, hbar).norm
}

/// Maximum of `ρ_h` together with where it sits, and the largest interior
/// local maximum compared with the value at `hbar`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoProfile {
    pub norm: f64,
    pub argmax: f64,
    /// `ρ` at the right end of the interval.
    pub endpoint: f64,
    /// Largest local maximum strictly inside `(0, hbar)`, refined.
    pub interior_max: f64,
}

pub fn rho_profile(integ: &ProcessedIntegrator, hbar: f64) -> RhoProfile {
    let (kernel, pre) = (integ.kernel(), integ.pre());
    let f = |h: f64| rho_parts(kernel, pre, h);
    let step = hbar / RHO_GRID as f64;
    let grid: Vec<f64> = (1..=RHO_GRID).map(|i| f(step * i as f64)).collect();
    let endpoint = grid[RHO_GRID - 1];
    if grid.iter().any(|v| !v.is_finite()) {
        return RhoProfile {
            norm: f64::INFINITY,
            argmax: f64::NAN,
            endpoint,
            interior_max: f64::INFINITY,
        };
    }
    let grid_max = grid.iter().copied().fold(0.0, f64::max);
    let h_at = |i: usize| step * (i + 1) as f64;

    let mut norm = 0.0;
    let mut argmax = f64::NAN;
    let mut interior_max = 0.0_f64;
    for i in 0..RHO_GRID {
        let left = if i == 0 { 0.0 } else { grid[i - 1] };
        let right = grid.get(i + 1).copied().unwrap_or(f64::NEG_INFINITY);
        if !(grid[i] >= left && grid[i] >= right) {
            continue;
        }
        let (mut best_h, mut best) = (h_at(i), grid[i]);
        if grid[i] >= 0.5 * grid_max {
            let lo = if i == 0 { 0.0 } else { h_at(i - 1) };
            let hi = if i + 1 < RHO_GRID { h_at(i + 1) } else { hbar };
            let (gh, gv) = golden_max(&f, lo, hi);
            if gv > best {
                best_h = gh;
                best = gv;
            }
        }
        if i + 1 < RHO_GRID && best_h < hbar {
            interior_max = interior_max.max(best);
        }
        if best > norm {
            norm = best;
            argmax = best_h;
        }
    }
    RhoProfile {
        norm,
        argmax,
        endpoint,
        interior_max,
    }
}

fn golden_max(f: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > GOLDEN_TOL {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    // The bracket ends are also candidates (the max may sit on an edge).
    [(x1, f1), (x2, f2), (lo, f(lo)), (hi, f(hi))]
        .into_iter()
        .filter(|(x, _)| *x > 0.0)
        .fold((x1, f1), |acc, c| if c.1 > acc.1 { c } else { acc })
}

/// `(h, ρ_h)` samples on a uniform grid of `points` values in `(0, hmax]`.
pub fn rho_scan(integ: &ProcessedIntegrator, hmax: f64, points: usize) -> Vec<(f64, f64)> {
    (1..=points)
        .map(|i| {
            let h = hmax * i as f64 / points as f64;
            (h, rho(integ, h))
        })
        .collect()
}
