//! The extended Airy₁ kernel, the joint CDF of the process at two points,
//! the excess `E = F / (f₁ f₂) - 1` and the trace/remainder evaluators.
//!
//! Thresholds `s` are handled by truncating `(s, ∞)` to `(s, s + L(s))`
//! and discretising with graded composite Gauss–Legendre panels.

use crate::error::{Error, Result};
use crate::logspace::SignedLog;
use crate::quad::{
    composite_gauss_legendre, graded_breakpoints, kernel_trace_product, weighted_matrix,
    BlockKernel, QuadratureRule,
};
use crate::specfun::eval_unchecked;
use nalgebra::DMatrix;
use std::f64::consts::PI;

/// Smallest `u` accepted by the determinant routines.
pub const U_MIN: f64 = 0.05;
/// Largest `u` accepted by the determinant routines.
pub const U_MAX: f64 = 8.0;
/// Thresholds are restricted to `[-S_MAX, S_MAX]`.
pub const S_MAX: f64 = 12.0;
/// Below this product of marginals the direct excess is not trusted.
pub const MARGINAL_PRODUCT_FLOOR: f64 = 1e-13;

/// Default `C₂` of [`remainder_budget_r1`]: [`calibrate_remainder_constants`]
/// with safety factor 10, rounded up and frozen.
pub const DEFAULT_C2: f64 = 2.2e-2;
/// Default `C` of [`remainder_budget_r2`], fixed the same way.
pub const DEFAULT_C_R2: f64 = 4.1e-7;
/// Safety factor applied to the measured maxima.
pub const CALIBRATION_SAFETY: f64 = 10.0;

/// Parameters of one extended-kernel instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub u: f64,
    pub s1: f64,
    pub s2: f64,
    /// Whether the off-diagonal entries carry the taming weights.
    pub conjugated: bool,
}

impl KernelSpec {
    /// A conjugated kernel specification.
    pub fn new(u: f64, s1: f64, s2: f64) -> Result<Self> {
        if !(u > 0.0) || !u.is_finite() {
            return Err(Error::Domain(format!("u must be finite and > 0, got {u}")));
        }
        if !s1.is_finite() || !s2.is_finite() {
            return Err(Error::Domain(format!(
                "thresholds must be finite, got ({s1}, {s2})"
            )));
        }
        Ok(KernelSpec {
            u,
            s1,
            s2,
            conjugated: true,
        })
    }

    pub fn with_conjugation(self, conjugated: bool) -> Self {
        KernelSpec { conjugated, ..self }
    }

    fn check_engine_range(&self) -> Result<()> {
        if !(U_MIN..=U_MAX).contains(&self.u) {
            return Err(Error::Domain(format!(
                "u = {} outside the validated range [{U_MIN}, {U_MAX}]",
                self.u
            )));
        }
        for s in [self.s1, self.s2] {
            if s.abs() > S_MAX {
                return Err(Error::Domain(format!(
                    "threshold {s} outside [-{S_MAX}, {S_MAX}]"
                )));
            }
        }
        Ok(())
    }
}

/// Heat kernel `e^{-d²/4u} / sqrt(4πu)`.
#[inline]
fn heat(d: f64, u: f64) -> f64 {
    (-d * d / (4.0 * u)).exp() / (4.0 * PI * u).sqrt()
}

/// `(sign, ln|Ai(z) e^c|)`.
#[inline]
fn log_airy_times_exp(z: f64, c: f64) -> (f64, f64) {
    let a = eval_unchecked(z);
    (a.sign(), a.log_abs() + c)
}

#[inline]
fn signed_exp((sign, log): (f64, f64)) -> f64 {
    if sign == 0.0 {
        0.0
    } else {
        sign * log.exp()
    }
}

/// The 2×2 extended Airy₁ kernel on `(s₁, ∞) ⊕ (s₂, ∞)`.
///
/// Conjugation is the similarity `K_{ij} → d_i(x) K_{ij}(x, y) / d_j(y)` with
/// `d₁ = 1`, `d₂(x) = e^{ux + u³/3}`: `K₁₂ → K₁₂ e^{-uy - u³/3}`,
/// `K₂₁ → K₂₁ e^{ux + u³/3}` and `K₂₂ → e^{u(x-y)} K₂₂`. Leaving `K₂₂`
/// untouched would change the determinant.
///
/// All entries are evaluated in log space, so neither mode overflows on the
/// engine range; unconjugated `K₂₁` may underflow to zero.
#[derive(Debug, Clone, Copy)]
pub struct Airy1Kernel {
    pub spec: KernelSpec,
}

impl Airy1Kernel {
    /// Entry `K_{ij}(x, y)`; overflow is reported as an evaluation error.
    pub fn eval(&self, i: usize, j: usize, x: f64, y: f64) -> Result<f64> {
        let v = self.entry(i, j, x, y);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Evaluation {
                x,
                y,
                reason: self.overflow_reason(v),
            })
        }
    }

    fn overflow_reason(&self, v: f64) -> String {
        if self.spec.conjugated {
            format!("kernel entry is {v}")
        } else {
            format!("kernel entry is {v}; use the conjugated kernel for u = {}", self.spec.u)
        }
    }

    /// `ln|K₂₁|` with its sign, in the current conjugation mode.
    fn log_k21(&self, x: f64, y: f64) -> (f64, f64) {
        let KernelSpec {
            u, s1, s2, conjugated,
        } = self.spec;
        if !(x > s2 && y > s1) {
            return (0.0, f64::NEG_INFINITY);
        }
        let u3 = u * u * u;
        let c = if conjugated {
            -u * y - u3 / 3.0
        } else {
            -(x + y) * u - 2.0 / 3.0 * u3
        };
        log_airy_times_exp(x + y + u * u, c)
    }

    fn k12(&self, x: f64, y: f64) -> f64 {
        let KernelSpec {
            u, s1, s2, conjugated,
        } = self.spec;
        if !(x > s1 && y > s2) {
            return 0.0;
        }
        let u3 = u * u * u;
        let z = x + y + u * u;
        if conjugated {
            signed_exp(log_airy_times_exp(z, u * x + u3 / 3.0))
                - heat(x - y, u) * (-u * y - u3 / 3.0).exp()
        } else {
            signed_exp(log_airy_times_exp(z, (x + y) * u + 2.0 / 3.0 * u3)) - heat(x - y, u)
        }
    }

    /// Log scale `P` used to keep `K₂₁` representable: the log-magnitude of
    /// the `K₂₁` envelope at the corner `(s₂, s₁)`, where it is largest.
    pub fn k21_scale(&self) -> f64 {
        let KernelSpec {
            u, s1, s2, conjugated,
        } = self.spec;
        let z0 = (u * u + s1 + s2).max(0.0);
        let airy = -2.0 / 3.0 * z0 * z0.sqrt();
        if conjugated {
            airy - u * s1 - u * u * u / 3.0
        } else {
            airy - u * (s1 + s2) - 2.0 / 3.0 * u * u * u
        }
    }
}

impl BlockKernel for Airy1Kernel {
    fn entry(&self, i: usize, j: usize, x: f64, y: f64) -> f64 {
        let KernelSpec {
            u, s1, s2, conjugated,
        } = self.spec;
        match (i, j) {
            (1, 1) => diag_entry(s1, x, y),
            (2, 2) if conjugated => {
                if x > s2 && y > s2 {
                    signed_exp(log_airy_times_exp(x + y, u * (x - y)))
                } else {
                    0.0
                }
            }
            (2, 2) => diag_entry(s2, x, y),
            (1, 2) => self.k12(x, y),
            (2, 1) => signed_exp(self.log_k21(x, y)),
            _ => f64::NAN,
        }
    }
}

#[inline]
fn diag_entry(s: f64, x: f64, y: f64) -> f64 {
    if x > s && y > s {
        eval_unchecked(x + y).value
    } else {
        0.0
    }
}

/// Builds the kernel for `spec`.
pub fn kernel_entries(spec: KernelSpec) -> Result<Airy1Kernel> {
    KernelSpec::new(spec.u, spec.s1, spec.s2)?;
    Ok(Airy1Kernel { spec })
}

// ---------------------------------------------------------------------------
// Discretisation

/// Node placement for one threshold block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuleConfig {
    /// Gauss–Legendre nodes per panel.
    pub nodes_per_panel: usize,
    /// Widest panel.
    pub max_panel: f64,
}

impl Default for RuleConfig {
    fn default() -> Self {
        RuleConfig {
            nodes_per_panel: 12,
            max_panel: 2.0,
        }
    }
}

impl RuleConfig {
    /// The same panels with half the nodes, used for error estimates.
    pub fn halved(self) -> Self {
        RuleConfig {
            nodes_per_panel: (self.nodes_per_panel / 2).max(1),
            ..self
        }
    }
}

/// Truncation length: `Ai(x + y)` is below ~1e-13 once `x + y ≥ 14`.
pub fn truncation_length(s: f64) -> f64 {
    (14.0 - 2.0 * s).clamp(8.0, 40.0)
}

/// Quadrature rule on `(s, s + L(s))`, graded towards `s` on the scale
/// `1/u` of the off-diagonal decay.
pub fn block_rule(s: f64, u: f64, cfg: RuleConfig) -> Result<QuadratureRule> {
    let first = (1.0 / u).clamp(0.125, cfg.max_panel);
    let bp = graded_breakpoints(s, truncation_length(s), first, cfg.max_panel);
    composite_gauss_legendre(&bp, cfg.nodes_per_panel)
}

/// Discretised `K_{ii}` on one threshold together with its resolvent.
#[derive(Debug, Clone)]
pub struct ThresholdBlock {
    pub s: f64,
    pub rule: QuadratureRule,
    /// `det(1 - K_{ii})`.
    pub f: f64,
    /// `Q = K (1 - K)^{-1}`, so that `(1 - K)^{-1} = 1 + Q`.
    q: DMatrix<f64>,
}

impl ThresholdBlock {
    pub fn new(s: f64, u: f64, cfg: RuleConfig) -> Result<Self> {
        let rule = block_rule(s, u, cfg)?;
        let k = weighted_matrix(|x, y| diag_entry(s, x, y), &rule, &rule)?;
        let n = rule.len();
        let lu = (DMatrix::<f64>::identity(n, n) - &k).lu();
        let f = lu.determinant();
        let q = lu
            .solve(&k)
            .ok_or_else(|| Error::Solver(format!("1 - K is singular at s = {s}")))?;
        Ok(ThresholdBlock { s, rule, f, q })
    }
}

/// `1 + E` and related quantities built from two threshold blocks.
struct OffDiagonal {
    /// Log scale `P` with `K₂₁ = e^P S`.
    p: f64,
    /// Weighted `K₁₂`, `n₁ × n₂`.
    a: DMatrix<f64>,
    /// Weighted `e^{-P} K₂₁`, `n₂ × n₁`.
    s: DMatrix<f64>,
}

impl OffDiagonal {
    fn new(u: f64, b1: &ThresholdBlock, b2: &ThresholdBlock) -> Result<Self> {
        // The resolvents are built from the plain diagonal blocks, so the
        // off-diagonal entries must be unconjugated too.
        let kernel = Airy1Kernel {
            spec: KernelSpec::new(u, b1.s, b2.s)?.with_conjugation(false),
        };
        let p = kernel.k21_scale();
        let a = weighted_matrix(|x, y| kernel.k12(x, y), &b1.rule, &b2.rule)?;
        let s = weighted_matrix(
            |x, y| signed_exp({
                let (sg, l) = kernel.log_k21(x, y);
                (sg, l - p)
            }),
            &b2.rule,
            &b1.rule,
        )?;
        Ok(OffDiagonal { p, a, s })
    }

    /// `e^{-P} K̃ = (1 + Q₁) A (1 + Q₂) S`.
    fn tilde(&self, b1: &ThresholdBlock, b2: &ThresholdBlock) -> DMatrix<f64> {
        let ar = &self.a + &self.a * &b2.q;
        let ars = ar * &self.s;
        &ars + &b1.q * &ars
    }
}

/// `(1 - det(1 - e^P X))` style quantities: returns `det(1 - e^P X) - 1`.
fn det_minus_one_scaled(p: f64, x: &DMatrix<f64>) -> Result<SignedLog> {
    let n = x.nrows();
    let norm = x.norm();
    if norm == 0.0 {
        return Ok(SignedLog::ZERO);
    }
    let log_rho = p + norm.ln();
    if log_rho < (1e-2f64).ln() {
        // log det(1 - e^P X) = -e^P Σ_k e^{(k-1)P} tr(X^k) / k
        let terms = ((1e-17f64).ln() / log_rho).ceil().max(1.0) as usize;
        let mut t = x.trace();
        if terms >= 2 {
            let mut tr2 = 0.0;
            for i in 0..n {
                for j in 0..n {
                    tr2 += x[(i, j)] * x[(j, i)];
                }
            }
            t += p.exp() * tr2 / 2.0;
        }
        if terms >= 3 {
            let mut power = x * x;
            for k in 3..=terms {
                power = &power * x;
                t += ((k as f64 - 1.0) * p).exp() * power.trace() / k as f64;
            }
        }
        let log_abs = p + t.abs().ln();
        if t == 0.0 {
            return Ok(SignedLog::ZERO);
        }
        let sign = if t > 0.0 { -1 } else { 1 };
        if log_abs < -300.0 {
            return Ok(SignedLog::new(sign, log_abs));
        }
        let arg = f64::from(sign) * log_abs.exp();
        return Ok(SignedLog::from_f64(arg.exp_m1()));
    }
    if p > 700.0 {
        return Err(Error::Solver(format!("scale e^{p} overflows")));
    }
    let scaled = x * p.exp();
    let det = (DMatrix::<f64>::identity(n, n) - scaled).lu().determinant();
    Ok(SignedLog::from_f64(det - 1.0))
}

/// Excess `E` from two prepared threshold blocks via
/// `1 + E = det(1 - (1-K₁₁)^{-1} K₁₂ (1-K₂₂)^{-1} K₂₁)`.
pub fn factorized_excess_blocks(
    u: f64,
    b1: &ThresholdBlock,
    b2: &ThresholdBlock,
) -> Result<SignedLog> {
    let off = OffDiagonal::new(u, b1, b2)?;
    det_minus_one_scaled(off.p, &off.tilde(b1, b2))
}

// ---------------------------------------------------------------------------
// Marginals and the joint CDF

/// One-point distribution with bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Marginal {
    pub value: f64,
    /// `|f(n) - f(n/2)|` between full and halved panels.
    pub err: f64,
    /// Set when `s < -12` and the value was clamped to 0.
    pub clamped: bool,
}

fn marginal_on(s: f64, cfg: RuleConfig) -> Result<f64> {
    Ok(ThresholdBlock::new(s, 1.0, cfg)?.f)
}

/// `f(s) = det(1 - Ai(x + y))` on `(s, ∞)`.
pub fn marginal_f(s: f64) -> Result<f64> {
    Ok(marginal_f_detailed(s)?.value)
}

pub fn marginal_f_detailed(s: f64) -> Result<Marginal> {
    if s.is_nan() {
        return Err(Error::Domain("threshold is NaN".into()));
    }
    if s < -S_MAX {
        return Ok(Marginal {
            value: 0.0,
            err: 0.0,
            clamped: true,
        });
    }
    if s == f64::INFINITY {
        return Ok(Marginal {
            value: 1.0,
            err: 0.0,
            clamped: false,
        });
    }
    // Kernel entries below 1e-300 for s > 40; the determinant is 1.
    let s_eval = s.min(40.0);
    let cfg = RuleConfig::default();
    let fine = marginal_on(s_eval, cfg)?;
    let coarse = marginal_on(s_eval, cfg.halved())?;
    Ok(Marginal {
        value: fine.clamp(0.0, 1.0),
        err: (fine - coarse).abs(),
        clamped: false,
    })
}

/// Joint CDF and excess at one `(u, s₁, s₂)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointCdfResult {
    /// `F(u; s₁, s₂)`.
    pub f_joint: f64,
    pub f1: f64,
    pub f2: f64,
    pub excess_e: f64,
    /// Error proxy for `excess_e`.
    pub err: f64,
    /// False when `f₁ f₂ < 1e-13`.
    pub reliable: bool,
}

fn joint_on(spec: KernelSpec, cfg: RuleConfig) -> Result<(f64, f64, f64, usize)> {
    // Plain entries: the conjugated K₂₂ carries e^{u(x-y)} and ruins the LU
    // pivoting for large u, while the plain ones are bounded in log space.
    let kernel = kernel_entries(spec.with_conjugation(false))?;
    let r1 = block_rule(spec.s1, spec.u, cfg)?;
    let r2 = block_rule(spec.s2, spec.u, cfg)?;
    let m = crate::quad::block_matrix(&kernel, &r1, &r2)
        .map_err(|e| advise_conjugation(e, spec))?;
    let n1 = r1.len();
    let n2 = r2.len();
    let det = |m: DMatrix<f64>| {
        let n = m.nrows();
        (DMatrix::<f64>::identity(n, n) - m).lu().determinant()
    };
    let f1 = det(m.view((0, 0), (n1, n1)).into_owned());
    let f2 = det(m.view((n1, n1), (n2, n2)).into_owned());
    let big = det(m);
    Ok((big, f1, f2, n1 + n2))
}

fn advise_conjugation(e: Error, spec: KernelSpec) -> Error {
    match e {
        Error::Evaluation { x, y, reason } if !spec.conjugated => Error::Evaluation {
            x,
            y,
            reason: format!("{reason}; use the conjugated kernel for u = {}", spec.u),
        },
        other => other,
    }
}

/// `F(u; s₁, s₂) = det(1 - K)` with marginals and excess.
///
/// `err` is the change in `E` between full and halved panels plus a
/// rounding floor proportional to the matrix size.
pub fn joint_f(spec: KernelSpec) -> Result<JointCdfResult> {
    spec.check_engine_range()?;
    let cfg = RuleConfig::default();
    let (big, f1, f2, n) = joint_on(spec, cfg)?;
    let (big_c, f1_c, f2_c, _) = joint_on(spec, cfg.halved())?;
    let excess = big / (f1 * f2) - 1.0;
    let excess_c = big_c / (f1_c * f2_c) - 1.0;
    let floor = 3.0 * n as f64 * f64::EPSILON * (1.0 + excess.abs()) / (f1 * f2).min(1.0);
    Ok(JointCdfResult {
        f_joint: big.clamp(0.0, 1.0),
        f1: f1.clamp(0.0, 1.0),
        f2: f2.clamp(0.0, 1.0),
        excess_e: excess,
        err: (excess - excess_c).abs() + floor,
        reliable: f1 * f2 >= MARGINAL_PRODUCT_FLOOR,
    })
}

// ---------------------------------------------------------------------------
// Factorised excess

/// Excess from the factorisation with a relative error proxy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorizedExcess {
    pub excess: SignedLog,
    /// Relative change between full and halved panels plus a rounding floor.
    pub rel_err: f64,
}

impl FactorizedExcess {
    pub fn value(&self) -> f64 {
        self.excess.to_f64()
    }

    pub fn err(&self) -> f64 {
        self.rel_err * self.value().abs()
    }
}

fn factorized_on(spec: KernelSpec, cfg: RuleConfig) -> Result<(SignedLog, usize)> {
    let b1 = ThresholdBlock::new(spec.s1, spec.u, cfg)?;
    let b2 = ThresholdBlock::new(spec.s2, spec.u, cfg)?;
    let e = factorized_excess_blocks(spec.u, &b1, &b2)?;
    Ok((e, b1.rule.len() + b2.rule.len()))
}

/// Relative distance between two signed-log numbers, capped at 2.
pub fn relative_gap(a: SignedLog, b: SignedLog) -> f64 {
    if a.is_zero() && b.is_zero() {
        return 0.0;
    }
    if a.is_zero() || b.is_zero() || a.sign != b.sign {
        return 2.0;
    }
    a.log_ratio(b).exp_m1().abs().min(2.0)
}

/// `E` via `1 + E = det(1 - K̃)`, `K̃ = (1-K₁₁)^{-1} K₁₂ (1-K₂₂)^{-1} K₂₁`.
pub fn excess_via_factorization(spec: KernelSpec) -> Result<f64> {
    Ok(excess_factorized(spec)?.value())
}

/// Log-scaled version of [`excess_via_factorization`], usable where `E`
/// underflows.
pub fn excess_factorized(spec: KernelSpec) -> Result<FactorizedExcess> {
    spec.check_engine_range()?;
    let cfg = RuleConfig::default();
    let (fine, n) = factorized_on(spec, cfg)?;
    let (coarse, _) = factorized_on(spec, cfg.halved())?;
    Ok(FactorizedExcess {
        excess: fine,
        rel_err: relative_gap(fine, coarse) + 4.0 * n as f64 * f64::EPSILON,
    })
}

// ---------------------------------------------------------------------------
// Trace and asymptotics

/// `Tr(K₁₂ K₂₁) = ∬ K₁₂(x, y) K₂₁(y, x) dx dy`, log-scaled.
pub fn trace_k12k21(spec: KernelSpec) -> Result<SignedLog> {
    trace_with(spec, RuleConfig::default())
}

pub fn trace_with(spec: KernelSpec, cfg: RuleConfig) -> Result<SignedLog> {
    spec.check_engine_range()?;
    // The trace is conjugation invariant; always use the tamed entries.
    let kernel = kernel_entries(spec.with_conjugation(true))?;
    let p = kernel.k21_scale();
    let r1 = block_rule(spec.s1, spec.u, cfg)?;
    let r2 = block_rule(spec.s2, spec.u, cfg)?;
    let t = kernel_trace_product(
        |x, y| kernel.k12(x, y),
        |y, x| {
            let (sg, l) = kernel.log_k21(y, x);
            signed_exp((sg, l - p))
        },
        &r1,
        &r2,
    )?;
    Ok(SignedLog::from_f64(t).scale_exp(p))
}

/// Leading-order trace with a validity flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceAsymptotic {
    /// `Tr(K₁₂ K₂₁)` at leading order (negative for `s₁ s₂ > 0`).
    pub value: SignedLog,
    /// False outside `0 ≤ s₁, s₂ ≤ √u`.
    pub in_window: bool,
}

/// `-(16π u⁴)^{-1} e^{-2(s₁+s₂)u - (4/3)u³} s₁ s₂`.
pub fn trace_asymptotic(u: f64, s1: f64, s2: f64) -> Result<TraceAsymptotic> {
    if !(u > 0.0) || !u.is_finite() || !s1.is_finite() || !s2.is_finite() {
        return Err(Error::Domain(format!(
            "need finite u > 0 and thresholds, got ({u}, {s1}, {s2})"
        )));
    }
    let root = u.sqrt();
    let in_window = (0.0..=root).contains(&s1) && (0.0..=root).contains(&s2);
    let prod = s1 * s2;
    let value = if prod == 0.0 {
        SignedLog::ZERO
    } else {
        let log_abs = prod.abs().ln()
            - (16.0 * PI).ln()
            - 4.0 * u.ln()
            - 2.0 * (s1 + s2) * u
            - 4.0 / 3.0 * u * u * u;
        SignedLog::new(if prod > 0.0 { -1 } else { 1 }, log_abs)
    };
    Ok(TraceAsymptotic { value, in_window })
}

// ---------------------------------------------------------------------------
// Remainders

/// `tr(X Y)` without forming the product.
fn trace_of_product(x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    let mut t = 0.0;
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            t += x[(i, j)] * y[(j, i)];
        }
    }
    t
}

/// `ln` of `(C₂ e^{-min(s₁,s₂)} / u²) e^{-(4/3)u³ - 2(s₁+s₂)u}`.
pub fn remainder_budget_r1(u: f64, s1: f64, s2: f64, c2: f64) -> Result<f64> {
    if !(s1 >= 0.0 && s2 >= 0.0) {
        return Err(Error::Domain(format!(
            "R1 budget needs s1, s2 >= 0, got ({s1}, {s2})"
        )));
    }
    if !(u >= 0.5 && u >= (s1 + s2).sqrt()) || !u.is_finite() {
        return Err(Error::Domain(format!(
            "R1 budget needs u >= max(1/2, sqrt(s1 + s2)), got u = {u}"
        )));
    }
    if !(c2 > 0.0) {
        return Err(Error::Argument(format!("C2 must be positive, got {c2}")));
    }
    Ok(c2.ln() - s1.min(s2) - 2.0 * u.ln() - 4.0 / 3.0 * u * u * u - 2.0 * (s1 + s2) * u)
}

/// `ln` of `(C / u⁶) e^{-4(s₁+s₂)u - (8/3)u³}`.
pub fn remainder_budget_r2(u: f64, s1: f64, s2: f64, c: f64) -> Result<f64> {
    if !(u > 0.0) || !u.is_finite() || !s1.is_finite() || !s2.is_finite() {
        return Err(Error::Domain(format!(
            "R2 budget needs finite u > 0, got ({u}, {s1}, {s2})"
        )));
    }
    if !(c > 0.0) {
        return Err(Error::Argument(format!("C must be positive, got {c}")));
    }
    Ok(c.ln() - 6.0 * u.ln() - 4.0 * (s1 + s2) * u - 8.0 / 3.0 * u * u * u)
}

/// Measured remainders at one point, both log-scaled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasuredRemainders {
    /// `det(1 - K̃) - det(1 - K₁₂K₂₁)`.
    pub r1: SignedLog,
    /// `det(1 - K₁₂K₂₁) - 1 + Tr(K₁₂K₂₁)`, from the Fredholm series to order 6.
    pub r2: SignedLog,
    pub trace: SignedLog,
}

/// Measures `R₁` and `R₂` directly on the Nyström grid.
pub fn measure_remainders(spec: KernelSpec) -> Result<MeasuredRemainders> {
    spec.check_engine_range()?;
    let cfg = RuleConfig::default();
    let b1 = ThresholdBlock::new(spec.s1, spec.u, cfg)?;
    let b2 = ThresholdBlock::new(spec.s2, spec.u, cfg)?;
    let off = OffDiagonal::new(spec.u, &b1, &b2)?;
    let p = off.p;
    let b = &off.a * &off.s;
    let aq2 = &off.a * &b2.q;
    let ar = &off.a + &aq2;
    // K̃' - B = (Q₁ A (1 + Q₂) + A Q₂) S, formed directly to avoid cancellation.
    let first_diff = trace_of_product(&(&b1.q * &ar + &aq2), &off.s);
    let tilde = {
        let ars = ar * &off.s;
        &ars + &b1.q * &ars
    };

    // Power traces of B and of K̃ (scaled by e^{-kP}).
    let order = 6;
    let mut pb = Vec::with_capacity(order);
    let mut pt = Vec::with_capacity(order);
    let mut bk = b.clone();
    let mut tk = tilde.clone();
    for _ in 0..order {
        pb.push(bk.trace());
        pt.push(tk.trace());
        bk = &bk * &b;
        tk = &tk * &tilde;
    }

    // R₂ = Σ_{n=2}^{6} (-1)^n e_n, e_n = e^{nP} ẽ_n by Newton's identities.
    let mut e = vec![1.0];
    for n in 1..=order {
        let mut acc = 0.0;
        for i in 1..=n {
            let sign = if i % 2 == 1 { 1.0 } else { -1.0 };
            acc += sign * e[n - i] * pb[i - 1];
        }
        e.push(acc / n as f64);
    }
    let ep = p.exp();
    let mut r2_scaled = 0.0;
    for n in (2..=order).rev() {
        let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
        r2_scaled = r2_scaled * ep + sign * e[n];
    }
    // Horner above accumulates Σ (-1)^n ẽ_n e^{(n-2)P}, evaluated from the top.
    let r2 = SignedLog::from_f64(r2_scaled).scale_exp(2.0 * p);

    // R₁ = det(1 - e^P K̃') - det(1 - e^P B)
    //    = e^{ℓ_B} expm1(ℓ_A - ℓ_B), ℓ_X = -Σ_k e^{kP} tr(X^k)/k.
    let mut d = 0.0;
    let mut l_b = 0.0;
    for k in (1..=order).rev() {
        let kf = k as f64;
        let diff = if k == 1 { first_diff } else { pt[k - 1] - pb[k - 1] };
        d = d * ep - diff / kf;
        l_b = l_b * ep - pb[k - 1] / kf;
    }
    let l_b = l_b * ep;
    // d·e^P = ℓ_A - ℓ_B
    let r1_log = p + d.abs().ln() + l_b;
    let x = d * ep;
    let correction = if x.abs() > 1e-8 { x.exp_m1() / x } else { 1.0 + x / 2.0 };
    let r1 = SignedLog::with_sign_of(d, r1_log + correction.ln());

    let trace = SignedLog::from_f64(pb[0]).scale_exp(p);
    Ok(MeasuredRemainders { r1, r2, trace })
}

/// Calibrated budget constants and the grid they were fitted on.
#[derive(Debug, Clone, PartialEq)]
pub struct RemainderCalibration {
    pub c2: f64,
    pub c: f64,
    pub safety: f64,
    pub points: usize,
}

/// Fits `C₂` and `C` as `safety × max(measured / shape)` over
/// `u ∈ [1, 4]`, `s ∈ [0, 2]²` (restricted to the budgets' preconditions).
pub fn calibrate_remainder_constants(safety: f64) -> Result<RemainderCalibration> {
    let mut c2_log = f64::NEG_INFINITY;
    let mut c_log = f64::NEG_INFINITY;
    let mut points = 0;
    for ui in 0..=6 {
        let u = 1.0 + 0.5 * ui as f64;
        for i in 0..=4 {
            for j in 0..=4 {
                let (s1, s2) = (0.5 * i as f64, 0.5 * j as f64);
                if u < (s1 + s2).sqrt() {
                    continue;
                }
                let m = measure_remainders(KernelSpec::new(u, s1, s2)?)?;
                if !m.r1.is_zero() {
                    c2_log = c2_log.max(m.r1.log_abs - remainder_budget_r1(u, s1, s2, 1.0)?);
                }
                if !m.r2.is_zero() {
                    c_log = c_log.max(m.r2.log_abs - remainder_budget_r2(u, s1, s2, 1.0)?);
                }
                points += 1;
            }
        }
    }
    Ok(RemainderCalibration {
        c2: safety * c2_log.exp(),
        c: safety * c_log.exp(),
        safety,
        points,
    })
}
