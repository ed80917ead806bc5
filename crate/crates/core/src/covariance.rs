//! Two-point covariance of the Airy₁ process through Hoeffding's identity
//! `Cov = ∬ f(s₁) f(s₂) E(u; s₁, s₂) ds₁ ds₂`.

use crate::airy1kernel::{factorized_excess_blocks, RuleConfig, ThresholdBlock, U_MAX, U_MIN};
use crate::error::{Error, Result};
use crate::logspace::SignedLog;
use crate::quad::gauss_legendre;
use serde::{Deserialize, Serialize};

/// Default integration window on both axes.
pub const DEFAULT_WINDOW: (f64, f64) = (-10.0, 6.0);
/// Default Gauss–Legendre nodes per axis.
pub const DEFAULT_GRID_N: usize = 32;
/// Below this threshold `f(s) < 1e-21` and the determinants carry no
/// relative precision; the strip below it is budgeted, not integrated.
pub const RELIABLE_LOWER: f64 = -5.0;
/// Above this `u` the result is labelled as the asymptotic regime.
pub const REGIME_SWITCH_U: f64 = 3.0;
/// A result is flagged when the halving gap exceeds this fraction of it.
pub const RELIABILITY_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Determinant,
    Asymptotic,
}

impl Regime {
    pub fn for_u(u: f64) -> Self {
        if u <= REGIME_SWITCH_U {
            Regime::Determinant
        } else {
            Regime::Asymptotic
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Determinant => "determinant",
            Regime::Asymptotic => "asymptotic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceEstimate {
    pub u: f64,
    pub cov: SignedLog,
    /// Integration window `(α, β)` on both axes as requested.
    pub window: (f64, f64),
    /// Estimated mass outside the integrated square.
    pub tail_budget: f64,
    /// `|I(n) - I(n/2)|` for the node-halved grid (halved kernel rule too).
    pub quad_err: f64,
    pub regime: Regime,
    /// False when the value is not positive or the halving gap exceeds 10%
    /// of it.
    pub reliable: bool,
}

impl CovarianceEstimate {
    pub fn value(&self) -> f64 {
        self.cov.to_f64()
    }

    pub fn log_cov(&self) -> f64 {
        self.cov.log_abs
    }

    /// `quad_err + tail_budget`.
    pub fn total_err(&self) -> f64 {
        self.quad_err + self.tail_budget
    }
}

fn check_u(u: f64) -> Result<()> {
    if !(U_MIN..=U_MAX).contains(&u) {
        return Err(Error::Domain(format!(
            "u = {u} outside the supported range [{U_MIN}, {U_MAX}]"
        )));
    }
    Ok(())
}

fn check_window(window: (f64, f64)) -> Result<()> {
    let (lo, hi) = window;
    if !(lo < hi) || lo < -12.0 || hi > 12.0 {
        return Err(Error::Argument(format!(
            "window [{lo}, {hi}] must satisfy -12 <= lo < hi <= 12"
        )));
    }
    Ok(())
}

/// Source of the Hoeffding integrand `f(s₁) f(s₂) E(s₁, s₂)`.
pub trait HoeffdingIntegrand {
    type Point;
    /// Per-threshold precomputation (marginal, resolvent, ...).
    fn prepare(&self, s: f64) -> Result<Self::Point>;
    fn marginal(&self, p: &Self::Point) -> f64;
    fn excess(&self, p1: &Self::Point, p2: &Self::Point) -> Result<SignedLog>;
}

/// The Airy₁ integrand at separation `u`.
pub struct Airy1Integrand {
    pub u: f64,
    pub cfg: RuleConfig,
}

impl HoeffdingIntegrand for Airy1Integrand {
    type Point = ThresholdBlock;

    fn prepare(&self, s: f64) -> Result<ThresholdBlock> {
        ThresholdBlock::new(s, self.u, self.cfg)
    }

    fn marginal(&self, p: &ThresholdBlock) -> f64 {
        p.f.clamp(0.0, 1.0)
    }

    fn excess(&self, p1: &ThresholdBlock, p2: &ThresholdBlock) -> Result<SignedLog> {
        factorized_excess_blocks(self.u, p1, p2)
    }
}

/// Tensor Gauss–Legendre value of `∬ f f E` on `[lo, hi]²`.
fn tensor_integral<I: HoeffdingIntegrand>(
    integrand: &I,
    lo: f64,
    hi: f64,
    n: usize,
) -> Result<SignedLog> {
    let rule = gauss_legendre(n, lo, hi)?;
    let points = rule
        .nodes
        .iter()
        .map(|&s| integrand.prepare(s))
        .collect::<Result<Vec<_>>>()?;
    let mut terms = Vec::with_capacity(n * n);
    for (i, p1) in points.iter().enumerate() {
        let f1 = integrand.marginal(p1);
        for (j, p2) in points.iter().enumerate() {
            let f2 = integrand.marginal(p2);
            let weight = rule.weights[i] * rule.weights[j] * f1 * f2;
            if weight == 0.0 {
                continue;
            }
            terms.push(integrand.excess(p1, p2)? * SignedLog::from_f64(weight));
        }
    }
    Ok(SignedLog::sum(terms))
}

/// Estimated integral of `|f f E|` over the half-strip beyond one edge,
/// assuming decay at least like `e^{-rate·t}` away from the edge.
fn edge_estimate<I: HoeffdingIntegrand>(
    integrand: &I,
    edge: f64,
    lo: f64,
    hi: f64,
    n: usize,
    rate: f64,
) -> Result<SignedLog> {
    let rule = gauss_legendre(n, lo, hi)?;
    let pe = integrand.prepare(edge)?;
    let fe = integrand.marginal(&pe);
    let mut terms = Vec::with_capacity(2 * n);
    for (&s, &w) in rule.nodes.iter().zip(&rule.weights) {
        let p = integrand.prepare(s)?;
        let weight = w * fe * integrand.marginal(&p);
        if weight == 0.0 {
            continue;
        }
        // Both orientations of the strip.
        terms.push((integrand.excess(&pe, &p)? * SignedLog::from_f64(weight)).abs());
        terms.push((integrand.excess(&p, &pe)? * SignedLog::from_f64(weight)).abs());
    }
    Ok(SignedLog::sum(terms).scale_exp(-rate.ln()))
}

/// Generic Hoeffding integration with error proxies.
///
/// `coarse` is evaluated on the node-halved grid; passing a cheaper
/// discretisation of the same integrand folds its error into `quad_err`.
pub fn hoeffding_with<I: HoeffdingIntegrand>(
    integrand: &I,
    coarse: &I,
    u: f64,
    window: (f64, f64),
    grid_n: usize,
    decay_rates: (f64, f64),
) -> Result<CovarianceEstimate> {
    check_window(window)?;
    if grid_n < 16 {
        return Err(Error::Argument(format!("grid_n must be >= 16, got {grid_n}")));
    }
    let (lo, hi) = window;
    let value = tensor_integral(integrand, lo, hi, grid_n)?;
    let coarse = tensor_integral(coarse, lo, hi, grid_n / 2)?;
    let quad_err = (value + (-coarse)).abs().to_f64();
    let edge_n = (grid_n / 2).max(8);
    let (lower_rate, upper_rate) = decay_rates;
    let lower = edge_estimate(integrand, lo, lo, hi, edge_n, lower_rate)?;
    let upper = edge_estimate(integrand, hi, lo, hi, edge_n, upper_rate)?;
    let tail_budget = (lower + upper).to_f64();
    // The integrand is nonnegative for associated pairs, so a negative sum
    // is rounding noise.
    let reliable = value.sign == 1 && quad_err <= RELIABILITY_FRACTION * value.to_f64();
    Ok(CovarianceEstimate {
        u,
        cov: value,
        window,
        tail_budget,
        quad_err,
        regime: Regime::for_u(u),
        reliable,
    })
}

/// Decay rates of the integrand beyond the lower and upper window edges,
/// halved for safety: `f` falls like `e^{-|s|³/3}` on the left while `E`
/// grows at most like `e^{2u|s|}`; `E` falls at least like `e^{-2us}` on the
/// right.
fn airy_decay_rates(u: f64, lo: f64) -> (f64, f64) {
    let lower = ((lo * lo - 2.0 * u) / 2.0).max(0.5);
    (lower, u.max(0.5))
}

fn airy_integrands(u: f64) -> (Airy1Integrand, Airy1Integrand) {
    let cfg = RuleConfig::default();
    (
        Airy1Integrand { u, cfg },
        Airy1Integrand {
            u,
            cfg: cfg.halved(),
        },
    )
}

/// Integration window actually used: the requested one clipped below at
/// [`RELIABLE_LOWER`].
pub fn effective_window(window: (f64, f64)) -> (f64, f64) {
    (window.0.max(RELIABLE_LOWER), window.1)
}

/// `Cov(𝒜₁(0), 𝒜₁(u))` by tensor Gauss–Legendre over `s_window²`.
///
/// The excess comes from the log-scaled factorisation, so the same path
/// covers both regimes; above `u = 3` it is the first term of the trace
/// series with the resolvent correction kept exactly.
pub fn hoeffding_cov(u: f64, s_window: (f64, f64), grid_n: usize) -> Result<CovarianceEstimate> {
    check_u(u)?;
    check_window(s_window)?;
    let (fine, coarse) = airy_integrands(u);
    let used = effective_window(s_window);
    let mut est = hoeffding_with(&fine, &coarse, u, used, grid_n, airy_decay_rates(u, used.0))?;
    est.window = s_window;
    Ok(est)
}

/// `Cov` on the default window and grid.
pub fn covariance(u: f64) -> Result<CovarianceEstimate> {
    hoeffding_cov(u, DEFAULT_WINDOW, DEFAULT_GRID_N)
}

/// The compact window `[α, α + 1]`, `α = 3 ln u`.
pub fn lower_window(u: f64) -> (f64, f64) {
    let alpha = 3.0 * u.ln();
    (alpha, alpha + 1.0)
}

/// Certified lower bound: the windowed integral minus its quadrature error.
pub fn lower_window_cov(u: f64) -> Result<CovarianceEstimate> {
    if !(u >= 1.1) {
        return Err(Error::Domain(format!("lower window needs u >= 1.1, got {u}")));
    }
    check_u(u)?;
    let window = lower_window(u);
    let (fine, coarse) = airy_integrands(u);
    let est = hoeffding_with(&fine, &coarse, u, window, 16, airy_decay_rates(u, window.0))?;
    let bound = est.cov + SignedLog::new(-1, est.quad_err.ln());
    Ok(CovarianceEstimate {
        cov: bound,
        // Everything outside the window is discarded on purpose.
        tail_budget: 0.0,
        ..est
    })
}

/// Least-squares fit of `ln(-ln Cov) = δ ln u + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub delta: f64,
    pub intercept: f64,
    pub residuals: Vec<f64>,
}

/// Fits `δ` from `(u, ln Cov)` pairs.
pub fn fit_decay_exponent(us: &[f64], log_covs: &[f64]) -> Result<DecayFit> {
    if us.len() != log_covs.len() || us.len() < 2 {
        return Err(Error::Argument("need >= 2 matching (u, ln cov) pairs".into()));
    }
    let bad: Vec<f64> = us
        .iter()
        .zip(log_covs)
        .filter(|(u, l)| !(**u > 0.0) || !(**l < 0.0) || !l.is_finite())
        .map(|(u, _)| *u)
        .collect();
    if !bad.is_empty() {
        return Err(Error::Unreliable(format!(
            "need u > 0 and 0 < cov < 1; offending u: {bad:?}"
        )));
    }
    let xs: Vec<f64> = us.iter().map(|u| u.ln()).collect();
    let ys: Vec<f64> = log_covs.iter().map(|l| (-l).ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Argument("u values must not all coincide".into()));
    }
    let delta = sxy / sxx;
    let intercept = my - delta * mx;
    let residuals = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| y - (intercept + delta * x))
        .collect();
    Ok(DecayFit {
        delta,
        intercept,
        residuals,
    })
}

/// Computes `Cov` at each `u` (default window) and fits `δ`.
pub fn decay_exponent_fit(u_values: &[f64], grid_n: usize) -> Result<(DecayFit, Vec<CovarianceEstimate>)> {
    if u_values.len() < 4 {
        return Err(Error::Argument(format!(
            "need >= 4 values of u, got {}",
            u_values.len()
        )));
    }
    if let Some(u) = u_values.iter().find(|u| !(1.2..=2.6).contains(*u)) {
        return Err(Error::Domain(format!("u = {u} outside [1.2, 2.6]")));
    }
    let ests = u_values
        .iter()
        .map(|&u| hoeffding_cov(u, DEFAULT_WINDOW, grid_n))
        .collect::<Result<Vec<_>>>()?;
    fit_from_estimates(&ests).map(|fit| (fit, ests))
}

/// Fits `δ` from already computed estimates, refusing unreliable ones.
pub fn fit_from_estimates(ests: &[CovarianceEstimate]) -> Result<DecayFit> {
    let bad: Vec<f64> = ests
        .iter()
        .filter(|e| !e.reliable || e.cov.sign != 1)
        .map(|e| e.u)
        .collect();
    if !bad.is_empty() {
        return Err(Error::Unreliable(format!("unreliable covariance at u = {bad:?}")));
    }
    let us: Vec<f64> = ests.iter().map(|e| e.u).collect();
    let logs: Vec<f64> = ests.iter().map(|e| e.log_cov()).collect();
    fit_decay_exponent(&us, &logs)
}

/// `e^{-c u ln u - (4/3)u³} ≤ cov ≤ e^{c′u² - (4/3)u³}`, compared in log space.
pub fn bound_envelope_check(u: f64, log_cov: f64, c: f64, c_prime: f64) -> Result<bool> {
    if !(u > 1.0) || !u.is_finite() {
        return Err(Error::Domain(format!("envelope check needs u > 1, got {u}")));
    }
    let lead = -4.0 / 3.0 * u * u * u;
    let lower = lead - c * u * u.ln();
    let upper = lead + c_prime * u * u;
    Ok(lower <= log_cov && log_cov <= upper)
}

/// Smallest `(c, c′) ≥ 0` for which every `(u, ln cov)` passes
/// [`bound_envelope_check`].
pub fn minimal_envelope_constants(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    let mut c: f64 = 0.0;
    let mut c_prime: f64 = 0.0;
    for &(u, log_cov) in points {
        if !(u > 1.0) {
            return Err(Error::Domain(format!("envelope fit needs u > 1, got {u}")));
        }
        let lead = -4.0 / 3.0 * u * u * u;
        c = c.max((lead - log_cov) / (u * u.ln()));
        c_prime = c_prime.max((log_cov - lead) / (u * u));
    }
    Ok((c, c_prime))
}
