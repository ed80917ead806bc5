//! Gauss–Legendre rules and a Nyström engine for Fredholm determinants.
//!
//! Every discretised operator uses the symmetric weighting
//! `M_ij = sqrt(w_i) K(x_i, y_j) sqrt(w_j)`, so matrix products of
//! discretised kernels discretise operator composition and symmetric kernels
//! give symmetric matrices.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use std::f64::consts::PI;

/// Nodes and positive weights on a finite interval.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    pub fn sqrt_weights(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w.sqrt()).collect()
    }
}

/// Standard `n`-point Gauss–Legendre nodes and weights on `[-1, 1]`,
/// ascending, by Newton iteration on `P_n`.
fn reference_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        for _ in 0..100 {
            let (p, pm1) = legendre_pair(n, z);
            let dz = p / (nf * (z * p - pm1) / (z * z - 1.0));
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (p, pm1) = legendre_pair(n, z);
        let dp = nf * (z * p - pm1) / (z * z - 1.0);
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// `(P_n(z), P_{n-1}(z))` by the three-term recurrence.
fn legendre_pair(n: usize, z: f64) -> (f64, f64) {
    let mut p = 1.0;
    let mut pm1 = 0.0;
    for j in 1..=n {
        let jf = j as f64;
        let next = ((2.0 * jf - 1.0) * z * p - (jf - 1.0) * pm1) / jf;
        pm1 = p;
        p = next;
    }
    (p, pm1)
}

/// `n`-point Gauss–Legendre rule on `[lower, upper]`.
pub fn gauss_legendre(n: usize, lower: f64, upper: f64) -> Result<QuadratureRule> {
    if n == 0 {
        return Err(Error::Argument("Gauss-Legendre rule needs n >= 1".into()));
    }
    if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
        return Err(Error::Argument(format!(
            "interval [{lower}, {upper}] must be finite with lower < upper"
        )));
    }
    let (t, w) = reference_rule(n);
    let half = 0.5 * (upper - lower);
    let mid = 0.5 * (upper + lower);
    Ok(QuadratureRule {
        nodes: t.iter().map(|t| mid + half * t).collect(),
        weights: w.iter().map(|w| half * w).collect(),
        lower,
        upper,
    })
}

/// Composite Gauss–Legendre rule with `n` nodes on every panel between
/// consecutive `breakpoints` (which must be strictly increasing).
pub fn composite_gauss_legendre(breakpoints: &[f64], n: usize) -> Result<QuadratureRule> {
    if breakpoints.len() < 2 {
        return Err(Error::Argument("composite rule needs >= 2 breakpoints".into()));
    }
    let mut nodes = Vec::with_capacity(n * (breakpoints.len() - 1));
    let mut weights = Vec::with_capacity(nodes.capacity());
    for pair in breakpoints.windows(2) {
        let panel = gauss_legendre(n, pair[0], pair[1])?;
        nodes.extend(panel.nodes);
        weights.extend(panel.weights);
    }
    Ok(QuadratureRule {
        nodes,
        weights,
        lower: breakpoints[0],
        upper: breakpoints[breakpoints.len() - 1],
    })
}

/// Breakpoints on `[lower, lower + length]` whose panel widths start at
/// `first` and double until they reach `max_width`.
pub fn graded_breakpoints(lower: f64, length: f64, first: f64, max_width: f64) -> Vec<f64> {
    let upper = lower + length;
    let mut points = vec![lower];
    let mut width = first.min(max_width).min(length);
    let mut x = lower;
    while x < upper {
        let mut next = x + width;
        // avoid a sliver at the end
        if next > upper - 0.25 * width {
            next = upper;
        }
        points.push(next);
        x = next;
        width = (2.0 * width).min(max_width);
    }
    points
}

fn check_finite(value: f64, x: f64, y: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Evaluation {
            x,
            y,
            reason: format!("kernel returned {value}"),
        })
    }
}

/// Samples `sqrt(w_i) k(x_i, y_j) sqrt(w_j)`.
pub fn weighted_matrix(
    kernel: impl Fn(f64, f64) -> f64,
    rows: &QuadratureRule,
    cols: &QuadratureRule,
) -> Result<DMatrix<f64>> {
    let sr = rows.sqrt_weights();
    let sc = cols.sqrt_weights();
    let mut m = DMatrix::zeros(rows.len(), cols.len());
    for j in 0..cols.len() {
        let y = cols.nodes[j];
        for i in 0..rows.len() {
            let x = rows.nodes[i];
            m[(i, j)] = sr[i] * check_finite(kernel(x, y), x, y)? * sc[j];
        }
    }
    Ok(m)
}

/// `det(I - M)` by dense LU with partial pivoting.
pub fn det_identity_minus(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let a = DMatrix::<f64>::identity(n, n) - m;
    a.lu().determinant()
}

/// Nyström approximation of `det(1 - K)` for a scalar kernel.
pub fn fredholm_det_scalar(
    kernel: impl Fn(f64, f64) -> f64,
    rule: &QuadratureRule,
) -> Result<f64> {
    let m = weighted_matrix(kernel, rule, rule)?;
    Ok(det_identity_minus(&m))
}

/// A 2×2 matrix kernel; blocks are indexed from 1 as `entry(i, j, x, y)`.
pub trait BlockKernel {
    fn entry(&self, i: usize, j: usize, x: f64, y: f64) -> f64;
}

/// A [`BlockKernel`] assembled from four closures.
pub struct FnBlockKernel<F11, F12, F21, F22> {
    pub k11: F11,
    pub k12: F12,
    pub k21: F21,
    pub k22: F22,
}

impl<F11, F12, F21, F22> BlockKernel for FnBlockKernel<F11, F12, F21, F22>
where
    F11: Fn(f64, f64) -> f64,
    F12: Fn(f64, f64) -> f64,
    F21: Fn(f64, f64) -> f64,
    F22: Fn(f64, f64) -> f64,
{
    fn entry(&self, i: usize, j: usize, x: f64, y: f64) -> f64 {
        match (i, j) {
            (1, 1) => (self.k11)(x, y),
            (1, 2) => (self.k12)(x, y),
            (2, 1) => (self.k21)(x, y),
            (2, 2) => (self.k22)(x, y),
            _ => f64::NAN,
        }
    }
}

/// Assembles the `(n1 + n2)`-square Nyström matrix of a block kernel.
pub fn block_matrix<K: BlockKernel + ?Sized>(
    kernel: &K,
    rule1: &QuadratureRule,
    rule2: &QuadratureRule,
) -> Result<DMatrix<f64>> {
    let n1 = rule1.len();
    let n2 = rule2.len();
    let mut m = DMatrix::zeros(n1 + n2, n1 + n2);
    let rules = [rule1, rule2];
    let offsets = [0, n1];
    for bi in 0..2 {
        for bj in 0..2 {
            let block = weighted_matrix(
                |x, y| kernel.entry(bi + 1, bj + 1, x, y),
                rules[bi],
                rules[bj],
            )?;
            m.view_mut((offsets[bi], offsets[bj]), (block.nrows(), block.ncols()))
                .copy_from(&block);
        }
    }
    Ok(m)
}

/// Nyström approximation of `det(1 - K)` for a 2×2 block kernel acting on
/// `L^2(domain_1) ⊕ L^2(domain_2)`.
pub fn fredholm_det_block<K: BlockKernel + ?Sized>(
    kernel: &K,
    rule1: &QuadratureRule,
    rule2: &QuadratureRule,
) -> Result<f64> {
    Ok(det_identity_minus(&block_matrix(kernel, rule1, rule2)?))
}

/// Tensor-quadrature value of `∫∫ k12(x, y) k21(y, x) dx dy` with `x` on
/// `rule1` and `y` on `rule2`.
pub fn kernel_trace_product(
    k12: impl Fn(f64, f64) -> f64,
    k21: impl Fn(f64, f64) -> f64,
    rule1: &QuadratureRule,
    rule2: &QuadratureRule,
) -> Result<f64> {
    let mut total = 0.0;
    for (&x, &wx) in rule1.nodes.iter().zip(&rule1.weights) {
        let mut row = 0.0;
        for (&y, &wy) in rule2.nodes.iter().zip(&rule2.weights) {
            let a = check_finite(k12(x, y), x, y)?;
            let b = check_finite(k21(y, x), y, x)?;
            row += wy * a * b;
        }
        total += wx * row;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfun::airy_ai;
    use proptest::prelude::*;

    #[test]
    fn one_point_rule() {
        let r = gauss_legendre(1, -1.0, 1.0).unwrap();
        assert_eq!(r.nodes, vec![0.0]);
        assert!((r.weights[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn two_point_exact_for_cubic() {
        let r = gauss_legendre(2, 0.0, 1.0).unwrap();
        assert!((r.integrate(|x| x * x) - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.integrate(|x| x * x * x) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn exponential_on_long_interval() {
        let r = gauss_legendre(60, 0.0, 40.0).unwrap();
        let exact = 1.0 - (-40.0f64).exp();
        assert!((r.integrate(|x| (-x).exp()) - exact).abs() < 1e-12);
    }

    #[test]
    fn argument_errors() {
        assert!(gauss_legendre(0, 0.0, 1.0).is_err());
        assert!(gauss_legendre(3, 1.0, 0.0).is_err());
        assert!(gauss_legendre(3, 1.0, 1.0).is_err());
    }

    #[test]
    fn rule_structure() {
        for n in [1usize, 2, 5, 17, 60, 200] {
            let r = gauss_legendre(n, -2.0, 3.0).unwrap();
            let total: f64 = r.weights.iter().sum();
            assert!((total - 5.0).abs() < 1e-12 * 5.0);
            assert!(r.weights.iter().all(|&w| w > 0.0));
            assert!(r.nodes.windows(2).all(|p| p[0] < p[1]));
            assert!(r.nodes.iter().all(|&x| x > -2.0 && x < 3.0));
        }
    }

    #[test]
    fn composite_rule_structure() {
        let bp = graded_breakpoints(-3.0, 40.0, 0.125, 2.0);
        assert_eq!(bp[0], -3.0);
        assert_eq!(*bp.last().unwrap(), 37.0);
        let r = composite_gauss_legendre(&bp, 12).unwrap();
        assert!((r.weights.iter().sum::<f64>() - 40.0).abs() < 1e-12);
        assert!(r.nodes.windows(2).all(|p| p[0] < p[1]));
        let exact = 1.0 - (-40.0f64 * 5.0).exp();
        let got = r.integrate(|x| 5.0 * (-5.0 * (x + 3.0)).exp());
        assert!((got - exact).abs() < 1e-13, "{got}");
    }

    proptest! {
        #[test]
        fn polynomial_exactness(n in 1usize..40, deg_frac in 0.0f64..1.0, a in -5.0f64..5.0, len in 0.1f64..10.0) {
            let deg = ((2 * n - 1) as f64 * deg_frac).floor() as i32;
            let b = a + len;
            let r = gauss_legendre(n, a, b).unwrap();
            // ∫ ((x - a)/len)^deg dx = len / (deg + 1)
            let got = r.integrate(|x| ((x - a) / len).powi(deg));
            let exact = len / (deg as f64 + 1.0);
            prop_assert!((got - exact).abs() <= 1e-13 * exact.max(1.0));
        }
    }

    #[test]
    fn zero_kernel_det_is_one() {
        let r = gauss_legendre(10, 0.0, 1.0).unwrap();
        assert_eq!(fredholm_det_scalar(|_, _| 0.0, &r).unwrap(), 1.0);
        let z = FnBlockKernel {
            k11: |_: f64, _: f64| 0.0,
            k12: |_: f64, _: f64| 0.0,
            k21: |_: f64, _: f64| 0.0,
            k22: |_: f64, _: f64| 0.0,
        };
        assert_eq!(fredholm_det_block(&z, &r, &r).unwrap(), 1.0);
    }

    #[test]
    fn rank_one_kernel() {
        // det(1 - e^{-x-y}) on [0, 40] = 1 - ∫ e^{-2x} = 1 - (1 - e^{-80})/2
        let r = gauss_legendre(60, 0.0, 40.0).unwrap();
        let d = fredholm_det_scalar(|x, y| (-x - y).exp(), &r).unwrap();
        assert!((d - 0.5).abs() < 1e-10, "{d}");
    }

    #[test]
    fn non_finite_kernel_reports_node() {
        let r = gauss_legendre(4, 0.0, 1.0).unwrap();
        let err = fredholm_det_scalar(|x, _| if x > 0.5 { f64::NAN } else { 0.0 }, &r)
            .unwrap_err();
        match err {
            Error::Evaluation { x, .. } => assert!(x > 0.5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn block_diagonal_factorises() {
        let r1 = gauss_legendre(30, 0.0, 20.0).unwrap();
        let r2 = gauss_legendre(25, 1.0, 21.0).unwrap();
        let airy = |x: f64, y: f64| airy_ai(x + y).unwrap().value;
        let k = FnBlockKernel {
            k11: airy,
            k12: |_: f64, _: f64| 0.0,
            k21: |_: f64, _: f64| 0.0,
            k22: |x: f64, y: f64| 0.5 * (-x - y).exp(),
        };
        let block = fredholm_det_block(&k, &r1, &r2).unwrap();
        let a = fredholm_det_scalar(airy, &r1).unwrap();
        let b = fredholm_det_scalar(|x, y| 0.5 * (-x - y).exp(), &r2).unwrap();
        assert!((block - a * b).abs() < 1e-12);
    }

    #[test]
    fn conjugation_invariance() {
        let r1 = gauss_legendre(20, 0.0, 6.0).unwrap();
        let r2 = gauss_legendre(20, 0.5, 7.0).unwrap();
        let k11 = |x: f64, y: f64| 0.3 * (-(x - y) * (x - y)).exp();
        let k12 = |x: f64, y: f64| 0.2 * (-x - 0.5 * y).exp();
        let k21 = |x: f64, y: f64| 0.4 * (-0.3 * x - y).exp();
        let k22 = |x: f64, y: f64| 0.1 * (-(x + y)).exp();
        let plain = FnBlockKernel { k11, k12, k21, k22 };
        let d1 = |x: f64| (0.3 * x).exp();
        let d2 = |x: f64| (1.0 + x * x).sqrt();
        let conj = FnBlockKernel {
            k11: |x: f64, y: f64| d1(x) * k11(x, y) / d1(y),
            k12: |x: f64, y: f64| d1(x) * k12(x, y) / d2(y),
            k21: |x: f64, y: f64| d2(x) * k21(x, y) / d1(y),
            k22: |x: f64, y: f64| d2(x) * k22(x, y) / d2(y),
        };
        let a = fredholm_det_block(&plain, &r1, &r2).unwrap();
        let b = fredholm_det_block(&conj, &r1, &r2).unwrap();
        assert!(((a - b) / a).abs() < 1e-10);
    }

    #[test]
    fn separable_trace() {
        let r = gauss_legendre(60, 0.0, 40.0).unwrap();
        let t = kernel_trace_product(
            |x, y| (-x - y).exp(),
            |y, x| (-x - y).exp(),
            &r,
            &r,
        )
        .unwrap();
        assert!((t - 0.25).abs() < 1e-10);
        let z = kernel_trace_product(|_, _| 0.0, |_, _| 0.0, &r, &r).unwrap();
        assert_eq!(z, 0.0);
    }

    #[test]
    fn node_doubling_converges() {
        // Smooth kernel: once resolved, the gap shrinks by >= 100 per doubling down to the floor.
        let k = |x: f64, y: f64| 0.5 * (-(x * x + y * y)).exp() * (x * y).cos();
        let det = |n| fredholm_det_scalar(k, &gauss_legendre(n, -3.0, 3.0).unwrap()).unwrap();
        let mut prev = det(16);
        let mut prev_gap = f64::INFINITY;
        for n in [32usize, 64, 128] {
            let d = det(n);
            let gap = (d - prev).abs();
            assert!(gap < 1e-12 || gap * 100.0 <= prev_gap, "n={n} gap={gap}");
            prev_gap = gap;
            prev = d;
        }
        assert!(prev_gap < 1e-12);
    }
}
