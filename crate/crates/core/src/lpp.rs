//! Exponential last-passage percolation: weight fields, passage times,
//! geodesics and Monte Carlo estimators.
//!
//! Lattice points are `(x, y)` in ℤ². Anti-diagonal `t` is `{x + y = t}`;
//! on it a path's transversal position is `(x - y) / 2`.

use crate::error::{Error, Result};
use bitvec::prelude::*;
use rand_core::RngCore;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub type Point = (i64, i64);

/// Largest field half-width accepted by [`sample_field`].
pub const MAX_FIELD: i64 = 4000;
/// Fewest replicates an estimator accepts.
pub const MIN_SAMPLES: usize = 100;
/// Normal quantile for the 95% Wilson interval.
pub const WILSON_Z: f64 = 1.959_963_984_540_054;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Key of replicate `index` in a run seeded with `seed`.
pub fn replicate_key(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index))
}

/// Generator for the draws of a single cell: the first output is the
/// SplitMix64 value at counter `cell` of the stream keyed by `key`; the rare
/// extra draws the ziggurat needs continue from it with a different stride.
struct CellRng {
    state: u64,
    first: bool,
}

const CELL_STRIDE: u64 = 0xD1B5_4A32_D192_ED03;

impl RngCore for CellRng {
    #[inline]
    fn next_u64(&mut self) -> u64 {
        if self.first {
            self.first = false;
            self.state = splitmix64(self.state);
        } else {
            self.state = splitmix64(self.state.wrapping_add(CELL_STRIDE));
        }
        self.state
    }

    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        rand_core::impls::fill_bytes_via_next(self, dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand_core::Error> {
        self.fill_bytes(dest);
        Ok(())
    }
}

/// Unit-rate exponential for cell `(x, y)` under `key`.
///
/// Ziggurat sampling; an exact zero (probability 2⁻⁵²) is redrawn so every
/// weight is positive.
#[inline]
pub fn cell_weight(key: u64, x: i64, y: i64) -> f64 {
    let cell = ((x as u32 as u64) << 32) | (y as u32 as u64);
    let mut rng = CellRng {
        state: key.wrapping_add(cell.wrapping_mul(GOLDEN)),
        first: true,
    };
    loop {
        let w: f64 = Exp1.sample(&mut rng);
        if w > 0.0 {
            return w;
        }
    }
}

#[derive(Debug, Clone)]
enum Weights {
    Hashed { key: u64 },
    Explicit(Vec<f64>),
}

/// A weight field. Hashed fields cover `[-n, n]²` and compute each weight
/// on demand; explicit fields cover `[0, n)²`.
#[derive(Debug, Clone)]
pub struct PassageField {
    pub n: i64,
    pub seed: u64,
    weights: Weights,
}

/// Hashed field of half-width `n`.
pub fn sample_field(n: i64, seed: u64) -> Result<PassageField> {
    if !(1..=MAX_FIELD).contains(&n) {
        return Err(Error::Argument(format!("field size {n} outside [1, {MAX_FIELD}]")));
    }
    Ok(PassageField {
        n,
        seed,
        weights: Weights::Hashed { key: seed },
    })
}

impl PassageField {
    /// Field with weights `w[x * n + y]` on `[0, n)²`.
    pub fn from_weights(n: i64, w: Vec<f64>) -> Result<Self> {
        if n < 1 || w.len() as i64 != n * n {
            return Err(Error::Argument(format!(
                "need {n}×{n} weights, got {}",
                w.len()
            )));
        }
        if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Argument("weights must be finite and nonnegative".into()));
        }
        Ok(PassageField {
            n,
            seed: 0,
            weights: Weights::Explicit(w),
        })
    }

    pub fn constant(n: i64, value: f64) -> Result<Self> {
        Self::from_weights(n, vec![value; (n * n) as usize])
    }

    pub fn contains(&self, (x, y): Point) -> bool {
        match self.weights {
            Weights::Hashed { .. } => x.abs() <= self.n && y.abs() <= self.n,
            Weights::Explicit(_) => (0..self.n).contains(&x) && (0..self.n).contains(&y),
        }
    }

    /// Weight at `(x, y)`; the point must lie in the field.
    #[inline]
    pub fn weight(&self, x: i64, y: i64) -> f64 {
        match &self.weights {
            Weights::Hashed { key } => cell_weight(*key, x, y),
            Weights::Explicit(w) => w[(x * self.n + y) as usize],
        }
    }

    /// Weights of `(x0 + i, t - x0 - i)` into `out[i]`.
    pub fn fill_diagonal(&self, t: i64, x0: i64, out: &mut [f64]) {
        match &self.weights {
            Weights::Hashed { key } => {
                for (i, w) in out.iter_mut().enumerate() {
                    let x = x0 + i as i64;
                    *w = cell_weight(*key, x, t - x);
                }
            }
            Weights::Explicit(_) => {
                for (i, w) in out.iter_mut().enumerate() {
                    let x = x0 + i as i64;
                    *w = self.weight(x, t - x);
                }
            }
        }
    }

    /// The weights on `[0, n)²` as a dense array, `x` major.
    pub fn weights_array(&self) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .flat_map(|x| (0..n).map(move |y| (x, y)))
            .map(|(x, y)| self.weight(x, y))
            .collect()
    }

    fn require(&self, p: Point) -> Result<()> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(Error::Argument(format!("point {p:?} outside the field")))
        }
    }
}

/// `(raw - 4N) / (2^{4/3} N^{1/3})`.
pub fn rescale_star(raw: f64, n: u64) -> f64 {
    let n = n as f64;
    (raw - 4.0 * n) / (2f64.powf(4.0 / 3.0) * n.cbrt())
}

/// Point-to-point passage time, both endpoint weights included.
pub fn passage_point(field: &PassageField, p: Point, q: Point) -> Result<f64> {
    if p.0 > q.0 || p.1 > q.1 {
        return Err(Error::Argument(format!("{p:?} is not below-left of {q:?}")));
    }
    field.require(p)?;
    field.require(q)?;
    let width = (q.0 - p.0 + 1) as usize;
    let mut row = vec![f64::NEG_INFINITY; width];
    for y in p.1..=q.1 {
        let mut left = f64::NEG_INFINITY;
        for (i, cell) in row.iter_mut().enumerate() {
            let x = p.0 + i as i64;
            let best = if x == p.0 && y == p.1 {
                0.0
            } else {
                // Tie goes to the cell below.
                if left > *cell {
                    left
                } else {
                    *cell
                }
            };
            *cell = field.weight(x, y) + best;
            left = *cell;
        }
    }
    Ok(row[width - 1])
}

/// A set of starting cells `x ∈ [lo, hi]` on the start diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sources {
    pub lo: i64,
    pub hi: i64,
}

impl Sources {
    pub fn point(x: i64) -> Self {
        Sources { lo: x, hi: x }
    }
}

/// Outcome of one anti-diagonal sweep for each source layer.
#[derive(Debug, Clone)]
pub struct Sweep {
    pub start_diag: i64,
    pub line: i64,
    /// Union `x` range on the start diagonal.
    pub x0: i64,
    /// Line maximum per layer.
    pub best: Vec<f64>,
    /// `x` of the (first) maximising line cell per layer.
    pub argmax: Vec<i64>,
    /// Number of line cells attaining each maximum.
    pub endpoint_ties: Vec<usize>,
    preds: Option<Vec<BitVec<u64, Lsb0>>>,
    offsets: Vec<usize>,
}

/// Sweeps anti-diagonals `start_diag..=line`, one DP layer per source set.
///
/// With `keep_preds` a 1-bit predecessor map per layer is retained for
/// geodesic backtracking: 1 means the path arrived by an `e₁` step from
/// `(x-1, y)`, 0 by an `e₂` step from `(x, y-1)`. Ties go to `e₂`.
pub fn sweep(
    field: &PassageField,
    start_diag: i64,
    sources: &[Sources],
    line: i64,
    keep_preds: bool,
) -> Result<Sweep> {
    if sources.is_empty() || sources.iter().any(|s| s.lo > s.hi) {
        return Err(Error::Argument("need nonempty source intervals".into()));
    }
    if line < start_diag {
        return Err(Error::Argument(format!(
            "line {line} unreachable from diagonal {start_diag}"
        )));
    }
    let x0 = sources.iter().map(|s| s.lo).min().unwrap();
    let x1 = sources.iter().map(|s| s.hi).max().unwrap();
    let steps = line - start_diag;
    for p in [
        (x0, start_diag - x0),
        (x1, start_diag - x1),
        (x0, line - x0),
        (x1 + steps, line - x1 - steps),
    ] {
        field.require(p)?;
    }
    let layers = sources.len();
    let width = (x1 - x0 + steps + 1) as usize;
    let first = (x1 - x0 + 1) as usize;
    let mut wbuf = vec![0.0; width];
    // One row per layer, indexed by x - x0 on the current diagonal.
    let mut vals = vec![vec![f64::NEG_INFINITY; width]; layers];
    let mut next = vec![f64::NEG_INFINITY; width];
    field.fill_diagonal(start_diag, x0, &mut wbuf[..first]);
    for (row, s) in vals.iter_mut().zip(sources) {
        for i in (s.lo - x0) as usize..=(s.hi - x0) as usize {
            row[i] = wbuf[i];
        }
    }
    let mut offsets = Vec::new();
    let mut preds = keep_preds.then(|| vec![BitVec::<u64, Lsb0>::new(); layers]);
    if keep_preds {
        let total: usize = (0..=steps as usize).map(|k| first + k).sum();
        for p in preds.as_mut().unwrap() {
            p.resize(total, false);
        }
        offsets.push(0);
    }
    let mut offset = first;
    for k in 1..=steps {
        let len = first + k as usize;
        field.fill_diagonal(start_diag + k, x0, &mut wbuf[..len]);
        if keep_preds {
            offsets.push(offset);
        }
        for (l, row) in vals.iter_mut().enumerate() {
            // The new last cell has no e₂ predecessor.
            row[len - 1] = f64::NEG_INFINITY;
            let w = &wbuf[..len];
            let old = &row[..len];
            let out = &mut next[..len];
            out[0] = w[0] + old[0];
            for i in 1..len {
                let (left, down) = (old[i - 1], old[i]);
                out[i] = w[i] + if left > down { left } else { down };
            }
            if let Some(p) = preds.as_mut() {
                let bits = &mut p[l];
                for i in 1..len {
                    if old[i - 1] > old[i] {
                        bits.set(offset + i, true);
                    }
                }
            }
            std::mem::swap(row, &mut next);
        }
        offset += len;
    }
    let last = first + steps as usize;
    let mut best = vec![f64::NEG_INFINITY; layers];
    let mut argmax = vec![0; layers];
    let mut endpoint_ties = vec![0; layers];
    for (l, row) in vals.iter().enumerate() {
        for (i, &v) in row[..last].iter().enumerate() {
            if v > best[l] {
                best[l] = v;
                argmax[l] = x0 + i as i64;
                endpoint_ties[l] = 1;
            } else if v == best[l] && v.is_finite() {
                endpoint_ties[l] += 1;
            }
        }
    }
    Ok(Sweep {
        start_diag,
        line,
        x0,
        best,
        argmax,
        endpoint_ties,
        preds,
        offsets,
    })
}

/// Point-to-line passage time from `p` to `{x + y = line}`.
pub fn passage_line(field: &PassageField, p: Point, line: i64) -> Result<f64> {
    field.require(p)?;
    let s = sweep(field, p.0 + p.1, &[Sources::point(p.0)], line, false)?;
    Ok(s.best[0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeodesicPath {
    /// One point per anti-diagonal, from the start to the line.
    pub points: Vec<Point>,
    pub value: f64,
    /// Line cells sharing the maximum; the smallest `x` is taken.
    pub endpoint_ties: usize,
}

impl GeodesicPath {
    /// Transversal position `(x - y) / 2` on each anti-diagonal.
    pub fn positions(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|&(x, y)| (x - y) as f64 / 2.0)
    }

    /// Largest transversal position along the path.
    pub fn sup_position(&self) -> f64 {
        self.positions().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn end_position(&self) -> f64 {
        let &(x, y) = self.points.last().unwrap();
        (x - y) as f64 / 2.0
    }

    /// Whether the two paths share a lattice cell.
    pub fn meets(&self, other: &GeodesicPath) -> bool {
        let mut it = other.points.iter().peekable();
        for p in &self.points {
            while let Some(q) = it.peek() {
                let (dq, dp) = (q.0 + q.1, p.0 + p.1);
                if dq < dp || (dq == dp && q.0 < p.0) {
                    it.next();
                } else {
                    break;
                }
            }
            if it.peek() == Some(&p) {
                return true;
            }
        }
        false
    }
}

impl Sweep {
    /// Backtracks layer `layer` from its maximising line cell.
    pub fn geodesic(&self, field: &PassageField, layer: usize) -> Result<GeodesicPath> {
        let preds = self
            .preds
            .as_ref()
            .ok_or_else(|| Error::State("sweep ran without predecessor map".into()))?;
        let bits = &preds[layer];
        let steps = (self.line - self.start_diag) as usize;
        let mut x = self.argmax[layer];
        let mut rev = Vec::with_capacity(steps + 1);
        for k in (0..=steps).rev() {
            let t = self.start_diag + k as i64;
            rev.push((x, t - x));
            if k > 0 && bits[self.offsets[k] + (x - self.x0) as usize] {
                x -= 1;
            }
        }
        rev.reverse();
        let mut value = 0.0;
        for &(x, y) in &rev {
            value = field.weight(x, y) + value;
        }
        Ok(GeodesicPath {
            points: rev,
            value,
            endpoint_ties: self.endpoint_ties[layer],
        })
    }
}

/// Point-to-line geodesic from `p`.
pub fn geodesic_line(field: &PassageField, p: Point, line: i64) -> Result<GeodesicPath> {
    field.require(p)?;
    let s = sweep(field, p.0 + p.1, &[Sources::point(p.0)], line, true)?;
    s.geodesic(field, 0)
}

/// Monte Carlo summary; `interval` is the 95% Wilson interval for
/// Bernoulli estimands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub estimand: String,
    pub mean: f64,
    pub stderr: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub interval: Option<(f64, f64)>,
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let lo = if k == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if k as f64 == n { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

/// Sample mean with `sd / √n` standard error.
pub fn mean_summary(estimand: &str, xs: &[f64], seed: u64) -> McSummary {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    McSummary {
        estimand: estimand.to_string(),
        mean,
        stderr: (var / n).sqrt(),
        n_samples: xs.len(),
        seed,
        interval: None,
    }
}

fn bernoulli_summary(estimand: &str, hits: &[bool], seed: u64) -> McSummary {
    let xs: Vec<f64> = hits.iter().map(|&h| f64::from(u8::from(h))).collect();
    let k = hits.iter().filter(|&&h| h).count();
    McSummary {
        interval: Some(wilson_interval(k, hits.len(), WILSON_Z)),
        ..mean_summary(estimand, &xs, seed)
    }
}

/// Sample covariance with delete-one jackknife standard error.
pub fn covariance_summary(estimand: &str, xs: &[f64], ys: &[f64], seed: u64) -> McSummary {
    let n = xs.len();
    let nf = n as f64;
    // Centre first so the running sums stay well conditioned.
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let dx: Vec<f64> = xs.iter().map(|x| x - mx).collect();
    let dy: Vec<f64> = ys.iter().map(|y| y - my).collect();
    let sx: f64 = dx.iter().sum();
    let sy: f64 = dy.iter().sum();
    let sxy: f64 = dx.iter().zip(&dy).map(|(a, b)| a * b).sum();
    let cov = (sxy - sx * sy / nf) / (nf - 1.0);
    let m = nf - 1.0;
    let loo: Vec<f64> = dx
        .iter()
        .zip(&dy)
        .map(|(a, b)| {
            let (sx, sy, sxy) = (sx - a, sy - b, sxy - a * b);
            (sxy - sx * sy / m) / (m - 1.0)
        })
        .collect();
    let mean_loo = loo.iter().sum::<f64>() / nf;
    let jack = loo.iter().map(|v| (v - mean_loo) * (v - mean_loo)).sum::<f64>() * (nf - 1.0) / nf;
    McSummary {
        estimand: estimand.to_string(),
        mean: cov,
        stderr: jack.sqrt(),
        n_samples: n,
        seed,
        interval: None,
    }
}

fn check_samples(n_samples: usize) -> Result<()> {
    if n_samples < MIN_SAMPLES {
        return Err(Error::Argument(format!(
            "need at least {MIN_SAMPLES} samples, got {n_samples}"
        )));
    }
    Ok(())
}

fn check_n(n: u64) -> Result<()> {
    if !(1..=1500).contains(&n) {
        return Err(Error::Argument(format!("N = {n} outside [1, 1500]")));
    }
    Ok(())
}

/// `(2N)^{2/3}`, the transversal scale.
pub fn transversal_scale(n: u64) -> f64 {
    (2.0 * n as f64).powf(2.0 / 3.0)
}

/// `x` coordinate of `I(u)`, floor-rounded.
pub fn offset_cells(n: u64, u: f64) -> i64 {
    (u * transversal_scale(n)).floor() as i64
}

fn replicate_field(n: u64, extra: i64, seed: u64, index: u64) -> PassageField {
    PassageField {
        n: 2 * n as i64 + extra.abs() + 1,
        seed,
        weights: Weights::Hashed {
            key: replicate_key(seed, index),
        },
    }
}

fn run_replicates<T: Send>(
    n_samples: usize,
    f: impl Fn(u64) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    (0..n_samples as u64).into_par_iter().map(f).collect()
}

/// Rescaled point-to-line samples `L*_N(0)`.
pub fn sample_line_star(n: u64, n_samples: usize, seed: u64) -> Result<Vec<f64>> {
    check_n(n)?;
    check_samples(n_samples)?;
    let line = 2 * n as i64;
    run_replicates(n_samples, |r| {
        let field = replicate_field(n, 0, seed, r);
        Ok(rescale_star(passage_line(&field, (0, 0), line)?, n))
    })
}

/// Paired samples `(L*_N(0), L*_N(u))` on shared fields.
pub fn sample_pair_star(n: u64, u: f64, n_samples: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    check_n(n)?;
    check_samples(n_samples)?;
    if !(u >= 0.0) {
        return Err(Error::Argument(format!("u must be >= 0, got {u}")));
    }
    let a = offset_cells(n, u);
    let line = 2 * n as i64;
    let pairs = run_replicates(n_samples, |r| {
        let field = replicate_field(n, a, seed, r);
        let s = sweep(&field, 0, &[Sources::point(0), Sources::point(a)], line, false)?;
        Ok((rescale_star(s.best[0], n), rescale_star(s.best[1], n)))
    })?;
    Ok(pairs.into_iter().unzip())
}

/// `Cov(L*_N(u), L*_N(0))` with jackknife standard error.
pub fn mc_cov_star(n: u64, u: f64, n_samples: usize, seed: u64) -> Result<McSummary> {
    let (x, y) = sample_pair_star(n, u, n_samples, seed)?;
    Ok(covariance_summary("cov_star", &x, &y, seed))
}

/// `Var(L*_N(0))`; the `u = 0` case of [`mc_cov_star`].
pub fn mc_var_star(n: u64, n_samples: usize, seed: u64) -> Result<McSummary> {
    let (x, y) = sample_pair_star(n, 0.0, n_samples, seed)?;
    Ok(covariance_summary("var_star", &x, &y, seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExceedanceKind {
    /// `sup_t Γ*_N(t) ≥ u (2N)^{2/3}`.
    SupTransversal,
    /// `Γ*_N(2N) ≥ u (2N)^{2/3}`.
    Endpoint,
    /// Geodesics from `(0,0)` and `I(u)` share a cell.
    Coalescence,
    /// `L_{(0,0),(N,N)} ≤ 4N - x 2^{4/3} N^{1/3}`.
    LowerTailPp,
    /// `L_{(0,0),𝓛_{2N}} ≥ 4N + s 2^{4/3} N^{1/3}`.
    UpperTailLine,
    /// `sup_{|k| ≤ (2N)^{2/3}/2} L_{(k,-k),𝓛_{2N}} ≥ 4N + s 2^{4/3} N^{1/3}`.
    IntervalToLine,
}

impl ExceedanceKind {
    pub const ALL: [ExceedanceKind; 6] = [
        ExceedanceKind::SupTransversal,
        ExceedanceKind::Endpoint,
        ExceedanceKind::Coalescence,
        ExceedanceKind::LowerTailPp,
        ExceedanceKind::UpperTailLine,
        ExceedanceKind::IntervalToLine,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExceedanceKind::SupTransversal => "sup_transversal",
            ExceedanceKind::Endpoint => "endpoint",
            ExceedanceKind::Coalescence => "coalescence",
            ExceedanceKind::LowerTailPp => "lower_tail_pp",
            ExceedanceKind::UpperTailLine => "upper_tail_line",
            ExceedanceKind::IntervalToLine => "interval_to_line",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::Argument(format!("unknown exceedance kind '{name}'")))
    }
}

/// Bernoulli estimate of one of the geodesic or tail events.
pub fn mc_exceedance(
    kind: ExceedanceKind,
    n: u64,
    u_or_s: f64,
    n_samples: usize,
    seed: u64,
) -> Result<McSummary> {
    Ok(mc_exceedance_batch(kind, n, &[u_or_s], n_samples, seed)?.remove(0))
}

/// `mc_exceedance` at several parameters on the same replicates.
///
/// Each replicate is swept once: line and point passage times and the
/// geodesic from the origin do not depend on the parameter, and the
/// coalescence starts share one multi-layer sweep. Entry `i` equals
/// `mc_exceedance(kind, n, params[i], n_samples, seed)` exactly.
pub fn mc_exceedance_batch(
    kind: ExceedanceKind,
    n: u64,
    params: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<McSummary>> {
    check_n(n)?;
    check_samples(n_samples)?;
    if params.is_empty() || params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Argument("parameters must be finite and nonempty".into()));
    }
    let line = 2 * n as i64;
    let scale = transversal_scale(n);
    let fluct = 2f64.powf(4.0 / 3.0) * (n as f64).cbrt();
    let above: Vec<f64> = params.iter().map(|p| 4.0 * n as f64 + p * fluct).collect();
    let hits: Vec<Vec<bool>> = match kind {
        ExceedanceKind::SupTransversal | ExceedanceKind::Endpoint => {
            let thresholds: Vec<f64> = params.iter().map(|p| p * scale).collect();
            run_replicates(n_samples, |r| {
                let field = replicate_field(n, 0, seed, r);
                let g = geodesic_line(&field, (0, 0), line)?;
                let pos = if kind == ExceedanceKind::SupTransversal {
                    g.sup_position()
                } else {
                    g.end_position()
                };
                Ok(thresholds.iter().map(|&t| pos >= t).collect())
            })?
        }
        ExceedanceKind::Coalescence => {
            if params.iter().any(|&u| u < 0.0) {
                return Err(Error::Argument("coalescence needs u >= 0".into()));
            }
            let offsets: Vec<i64> = params.iter().map(|&u| offset_cells(n, u)).collect();
            let extra = offsets.iter().copied().max().unwrap();
            let sources: Vec<Sources> = std::iter::once(0)
                .chain(offsets.iter().copied())
                .map(Sources::point)
                .collect();
            run_replicates(n_samples, |r| {
                let field = replicate_field(n, extra, seed, r);
                let s = sweep(&field, 0, &sources, line, true)?;
                let origin = s.geodesic(&field, 0)?;
                (1..sources.len())
                    .map(|i| Ok(origin.meets(&s.geodesic(&field, i)?)))
                    .collect()
            })?
        }
        ExceedanceKind::LowerTailPp => {
            let below: Vec<f64> = params.iter().map(|p| 4.0 * n as f64 - p * fluct).collect();
            let corner = n as i64;
            run_replicates(n_samples, |r| {
                let field = replicate_field(n, 0, seed, r);
                let v = passage_point(&field, (0, 0), (corner, corner))?;
                Ok(below.iter().map(|&l| v <= l).collect())
            })?
        }
        ExceedanceKind::UpperTailLine => run_replicates(n_samples, |r| {
            let field = replicate_field(n, 0, seed, r);
            let v = passage_line(&field, (0, 0), line)?;
            Ok(above.iter().map(|&l| v >= l).collect())
        })?,
        ExceedanceKind::IntervalToLine => {
            let k = (scale / 2.0).floor() as i64;
            run_replicates(n_samples, |r| {
                let field = replicate_field(n, k, seed, r);
                let s = sweep(&field, 0, &[Sources { lo: -k, hi: k }], line, false)?;
                Ok(above.iter().map(|&l| s.best[0] >= l).collect())
            })?
        }
    };
    Ok((0..params.len())
        .map(|i| {
            let column: Vec<bool> = hits.iter().map(|h| h[i]).collect();
            bernoulli_summary(kind.name(), &column, seed)
        })
        .collect())
}

/// Both sides of the covariance transfer: the LPP covariance at `u` and
/// `2^{2/3} Cov(𝒜₁(0), 𝒜₁(2^{-2/3} u))`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossCheck {
    pub lhs: McSummary,
    pub rhs: f64,
    /// Argument `2^{-2/3} u` passed to the covariance module.
    pub airy_u: f64,
    pub airy_cov: f64,
}

/// Scale between `L*_N` and `𝒜₁`: `L* → 2^{1/3} 𝒜₁(2^{-2/3} u)`.
pub fn airy_argument(u: f64) -> f64 {
    2f64.powf(-2.0 / 3.0) * u
}

pub fn mc_cross_check(n: u64, u: f64, n_samples: usize, seed: u64) -> Result<CrossCheck> {
    let lhs = mc_cov_star(n, u, n_samples, seed)?;
    let airy_u = airy_argument(u);
    let airy_cov = crate::covariance::covariance(airy_u)?.value();
    Ok(CrossCheck {
        lhs,
        rhs: 2f64.powf(2.0 / 3.0) * airy_cov,
        airy_u,
        airy_cov,
    })
}

/// Kolmogorov–Smirnov distance between the empirical law of `samples` and
/// a continuous `cdf`.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_field(n: i64, seed: u64) -> PassageField {
        let f = sample_field(n, seed).unwrap();
        PassageField::from_weights(n, f.weights_array()).unwrap()
    }

    /// Maximum over all up-right paths by recursion.
    fn brute(field: &PassageField, p: Point, q: Point) -> f64 {
        let w = field.weight(q.0, q.1);
        if p == q {
            return w;
        }
        let mut best = f64::NEG_INFINITY;
        if q.0 > p.0 {
            best = best.max(brute(field, p, (q.0 - 1, q.1)));
        }
        if q.1 > p.1 {
            best = best.max(brute(field, p, (q.0, q.1 - 1)));
        }
        w + best
    }

    #[test]
    fn weights_positive_and_reproducible() {
        let a = sample_field(50, 7).unwrap().weights_array();
        let b = sample_field(50, 7).unwrap().weights_array();
        let c = sample_field(50, 8).unwrap().weights_array();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.iter().all(|w| *w > 0.0 && w.is_finite()));
        assert!(sample_field(0, 1).is_err());
        assert!(sample_field(MAX_FIELD + 1, 1).is_err());
    }

    #[test]
    fn exponential_tail_and_shape() {
        // Ziggurat tail and wedge paths against the exact CDF.
        let mut w = sample_field(1000, 12).unwrap().weights_array();
        let n = w.len() as f64;
        let tail = w.iter().filter(|&&v| v > 5.0).count() as f64 / n;
        let p = (-5.0f64).exp();
        assert!((tail - p).abs() < 4.0 * (p / n).sqrt(), "{tail}");
        w.sort_by(f64::total_cmp);
        assert!(ks_distance(&w, |x| 1.0 - (-x).exp()) < 1.63 / n.sqrt());
    }

    #[test]
    fn exponential_moments() {
        let w = sample_field(1000, 11).unwrap().weights_array();
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((mean - 1.0).abs() < 0.004, "{mean}");
        assert!((var - 1.0).abs() < 0.01, "{var}");
    }

    #[test]
    fn unit_field_values() {
        let f = PassageField::constant(5, 1.0).unwrap();
        assert_eq!(passage_point(&f, (0, 0), (1, 1)).unwrap(), 3.0);
        assert_eq!(passage_line(&f, (0, 0), 1).unwrap(), 2.0);
        assert!(passage_point(&f, (1, 0), (0, 1)).is_err());
        assert!(passage_line(&f, (1, 1), 1).is_err());
    }

    #[test]
    fn unit_field_geodesic_hugs_down_steps() {
        let f = PassageField::constant(5, 1.0).unwrap();
        let g = geodesic_line(&f, (0, 0), 4).unwrap();
        // Every step ties; e₂ wins each time, the smallest-x endpoint is taken.
        assert_eq!(g.points, vec![(0, 0), (0, 1), (0, 2), (0, 3), (0, 4)]);
        assert_eq!(g.value, 5.0);
        assert_eq!(g.endpoint_ties, 5);
    }

    #[test]
    fn dp_matches_enumeration_on_4x4() {
        for seed in 0..100 {
            let f = random_field(4, seed);
            assert_eq!(passage_point(&f, (0, 0), (3, 3)).unwrap(), brute(&f, (0, 0), (3, 3)));
        }
    }

    #[test]
    fn dp_matches_enumeration_up_to_5x5() {
        for seed in 0..20 {
            let f = random_field(5, 100 + seed);
            for q in [(4, 4), (2, 4), (4, 1), (3, 3), (0, 4)] {
                assert_eq!(passage_point(&f, (0, 0), q).unwrap(), brute(&f, (0, 0), q));
            }
            for line in 0..=4 {
                let want = (0..=line)
                    .map(|x| brute(&f, (0, 0), (x, line - x)))
                    .fold(f64::NEG_INFINITY, f64::max);
                assert_eq!(passage_line(&f, (0, 0), line).unwrap(), want);
            }
        }
    }

    #[test]
    fn line_dominates_point() {
        for seed in 0..100 {
            let f = sample_field(40, seed).unwrap();
            let l = passage_line(&f, (0, 0), 20).unwrap();
            let p = passage_point(&f, (0, 0), (10, 10)).unwrap();
            assert!(l >= p);
        }
    }

    #[test]
    fn geodesic_value_is_bitwise_passage_time() {
        for seed in 0..20 {
            let f = sample_field(60, seed).unwrap();
            let g = geodesic_line(&f, (3, -3), 50).unwrap();
            assert_eq!(g.value, passage_line(&f, (3, -3), 50).unwrap());
            for w in g.points.windows(2) {
                let d = (w[1].0 - w[0].0, w[1].1 - w[0].1);
                assert!(d == (1, 0) || d == (0, 1));
            }
            for w in g.positions().collect::<Vec<_>>().windows(2) {
                assert_eq!((w[1] - w[0]).abs(), 0.5);
            }
        }
    }

    #[test]
    fn geodesic_needs_predecessors() {
        let f = sample_field(10, 1).unwrap();
        let s = sweep(&f, 0, &[Sources::point(0)], 5, false).unwrap();
        assert!(matches!(s.geodesic(&f, 0), Err(Error::State(_))));
    }

    #[test]
    fn rescale_examples() {
        assert_eq!(rescale_star(4000.0, 1000), 0.0);
        let unit = 4.0 * 1000.0 + 2f64.powf(4.0 / 3.0) * 10.0;
        assert!((rescale_star(unit, 1000) - 1.0).abs() < 1e-12);
        assert!((rescale_star(4040.0, 1000) - 1.587_401_052).abs() < 1e-8);
    }

    #[test]
    fn wilson_contains_estimate() {
        for (k, n) in [(0, 100), (3, 100), (50, 100), (100, 100)] {
            let (lo, hi) = wilson_interval(k, n, WILSON_Z);
            let p = k as f64 / n as f64;
            assert!(lo <= p && p <= hi);
        }
        let (lo, hi) = wilson_interval(50, 100, WILSON_Z);
        assert!((lo - 0.4038).abs() < 1e-3 && (hi - 0.5962).abs() < 1e-3);
    }

    #[test]
    fn jackknife_matches_direct_leave_one_out() {
        let xs: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
        let ys: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin() + (i as f64).cos()).collect();
        let s = covariance_summary("t", &xs, &ys, 0);
        let cov = |x: &[f64], y: &[f64]| {
            let n = x.len() as f64;
            let mx = x.iter().sum::<f64>() / n;
            let my = y.iter().sum::<f64>() / n;
            x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (n - 1.0)
        };
        assert!((s.mean - cov(&xs, &ys)).abs() < 1e-12);
        let loo: Vec<f64> = (0..30)
            .map(|i| {
                let x: Vec<f64> = xs.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| *v).collect();
                let y: Vec<f64> = ys.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| *v).collect();
                cov(&x, &y)
            })
            .collect();
        let m = loo.iter().sum::<f64>() / 30.0;
        let jack = (loo.iter().map(|v| (v - m).powi(2)).sum::<f64>() * 29.0 / 30.0).sqrt();
        assert!((s.stderr - jack).abs() < 1e-12);
    }

    #[test]
    fn estimators_refuse_few_samples() {
        assert!(mc_cov_star(50, 1.0, 99, 1).is_err());
        assert!(mc_exceedance(ExceedanceKind::Endpoint, 50, 0.5, 10, 1).is_err());
    }

    #[test]
    fn zero_offset_covariance_is_variance() {
        let c = mc_cov_star(30, 0.01, 200, 5).unwrap();
        let v = mc_var_star(30, 200, 5).unwrap();
        assert_eq!(offset_cells(30, 0.01), 0);
        assert_eq!(c.mean, v.mean);
        assert_eq!(c.stderr, v.stderr);
    }

    #[test]
    fn estimators_are_seed_deterministic() {
        for kind in ExceedanceKind::ALL {
            let a = mc_exceedance(kind, 20, 0.5, 100, 3).unwrap();
            let b = mc_exceedance(kind, 20, 0.5, 100, 3).unwrap();
            assert_eq!(a, b);
            assert_eq!(ExceedanceKind::parse(kind.name()).unwrap(), kind);
        }
        assert_eq!(mc_cov_star(20, 0.5, 100, 9).unwrap(), mc_cov_star(20, 0.5, 100, 9).unwrap());
    }

    #[test]
    fn batch_matches_single_parameter_runs() {
        let params = [1.5, 0.0, 0.7];
        for kind in ExceedanceKind::ALL {
            let batch = mc_exceedance_batch(kind, 24, &params, 120, 5).unwrap();
            for (p, b) in params.iter().zip(&batch) {
                assert_eq!(b, &mc_exceedance(kind, 24, *p, 120, 5).unwrap(), "{kind:?} {p}");
            }
        }
        assert!(mc_exceedance_batch(ExceedanceKind::Endpoint, 24, &[], 120, 5).is_err());
    }

    #[test]
    fn ks_of_exact_quantiles_is_small() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        assert!(ks_distance(&xs, |x| x.clamp(0.0, 1.0)) <= 0.5e-3 + 1e-12);
        assert!((ks_distance(&xs, |_| 0.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_layer_matches_paired_sweep() {
        let f = sample_field(80, 4).unwrap();
        let s = sweep(&f, 0, &[Sources::point(0), Sources::point(7)], 60, true).unwrap();
        assert_eq!(s.best[0], passage_line(&f, (0, 0), 60).unwrap());
        assert_eq!(s.best[1], passage_line(&f, (7, -7), 60).unwrap());
        assert_eq!(s.geodesic(&f, 1).unwrap(), geodesic_line(&f, (7, -7), 60).unwrap());
        let interval = sweep(&f, 0, &[Sources { lo: -3, hi: 3 }], 60, false).unwrap();
        let want = (-3..=3)
            .map(|k| passage_line(&f, (k, -k), 60).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(interval.best[0], want);
    }

    proptest! {
        #[test]
        fn raising_a_weight_never_lowers_passage(seed in 0u64..1000, x in 0i64..5, y in 0i64..5, bump in 0.0f64..3.0) {
            let f = random_field(5, seed);
            let mut w = f.weights_array();
            w[(x * 5 + y) as usize] += bump;
            let g = PassageField::from_weights(5, w).unwrap();
            prop_assert!(passage_point(&g, (0, 0), (4, 4)).unwrap() >= passage_point(&f, (0, 0), (4, 4)).unwrap());
            prop_assert!(passage_line(&g, (0, 0), 4).unwrap() >= passage_line(&f, (0, 0), 4).unwrap());
        }

        #[test]
        fn geodesics_meet_in_a_suffix(seed in 0u64..10_000, a in 1i64..6) {
            let f = sample_field(40, seed).unwrap();
            let s = sweep(&f, 0, &[Sources::point(0), Sources::point(a)], 30, true).unwrap();
            let g1 = s.geodesic(&f, 0).unwrap();
            let g2 = s.geodesic(&f, 1).unwrap();
            let shared: Vec<bool> = g1.points.iter().zip(&g2.points).map(|(p, q)| p == q).collect();
            if let Some(first) = shared.iter().position(|&b| b) {
                prop_assert!(shared[first..].iter().all(|&b| b));
            }
            prop_assert_eq!(g1.meets(&g2), shared.iter().any(|&b| b));
        }

        #[test]
        fn same_seed_same_field(seed in any::<u64>(), x in -100i64..100, y in -100i64..100) {
            let a = sample_field(100, seed).unwrap();
            let b = sample_field(100, seed).unwrap();
            prop_assert_eq!(a.weight(x, y).to_bits(), b.weight(x, y).to_bits());
        }
    }
}
