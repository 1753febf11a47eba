//! Numerical integration over the response interval.
//!
//! Two families are used: Gauss–Legendre rules (plain or composite over a
//! set of breakpoints) for smooth densities, and a breakpoint-aware
//! trapezoid rule for CDF-based quantities that may contain jumps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::Interval;

/// Quadrature nodes and positive weights on an interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub interval: Interval,
}

impl QuadratureRule {
    /// `n`-point Gauss–Legendre rule mapped onto `interval`.
    pub fn gauss_legendre(n: usize, interval: Interval) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("Gauss–Legendre rule needs at least one node"));
        }
        let (x, w) = gauss_legendre_unit(n);
        let half = 0.5 * interval.len();
        let mid = 0.5 * (interval.lo + interval.hi);
        Ok(Self {
            nodes: x.iter().map(|t| mid + half * t).collect(),
            weights: w.iter().map(|v| v * half).collect(),
            interval,
        })
    }

    /// Composite Gauss–Legendre rule with `per_span` nodes on every span of
    /// the strictly increasing `breaks`. The first and last breakpoints are
    /// the interval ends.
    pub fn composite(breaks: &[f64], per_span: usize) -> Result<Self> {
        if breaks.len() < 2 {
            return Err(Error::domain("composite rule needs at least two breakpoints"));
        }
        if breaks.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain("composite rule breakpoints must increase strictly"));
        }
        if per_span == 0 {
            return Err(Error::domain("composite rule needs at least one node per span"));
        }
        let (x, w) = gauss_legendre_unit(per_span);
        let mut nodes = Vec::with_capacity((breaks.len() - 1) * per_span);
        let mut weights = Vec::with_capacity(nodes.capacity());
        for s in breaks.windows(2) {
            let half = 0.5 * (s[1] - s[0]);
            let mid = 0.5 * (s[1] + s[0]);
            for (t, wt) in x.iter().zip(&w) {
                nodes.push(mid + half * t);
                weights.push(wt * half);
            }
        }
        Ok(Self {
            nodes,
            weights,
            interval: Interval::new(breaks[0], breaks[breaks.len() - 1])?,
        })
    }

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
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on [-1, 1],
/// ascending. Roots are found by Newton's method on the Legendre recurrence.
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        dp = if d != 0.0 { d } else { dp };
        let wt = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wt;
        w[n - 1 - i] = wt;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Uniform grid of `size` points covering `interval`, ends included.
pub fn uniform_grid(interval: Interval, size: usize) -> Vec<f64> {
    let h = interval.len() / (size - 1) as f64;
    (0..size)
        .map(|i| {
            if i + 1 == size {
                interval.hi
            } else {
                interval.lo + h * i as f64
            }
        })
        .collect()
}

/// Trapezoid rule on a uniform grid refined at known jump locations.
///
/// `right(t)` must return the right-continuous value of the integrand at `t`
/// and `left(t)` its left limit. Between consecutive nodes the integrand is
/// taken from the right limit at the lower node and the left limit at the
/// upper node, so piecewise-constant integrands with jumps at `breaks` are
/// integrated exactly. The two limits must agree away from `breaks` and the
/// upper end; `left` is only called there.
pub fn trapezoid_with_breaks(
    interval: Interval,
    grid_size: usize,
    breaks: &[f64],
    right: impl Fn(f64) -> f64,
    left: impl Fn(f64) -> f64,
) -> f64 {
    let mut nodes: Vec<(f64, bool)> = uniform_grid(interval, grid_size).into_iter().map(|t| (t, false)).collect();
    let inner: Vec<f64> = breaks
        .iter()
        .copied()
        .filter(|b| *b > interval.lo && *b < interval.hi)
        .collect();
    if !inner.is_empty() {
        nodes.extend(inner.into_iter().map(|t| (t, true)));
        nodes.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
        nodes.dedup_by(|b, a| a.0 == b.0);
    }
    // the last interval always closes on the left limit
    if let Some(last) = nodes.last_mut() {
        last.1 = true;
    }
    let mut total = 0.0;
    let mut prev = (nodes[0].0, right(nodes[0].0));
    for &(t, is_break) in &nodes[1..] {
        let r = right(t);
        let l = if is_break { left(t) } else { r };
        total += 0.5 * (t - prev.0) * (prev.1 + l);
        prev = (t, r);
    }
    total
}
