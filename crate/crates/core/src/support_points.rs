//! Support points: point sets minimizing the empirical energy distance to a
//! data sample.
//!
//! The objective
//!
//! ```text
//! E(z) = 2/(nN) Σ_j Σ_m ||z_j - y_m|| - 1/n² Σ_i Σ_j ||z_i - z_j||
//! ```
//!
//! is a difference of convex functions. Majorizing the first sum by a
//! quadratic and linearizing the second gives a closed-form update for every
//! point (a Weiszfeld-like weighted mean plus a repulsion term), and each
//! sweep can only lower `E`.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::EmpiricalSet1D;
use crate::points::{euclidean, PointSet};

/// How the iteration is started.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpInit {
    /// Empirical quantiles at levels `(2i-1)/(2n)` (one-dimensional data only).
    Quantile,
    /// Seeded subsample of the data, slightly jittered.
    RandomSubsample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpConfig {
    pub max_iters: usize,
    /// Stop once the relative change of the objective between sweeps drops below this.
    pub tol: f64,
    /// Distance floor, relative to the largest coordinate range of the data.
    pub epsilon: f64,
    pub seed: u64,
    pub init: SpInit,
}

impl Default for SpConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tol: 1e-8,
            epsilon: 1e-10,
            seed: 0,
            init: SpInit::Quantile,
        }
    }
}

impl SpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::domain("max_iters must be at least 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::domain("tol must be positive"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::domain("epsilon must be positive"));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpResult {
    pub points: PointSet,
    /// Empirical energy objective `E` of the returned points.
    pub objective: f64,
    pub iters_used: usize,
    pub converged: bool,
    pub warning: Option<String>,
}

/// `2/(nN) ΣΣ ||z_j - y_m|| - 1/n² ΣΣ ||z_i - z_j||`.
///
/// This differs from the energy distance between the two sets by the data's
/// own mean pairwise distance, which does not depend on the candidate.
pub fn empirical_energy_objective(candidate: &PointSet, data: &PointSet) -> Result<f64> {
    if candidate.is_empty() || data.is_empty() {
        return Err(Error::domain("objective needs non-empty candidate and data sets"));
    }
    if candidate.dim() != data.dim() {
        return Err(Error::domain(format!(
            "dimension mismatch: candidate {} vs data {}",
            candidate.dim(),
            data.dim()
        )));
    }
    Ok(2.0 * crate::metrics::mean_cross_distance(candidate, data)
        - crate::metrics::mean_self_distance(candidate))
}

/// Distance floor actually applied: `rel` times the largest coordinate
/// range, or `rel` itself for constant data.
fn distance_floor(data: &PointSet, rel: f64) -> f64 {
    let range = data
        .bounds()
        .iter()
        .map(|(lo, hi)| hi - lo)
        .fold(0.0, f64::max);
    if range > 0.0 {
        rel * range
    } else {
        rel
    }
}

struct Sweep {
    objective: f64,
    next: PointSet,
}

/// Independent accumulator lanes in [`data_pass`], so the square roots and
/// divisions of neighbouring rows can overlap or vectorize.
const LANES: usize = 4;

/// Data part of a sweep for one point: `Σ w_m y_m` into `num`, and
/// `(Σ w_m, Σ d_m)` with `w_m = 1 / max(d_m, eps)`.
fn data_pass<const P: usize>(xi: &[f64], data: &[f64], eps: f64, num: &mut [f64]) -> (f64, f64) {
    let x: [f64; P] = xi.try_into().expect("dimension matches");
    let mut acc = [[0.0; LANES]; P];
    let mut wsum = [0.0; LANES];
    let mut cross = [0.0; LANES];
    let mut row = |l: usize, ym: &[f64]| {
        let mut s = 0.0;
        for k in 0..P {
            let t = x[k] - ym[k];
            s += t * t;
        }
        let d = s.sqrt();
        cross[l] += d;
        let w = 1.0 / d.max(eps);
        wsum[l] += w;
        for k in 0..P {
            acc[k][l] += w * ym[k];
        }
    };
    let blocks = data.chunks_exact(P * LANES);
    let tail = blocks.remainder();
    for b in blocks {
        for l in 0..LANES {
            row(l, &b[l * P..(l + 1) * P]);
        }
    }
    for ym in tail.chunks_exact(P) {
        row(0, ym);
    }
    for k in 0..P {
        num[k] = acc[k].iter().sum();
    }
    (wsum.iter().sum(), cross.iter().sum())
}

fn data_pass_dyn(xi: &[f64], data: &PointSet, eps: f64, num: &mut [f64]) -> (f64, f64) {
    let (mut wsum, mut cross) = (0.0, 0.0);
    for ym in data.rows() {
        let d = euclidean(xi, ym);
        cross += d;
        let w = 1.0 / d.max(eps);
        wsum += w;
        for (acc, v) in num.iter_mut().zip(ym) {
            *acc += w * v;
        }
    }
    (wsum, cross)
}

/// One Jacobi sweep from `current`: returns the objective at `current` and
/// the updated points, both from a single pass over the data.
fn sweep(current: &PointSet, data: &PointSet, eps: f64) -> Sweep {
    let p = current.dim();
    let n = current.len();
    let big_n = data.len();
    let ratio = big_n as f64 / n as f64;
    let rows: Vec<(Vec<f64>, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = current.row(i);
            let mut num = vec![0.0; p];
            let (wsum, cross) = match p {
                1 => data_pass::<1>(xi, data.coords(), eps, &mut num),
                2 => data_pass::<2>(xi, data.coords(), eps, &mut num),
                3 => data_pass::<3>(xi, data.coords(), eps, &mut num),
                4 => data_pass::<4>(xi, data.coords(), eps, &mut num),
                _ => data_pass_dyn(xi, data, eps, &mut num),
            };
            let mut own = 0.0;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let xj = current.row(j);
                let d = euclidean(xi, xj);
                own += d;
                let w = ratio / d.max(eps);
                for ((acc, a), b) in num.iter_mut().zip(xi).zip(xj) {
                    *acc += w * (a - b);
                }
            }
            num.iter_mut().for_each(|v| *v /= wsum);
            (num, cross, own)
        })
        .collect();
    let mut next = PointSet::with_capacity(p, n);
    let (mut cross, mut own) = (0.0, 0.0);
    for (row, c, o) in &rows {
        next.push(row);
        cross += c;
        own += o;
    }
    Sweep {
        objective: 2.0 * cross / (n as f64 * big_n as f64) - own / (n * n) as f64,
        next,
    }
}

/// One majorize–minimize update of every point, computed from the pre-step
/// positions.
pub fn sp_fixed_point_step(current: &PointSet, data: &PointSet, epsilon: f64) -> PointSet {
    sweep(current, data, epsilon).next
}

fn iterate(start: PointSet, data: &PointSet, cfg: &SpConfig) -> SpResult {
    let eps = distance_floor(data, cfg.epsilon);
    let mut current = start;
    let mut prev_obj = f64::INFINITY;
    for iter in 0..cfg.max_iters {
        let Sweep { objective, next } = sweep(&current, data, eps);
        let change = (prev_obj - objective).abs();
        if iter > 0 && change <= cfg.tol * objective.abs().max(f64::MIN_POSITIVE) {
            return SpResult {
                points: current,
                objective,
                iters_used: iter,
                converged: true,
                warning: None,
            };
        }
        prev_obj = objective;
        current = next;
    }
    let objective = empirical_energy_objective(&current, data).unwrap_or(f64::NAN);
    SpResult {
        points: current,
        objective,
        iters_used: cfg.max_iters,
        converged: false,
        warning: None,
    }
}

/// Empirical quantiles of sorted `data` at levels `(2i-1)/(2n)`, taking the
/// lower order statistic on exact ties.
pub fn quantile_levels(sorted: &[f64], n: usize) -> Vec<f64> {
    let big_n = sorted.len();
    (1..=n)
        .map(|i| {
            // k = ceil((2i - 1) N / (2n)), 1-based
            let k = ((2 * i - 1) * big_n).div_ceil(2 * n).max(1);
            sorted[k - 1]
        })
        .collect()
}

/// One-dimensional support points of `data`, returned ascending.
pub fn support_points_1d(data: &EmpiricalSet1D, n: usize, cfg: &SpConfig) -> Result<SpResult> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::domain("requested zero support points"));
    }
    let sorted = data.points();
    let start = match cfg.init {
        SpInit::Quantile => PointSet::from_scalars(&quantile_levels(sorted, n)),
        SpInit::RandomSubsample => random_start(&PointSet::from_scalars(sorted), n, cfg.seed),
    };
    let data_set = PointSet::from_scalars(sorted);
    let mut res = iterate(start, &data_set, cfg);
    let mut pts = res.points.into_coords();
    pts.sort_by(f64::total_cmp);
    res.points = PointSet::from_scalars(&pts);
    if n > 10 * sorted.len() {
        res.warning = Some(format!(
            "{n} support points requested from only {} observations",
            sorted.len()
        ));
    }
    Ok(res)
}

fn random_start(data: &PointSet, n: usize, seed: u64) -> PointSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let big_n = data.len();
    let picks: Vec<usize> = if n <= big_n {
        index::sample(&mut rng, big_n, n).into_vec()
    } else {
        (0..n).map(|i| i % big_n).collect()
    };
    let mut start = data.select(&picks);
    // Points sitting exactly on data points stall the weighted-mean update.
    let sd = coordinate_sd(data);
    for i in 0..start.len() {
        for (v, s) in start.row_mut(i).iter_mut().zip(&sd) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += 1e-2 * s * z;
        }
    }
    start
}

fn coordinate_sd(data: &PointSet) -> Vec<f64> {
    let mean = data.mean();
    let mut var = vec![0.0; data.dim()];
    for r in data.rows() {
        for ((acc, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *acc += (v - m) * (v - m);
        }
    }
    let n = data.len().max(1) as f64;
    var.iter().map(|v| (v / n).sqrt()).collect()
}

/// Support points of multivariate `data` from a seeded random start.
pub fn support_points_nd(data: &PointSet, n: usize, cfg: &SpConfig) -> Result<SpResult> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::domain("requested zero support points"));
    }
    if data.is_empty() {
        return Err(Error::domain("support points need non-empty data"));
    }
    if !data.all_finite() {
        return Err(Error::domain("data contain NaN or infinite coordinates"));
    }
    let start = match cfg.init {
        SpInit::Quantile if data.dim() == 1 => {
            let set = EmpiricalSet1D::new(data.coords().to_vec())?;
            PointSet::from_scalars(&quantile_levels(set.points(), n))
        }
        _ => random_start(data, n, cfg.seed),
    };
    let mut res = iterate(start, data, cfg);
    if n > 10 * data.len() {
        res.warning = Some(format!(
            "{n} support points requested from only {} observations",
            data.len()
        ));
    }
    Ok(res)
}
