//! Distances and scores between distributions: energy distance, squared
//! L2 discrepancy between CDFs, CRPS and the symmetrized KL distance.
//!
//! Integrals over the response interval use the breakpoint-aware trapezoid
//! rule from [`crate::quadrature`] for CDF-based quantities (so empirical step
//! functions are integrated exactly) and a Gauss–Legendre rule for densities.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::points::{euclidean, Interval, PointSet};
use crate::quadrature::{trapezoid_with_breaks, QuadratureRule};

/// Grid size for CDF-based integrals when the caller has no preference.
pub const DEFAULT_GRID_SIZE: usize = 4096;
/// Gauss–Legendre node count for density-based integrals.
pub const DEFAULT_GAUSS_NODES: usize = 64;
/// Fraction of the observed response range added on each side to form the
/// response domain.
pub const DOMAIN_EXPANSION: f64 = 0.01;

const PAIR_CHUNK: usize = 256;

/// A non-empty, finite, ascending multiset of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalSet1D {
    points: Vec<f64>,
}

impl EmpiricalSet1D {
    pub fn new(mut points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::domain("empirical set must be non-empty"));
        }
        if let Some(v) = points.iter().find(|v| !v.is_finite()) {
            return Err(Error::domain(format!("empirical set contains non-finite value {v}")));
        }
        points.sort_by(f64::total_cmp);
        Ok(Self { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.points[0]
    }

    pub fn max(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    /// Fraction of points `<= y`.
    pub fn cdf(&self, y: f64) -> f64 {
        self.points.partition_point(|&p| p <= y) as f64 / self.points.len() as f64
    }

    /// Fraction of points `< y`.
    pub fn cdf_left(&self, y: f64) -> f64 {
        self.points.partition_point(|&p| p < y) as f64 / self.points.len() as f64
    }

    /// Mean absolute difference over all ordered pairs, self-pairs included.
    pub fn mean_pairwise_abs(&self) -> f64 {
        let n = self.points.len();
        let s: f64 = self
            .points
            .iter()
            .enumerate()
            .map(|(k, z)| z * (2.0 * k as f64 - n as f64 + 1.0))
            .sum();
        2.0 * s / (n * n) as f64
    }

    /// Mean of `|z - y|` over the set.
    pub fn mean_abs_to(&self, y: f64) -> f64 {
        self.points.iter().map(|z| (z - y).abs()).sum::<f64>() / self.points.len() as f64
    }
}

/// A cumulative distribution function restricted to a closed interval.
pub trait Cdf {
    /// Right-continuous value at `y`.
    fn cdf(&self, y: f64) -> f64;

    /// Left limit at `y`; equal to [`Cdf::cdf`] for continuous distributions.
    fn cdf_left(&self, y: f64) -> f64 {
        self.cdf(y)
    }

    fn domain(&self) -> Interval;

    /// Locations of jump discontinuities, if any.
    fn jumps(&self) -> &[f64] {
        &[]
    }
}

impl<C: Cdf + ?Sized> Cdf for &C {
    fn cdf(&self, y: f64) -> f64 {
        (**self).cdf(y)
    }
    fn cdf_left(&self, y: f64) -> f64 {
        (**self).cdf_left(y)
    }
    fn domain(&self) -> Interval {
        (**self).domain()
    }
    fn jumps(&self) -> &[f64] {
        (**self).jumps()
    }
}

impl<C: Cdf + ?Sized> Cdf for Box<C> {
    fn cdf(&self, y: f64) -> f64 {
        (**self).cdf(y)
    }
    fn cdf_left(&self, y: f64) -> f64 {
        (**self).cdf_left(y)
    }
    fn domain(&self) -> Interval {
        (**self).domain()
    }
    fn jumps(&self) -> &[f64] {
        (**self).jumps()
    }
}

/// Step CDF of an empirical set on a given domain.
#[derive(Debug, Clone)]
pub struct EmpiricalCdf {
    pub set: EmpiricalSet1D,
    pub domain: Interval,
}

impl EmpiricalCdf {
    pub fn new(set: EmpiricalSet1D, domain: Interval) -> Self {
        Self { set, domain }
    }

    /// Domain taken from the points with the default expansion rule.
    pub fn with_default_domain(set: EmpiricalSet1D) -> Result<Self> {
        let domain = Interval::expanded_from_values(set.points(), DOMAIN_EXPANSION)?;
        Ok(Self { set, domain })
    }
}

impl Cdf for EmpiricalCdf {
    fn cdf(&self, y: f64) -> f64 {
        self.set.cdf(y)
    }
    fn cdf_left(&self, y: f64) -> f64 {
        self.set.cdf_left(y)
    }
    fn domain(&self) -> Interval {
        self.domain
    }
    fn jumps(&self) -> &[f64] {
        self.set.points()
    }
}

/// Point mass at `at`.
#[derive(Debug, Clone, Copy)]
pub struct PointMassCdf {
    pub at: f64,
    pub domain: Interval,
}

impl Cdf for PointMassCdf {
    fn cdf(&self, y: f64) -> f64 {
        if y >= self.at {
            1.0
        } else {
            0.0
        }
    }
    fn cdf_left(&self, y: f64) -> f64 {
        if y > self.at {
            1.0
        } else {
            0.0
        }
    }
    fn domain(&self) -> Interval {
        self.domain
    }
    fn jumps(&self) -> &[f64] {
        std::slice::from_ref(&self.at)
    }
}

/// Continuous CDF given by a closure.
#[derive(Clone)]
pub struct FnCdf<F> {
    pub f: F,
    pub domain: Interval,
}

impl<F: Fn(f64) -> f64> FnCdf<F> {
    pub fn new(f: F, domain: Interval) -> Self {
        Self { f, domain }
    }
}

impl<F: Fn(f64) -> f64> Cdf for FnCdf<F> {
    fn cdf(&self, y: f64) -> f64 {
        (self.f)(y)
    }
    fn domain(&self) -> Interval {
        self.domain
    }
}

/// A CDF evaluated on a wider integration domain: 0 below and 1 above the
/// inner CDF's own domain.
#[derive(Clone)]
pub struct ExtendedCdf<C> {
    pub inner: C,
    pub domain: Interval,
}

impl<C: Cdf> Cdf for ExtendedCdf<C> {
    fn cdf(&self, y: f64) -> f64 {
        let d = self.inner.domain();
        if y < d.lo {
            0.0
        } else if y > d.hi {
            1.0
        } else {
            self.inner.cdf(y)
        }
    }
    fn cdf_left(&self, y: f64) -> f64 {
        let d = self.inner.domain();
        if y <= d.lo {
            0.0
        } else if y > d.hi {
            1.0
        } else {
            self.inner.cdf_left(y)
        }
    }
    fn domain(&self) -> Interval {
        self.domain
    }
    fn jumps(&self) -> &[f64] {
        self.inner.jumps()
    }
}

fn check_same_dim(a: &PointSet, b: &PointSet) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::domain("energy distance needs two non-empty point sets"));
    }
    if a.dim() != b.dim() {
        return Err(Error::domain(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    if !a.all_finite() || !b.all_finite() {
        return Err(Error::domain("point sets must have finite coordinates"));
    }
    Ok(())
}

/// Mean Euclidean distance over all ordered pairs `(a, b)`, `a` from `a_set`
/// and `b` from `b_set`. Chunked so the summation order does not depend on
/// the thread count.
pub fn mean_cross_distance(a_set: &PointSet, b_set: &PointSet) -> f64 {
    if a_set.dim() == 1 {
        let mut b: Vec<f64> = b_set.coords().to_vec();
        b.sort_by(f64::total_cmp);
        let mut prefix = Vec::with_capacity(b.len() + 1);
        prefix.push(0.0);
        for v in &b {
            prefix.push(prefix[prefix.len() - 1] + v);
        }
        let total = prefix[b.len()];
        let m = b.len() as f64;
        let partial: Vec<f64> = a_set
            .coords()
            .par_chunks(PAIR_CHUNK)
            .map(|chunk| {
                chunk
                    .iter()
                    .map(|&a| {
                        let k = b.partition_point(|&v| v <= a);
                        let below = a * k as f64 - prefix[k];
                        let above = (total - prefix[k]) - a * (m - k as f64);
                        below + above
                    })
                    .sum::<f64>()
            })
            .collect();
        return partial.iter().sum::<f64>() / (a_set.len() as f64 * m);
    }
    let dim = a_set.dim();
    let partial: Vec<f64> = a_set
        .coords()
        .par_chunks(PAIR_CHUNK * dim)
        .map(|chunk| {
            chunk
                .chunks_exact(dim)
                .map(|a| b_set.rows().map(|b| euclidean(a, b)).sum::<f64>())
                .sum::<f64>()
        })
        .collect();
    partial.iter().sum::<f64>() / (a_set.len() as f64 * b_set.len() as f64)
}

/// Mean pairwise Euclidean distance within a set, self-pairs included.
/// Shares the summation of [`mean_cross_distance`], so the energy distance of
/// a set with itself is exactly zero.
pub fn mean_self_distance(set: &PointSet) -> f64 {
    mean_cross_distance(set, set)
}

/// Empirical energy distance
/// `2 mean||a - b|| - mean||a - a'|| - mean||b - b'||`, means over all
/// ordered pairs including self-pairs.
pub fn energy_distance_empirical(a: &PointSet, b: &PointSet) -> Result<f64> {
    check_same_dim(a, b)?;
    Ok(2.0 * mean_cross_distance(a, b) - mean_self_distance(a) - mean_self_distance(b))
}

fn check_grid(grid_size: usize) -> Result<()> {
    if grid_size < 2 {
        return Err(Error::domain(format!("grid size must be at least 2, got {grid_size}")));
    }
    Ok(())
}

fn same_domain(a: Interval, b: Interval) -> bool {
    let tol = 1e-12 * (1.0 + a.len().abs());
    (a.lo - b.lo).abs() <= tol && (a.hi - b.hi).abs() <= tol
}

fn merged_jumps(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

/// Squared L2 discrepancy `∫ (F - G)^2` over the shared domain.
pub fn l2_discrepancy_sq<F: Cdf + ?Sized, G: Cdf + ?Sized>(
    f: &F,
    g: &G,
    grid_size: usize,
) -> Result<f64> {
    check_grid(grid_size)?;
    let (df, dg) = (f.domain(), g.domain());
    if !same_domain(df, dg) {
        return Err(Error::domain(format!(
            "CDF domains differ: [{}, {}] vs [{}, {}]",
            df.lo, df.hi, dg.lo, dg.hi
        )));
    }
    let breaks = merged_jumps(f.jumps(), g.jumps());
    let v = trapezoid_with_breaks(
        df,
        grid_size,
        &breaks,
        |t| (f.cdf(t) - g.cdf(t)).powi(2),
        |t| (f.cdf_left(t) - g.cdf_left(t)).powi(2),
    );
    Ok(v.max(0.0))
}

/// CRPS of a predictive CDF at observation `y`:
/// `∫ (F(z) - 1(z > y))^2 dz` over the CDF's domain.
pub fn crps_single<F: Cdf + ?Sized>(fhat: &F, y: f64, grid_size: usize) -> Result<f64> {
    check_grid(grid_size)?;
    let dom = fhat.domain();
    if !y.is_finite() || !dom.contains(y) {
        return Err(Error::domain(format!(
            "observation {y} lies outside the CDF domain [{}, {}]",
            dom.lo, dom.hi
        )));
    }
    let mut breaks = fhat.jumps().to_vec();
    breaks.push(y);
    let v = trapezoid_with_breaks(
        dom,
        grid_size,
        &breaks,
        |t| {
            let step = if t >= y { 1.0 } else { 0.0 };
            (fhat.cdf(t) - step).powi(2)
        },
        |t| {
            let step = if t > y { 1.0 } else { 0.0 };
            (fhat.cdf_left(t) - step).powi(2)
        },
    );
    Ok(v.max(0.0))
}

/// Mean CRPS over a test set. `family` maps a covariate vector to the
/// predictive CDF at that covariate.
pub fn crps_average<C, F>(
    family: F,
    test_x: &PointSet,
    test_y: &[f64],
    grid_size: usize,
) -> Result<f64>
where
    C: Cdf,
    F: Fn(&[f64]) -> C + Sync,
{
    Ok(crps_per_row(family, test_x, test_y, grid_size)?
        .iter()
        .sum::<f64>()
        / test_y.len() as f64)
}

/// Per-observation CRPS values, in test-set order.
pub fn crps_per_row<C, F>(
    family: F,
    test_x: &PointSet,
    test_y: &[f64],
    grid_size: usize,
) -> Result<Vec<f64>>
where
    C: Cdf,
    F: Fn(&[f64]) -> C + Sync,
{
    if test_y.is_empty() {
        return Err(Error::domain("CRPS needs a non-empty test set"));
    }
    if test_x.len() != test_y.len() {
        return Err(Error::domain(format!(
            "test covariates ({}) and responses ({}) differ in length",
            test_x.len(),
            test_y.len()
        )));
    }
    (0..test_y.len())
        .into_par_iter()
        .map(|i| {
            let cdf = family(test_x.row(i));
            crps_single(&cdf, test_y[i], grid_size).map_err(|e| match e {
                Error::Domain(m) => Error::domain(format!("test row {i}: {m}")),
                other => other,
            })
        })
        .collect()
}

/// Closed-form CRPS of the empirical CDF of `points` at `y`:
/// `mean|z - y| - mean|z - z'| / 2`.
pub fn crps_empirical_closed_form(points: &EmpiricalSet1D, y: f64) -> f64 {
    (points.mean_abs_to(y) - 0.5 * points.mean_pairwise_abs()).max(0.0)
}

/// Mean over `covariates` of the squared L2 discrepancy between the two
/// conditional CDFs at each covariate.
pub fn conditional_l2_discrepancy_sq<C1, C2, F1, F2>(
    fhat: F1,
    truth: F2,
    covariates: &PointSet,
    grid_size: usize,
) -> Result<f64>
where
    C1: Cdf,
    C2: Cdf,
    F1: Fn(&[f64]) -> C1 + Sync,
    F2: Fn(&[f64]) -> C2 + Sync,
{
    if covariates.is_empty() {
        return Err(Error::domain("conditional discrepancy needs at least one covariate"));
    }
    let per: Vec<f64> = (0..covariates.len())
        .into_par_iter()
        .map(|i| {
            let x = covariates.row(i);
            l2_discrepancy_sq(&fhat(x), &truth(x), grid_size)
                .map_err(|e| Error::domain(format!("covariate {i}: {e}")))
        })
        .collect::<Result<_>>()?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Monte Carlo symmetrized KL distance
/// `mean_x ∫ (f - fhat) log(f / fhat) dy` using `quad` in the response.
pub fn skl<F1, F2>(fhat: F1, truth: F2, covariates: &PointSet, quad: &QuadratureRule) -> Result<f64>
where
    F1: Fn(&[f64], f64) -> f64 + Sync,
    F2: Fn(&[f64], f64) -> f64 + Sync,
{
    if covariates.is_empty() {
        return Err(Error::domain("SKL needs at least one covariate"));
    }
    let per: Vec<f64> = (0..covariates.len())
        .into_par_iter()
        .map(|i| {
            let x = covariates.row(i);
            let mut acc = 0.0;
            for (&y, &w) in quad.nodes.iter().zip(&quad.weights) {
                let a = truth(x, y);
                let b = fhat(x, y);
                if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
                    return Err(Error::domain(format!(
                        "non-positive density at node y={y} for covariate {i} {x:?} (truth {a}, estimate {b})"
                    )));
                }
                acc += w * (a - b) * (a / b).ln();
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pts(v: &[f64]) -> PointSet {
        PointSet::from_scalars(v)
    }

    fn unit() -> Interval {
        Interval::new(0.0, 1.0).unwrap()
    }

    // Pairwise double loop, independent of the sorted fast paths.
    fn brute_energy(a: &PointSet, b: &PointSet) -> f64 {
        let mean = |p: &PointSet, q: &PointSet| {
            let mut s = 0.0;
            for x in p.rows() {
                for y in q.rows() {
                    s += euclidean(x, y);
                }
            }
            s / (p.len() * q.len()) as f64
        };
        2.0 * mean(a, b) - mean(a, a) - mean(b, b)
    }

    #[test]
    fn energy_distance_examples() {
        assert_eq!(energy_distance_empirical(&pts(&[0.0, 1.0]), &pts(&[0.0, 1.0])).unwrap(), 0.0);
        assert_eq!(energy_distance_empirical(&pts(&[0.0]), &pts(&[1.0])).unwrap(), 2.0);
        let v = energy_distance_empirical(&pts(&[0.0]), &pts(&[0.0, 2.0])).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn energy_distance_errors() {
        assert!(energy_distance_empirical(&pts(&[]), &pts(&[1.0])).is_err());
        let two_d = PointSet::from_rows(&[[0.0, 1.0]]).unwrap();
        assert!(energy_distance_empirical(&two_d, &pts(&[1.0])).is_err());
    }

    #[test]
    fn l2_examples() {
        let u = FnCdf::new(|t: f64| t.clamp(0.0, 1.0), unit());
        assert_eq!(l2_discrepancy_sq(&u, &u, 64).unwrap(), 0.0);
        let pm = PointMassCdf { at: 0.5, domain: unit() };
        let v = l2_discrepancy_sq(&u, &pm, 100_000).unwrap();
        assert!((v - 1.0 / 12.0).abs() < 1e-6, "{v}");
        assert!(l2_discrepancy_sq(&u, &pm, 1).is_err());
        let other = PointMassCdf { at: 0.5, domain: Interval::new(0.0, 2.0).unwrap() };
        assert!(l2_discrepancy_sq(&u, &other, 10).is_err());
    }

    #[test]
    fn crps_examples() {
        let pm = PointMassCdf { at: 0.3, domain: unit() };
        assert!(crps_single(&pm, 0.3, 64).unwrap().abs() < 1e-15);
        let pz = PointMassCdf { at: 0.8, domain: unit() };
        assert!((crps_single(&pz, 0.25, 64).unwrap() - 0.55).abs() < 1e-8);
        let u = FnCdf::new(|t: f64| t.clamp(0.0, 1.0), unit());
        assert!((crps_single(&u, 0.0, DEFAULT_GRID_SIZE).unwrap() - 1.0 / 3.0).abs() < 1e-6);
        assert!(crps_single(&u, 1.5, 64).is_err());
    }

    #[test]
    fn crps_average_examples() {
        let x = PointSet::from_rows(&[[0.2], [0.7]]).unwrap();
        let y = [0.2, 0.7];
        let perfect = |xv: &[f64]| PointMassCdf { at: xv[0], domain: unit() };
        assert!(crps_average(perfect, &x, &y, 128).unwrap().abs() < 1e-15);

        let u = |_: &[f64]| FnCdf::new(|t: f64| t.clamp(0.0, 1.0), unit());
        let a = crps_single(&u(&[0.0]), 0.2, 512).unwrap();
        let b = crps_single(&u(&[0.0]), 0.7, 512).unwrap();
        let avg = crps_average(u, &x, &y, 512).unwrap();
        assert!((avg - 0.5 * (a + b)).abs() < 1e-15);
        let single = crps_average(u, &x.select(&[0]), &y[..1], 512).unwrap();
        assert_eq!(single, a);
    }

    #[test]
    fn crps_average_reports_row() {
        let x = PointSet::from_rows(&[[0.0], [0.0]]).unwrap();
        let u = |_: &[f64]| FnCdf::new(|t: f64| t.clamp(0.0, 1.0), unit());
        let err = crps_average(u, &x, &[0.5, 3.0], 64).unwrap_err();
        assert!(err.to_string().contains("test row 1"), "{err}");
    }

    #[test]
    fn closed_form_examples() {
        let s = EmpiricalSet1D::new(vec![0.7]).unwrap();
        assert_eq!(crps_empirical_closed_form(&s, 0.7), 0.0);
        let s = EmpiricalSet1D::new(vec![0.0, 2.0]).unwrap();
        assert!((crps_empirical_closed_form(&s, 1.0) - 0.5).abs() < 1e-15);
        assert!(EmpiricalSet1D::new(vec![]).is_err());
    }

    #[test]
    fn conditional_discrepancy_examples() {
        let cov = PointSet::from_rows(&[[0.1], [0.5], [0.9]]).unwrap();
        let fam = |x: &[f64]| {
            let m = x[0];
            FnCdf::new(move |t: f64| if t < m { 0.5 * t / m } else { 0.5 + 0.5 * (t - m) / (1.0 - m) }, unit())
        };
        assert_eq!(conditional_l2_discrepancy_sq(fam, fam, &cov, 256).unwrap(), 0.0);

        let u = |_: &[f64]| FnCdf::new(|t: f64| t.clamp(0.0, 1.0), unit());
        let one = cov.select(&[1]);
        let cond = conditional_l2_discrepancy_sq(fam, u, &one, 2048).unwrap();
        let direct = l2_discrepancy_sq(&fam(one.row(0)), &u(one.row(0)), 2048).unwrap();
        assert_eq!(cond, direct);
    }

    #[test]
    fn skl_examples() {
        let cov = PointSet::from_rows(&[[0.0], [1.0]]).unwrap();
        let q = QuadratureRule::gauss_legendre(DEFAULT_GAUSS_NODES, unit()).unwrap();
        let flat = |_: &[f64], _: f64| 1.0;
        let ramp = |_: &[f64], y: f64| 2.0 * y;
        assert_eq!(skl(flat, flat, &cov, &q).unwrap(), 0.0);
        // reference from a 20000-node composite rule
        let fine = QuadratureRule::composite(
            &(0..=200).map(|i| i as f64 / 200.0).collect::<Vec<_>>(),
            100,
        )
        .unwrap();
        let reference = fine.integrate(|y| (1.0 - 2.0 * y) * (1.0 / (2.0 * y)).ln());
        // closed form: -(1/2) ∫_0^2 (1 - u) ln u du = 1/2, the sum of the two
        // one-way divergences 1 - ln 2 and ln 2 - 1/2
        assert!((reference - 0.5).abs() < 1e-3, "{reference}");
        let v = skl(ramp, flat, &cov, &q).unwrap();
        assert!((v - reference).abs() < 1e-3, "{v} vs {reference}");
        assert_eq!(v, skl(flat, ramp, &cov, &q).unwrap());
        let zero = |_: &[f64], _: f64| 0.0;
        assert!(skl(zero, flat, &cov, &q).is_err());
    }

    proptest! {
        #[test]
        fn energy_matches_brute_force(
            a in prop::collection::vec(-5.0f64..5.0, 1..30),
            b in prop::collection::vec(-5.0f64..5.0, 1..30),
        ) {
            let (pa, pb) = (pts(&a), pts(&b));
            let fast = energy_distance_empirical(&pa, &pb).unwrap();
            prop_assert!((fast - brute_energy(&pa, &pb)).abs() < 1e-10);
            prop_assert!(fast >= -1e-12);
        }

        #[test]
        fn energy_nd_nonnegative(
            a in prop::collection::vec(-3.0f64..3.0, 2..40),
            b in prop::collection::vec(-3.0f64..3.0, 2..40),
        ) {
            let ta = a.len() / 2 * 2;
            let tb = b.len() / 2 * 2;
            let pa = PointSet::new(2, a[..ta].to_vec()).unwrap();
            let pb = PointSet::new(2, b[..tb].to_vec()).unwrap();
            let e = energy_distance_empirical(&pa, &pb).unwrap();
            prop_assert!(e >= -1e-12);
            prop_assert!((e - brute_energy(&pa, &pb)).abs() < 1e-10);
        }

        #[test]
        fn half_energy_identity(
            a in prop::collection::vec(0.0f64..1.0, 1..25),
            b in prop::collection::vec(0.0f64..1.0, 1..25),
        ) {
            let dom = Interval::new(-0.01, 1.01).unwrap();
            let fa = EmpiricalCdf::new(EmpiricalSet1D::new(a.clone()).unwrap(), dom);
            let fb = EmpiricalCdf::new(EmpiricalSet1D::new(b.clone()).unwrap(), dom);
            let d2 = l2_discrepancy_sq(&fa, &fb, 1000).unwrap();
            let e = energy_distance_empirical(&pts(&a), &pts(&b)).unwrap();
            prop_assert!((d2 - 0.5 * e).abs() < 1e-10, "{} vs {}", d2, e / 2.0);
        }

        #[test]
        fn closed_form_matches_integral(
            a in prop::collection::vec(-2.0f64..2.0, 1..25),
            y in -2.0f64..2.0,
        ) {
            let set = EmpiricalSet1D::new(a).unwrap();
            let cdf = EmpiricalCdf::new(set.clone(), Interval::new(-2.5, 2.5).unwrap());
            let numeric = crps_single(&cdf, y, DEFAULT_GRID_SIZE).unwrap();
            prop_assert!((numeric - crps_empirical_closed_form(&set, y)).abs() < 1e-6);
        }

        #[test]
        fn scale_equivariance(
            a in prop::collection::vec(-2.0f64..2.0, 1..20),
            b in prop::collection::vec(-2.0f64..2.0, 1..20),
            y in -2.0f64..2.0,
            c in 0.1f64..10.0,
        ) {
            let e = energy_distance_empirical(&pts(&a), &pts(&b)).unwrap();
            let sa: Vec<f64> = a.iter().map(|v| v * c).collect();
            let sb: Vec<f64> = b.iter().map(|v| v * c).collect();
            let es = energy_distance_empirical(&pts(&sa), &pts(&sb)).unwrap();
            prop_assert!((es - c * e).abs() < 1e-9 * (1.0 + c * e.abs()));
            let crps = crps_empirical_closed_form(&EmpiricalSet1D::new(a).unwrap(), y);
            let crps_s = crps_empirical_closed_form(&EmpiricalSet1D::new(sa).unwrap(), c * y);
            prop_assert!((crps_s - c * crps).abs() < 1e-9 * (1.0 + c * crps));
        }

        #[test]
        fn zero_iff_equal_multisets(
            a in prop::collection::vec(0u8..4, 1..6),
            b in prop::collection::vec(0u8..4, 1..6),
        ) {
            let fa: Vec<f64> = a.iter().map(|&v| v as f64).collect();
            let fb: Vec<f64> = b.iter().map(|&v| v as f64).collect();
            let e = energy_distance_empirical(&pts(&fa), &pts(&fb)).unwrap();
            let mut sa = a.clone();
            let mut sb = b.clone();
            sa.sort();
            sb.sort();
            // equal as distributions: same multiset up to replication
            let dist = |s: &[u8]| (0u8..4).map(|k| s.iter().filter(|&&v| v == k).count() as f64 / s.len() as f64).collect::<Vec<_>>();
            let same = dist(&sa).iter().zip(dist(&sb)).all(|(p, q)| (p - q).abs() < 1e-12);
            prop_assert_eq!(e.abs() < 1e-12, same);
        }
    }
}
