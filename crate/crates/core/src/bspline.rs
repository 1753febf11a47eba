//! Cubic B-splines on `[0, 1]` with clamped knots.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::QuadratureRule;

pub const DEGREE: usize = 3;
const ORDER: usize = DEGREE + 1;
/// Interior knots closer than this to each other or to the ends are merged.
pub const MIN_KNOT_GAP: f64 = 1e-3;

/// Cubic B-spline basis on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BSplineBasis {
    knots: Vec<f64>,
    breaks: Vec<f64>,
}

impl BSplineBasis {
    /// Basis with the given strictly increasing interior knots in `(0, 1)`.
    pub fn new(interior: &[f64]) -> Result<Self> {
        let mut prev = 0.0;
        for &t in interior {
            if !(t > prev && t < 1.0) {
                return Err(Error::domain(format!("interior knots must increase inside (0, 1), got {interior:?}")));
            }
            prev = t;
        }
        let mut knots = vec![0.0; ORDER];
        knots.extend_from_slice(interior);
        knots.extend([1.0; ORDER]);
        let mut breaks = vec![0.0];
        breaks.extend_from_slice(interior);
        breaks.push(1.0);
        Ok(Self { knots, breaks })
    }

    /// Interior knots at equally spaced quantiles of `values` (already in
    /// `[0, 1]`), `count` knots in total counting both ends. Knots that crowd
    /// each other are merged.
    pub fn at_quantiles(values: &[f64], count: usize) -> Result<Self> {
        if count < 2 {
            return Err(Error::domain("a knot sequence needs at least its two end points"));
        }
        let mut sorted: Vec<f64> = values.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        sorted.sort_by(f64::total_cmp);
        let mut interior: Vec<f64> = Vec::new();
        if !sorted.is_empty() {
            for j in 1..count - 1 {
                let level = j as f64 / (count - 1) as f64;
                let pos = level * (sorted.len() - 1) as f64;
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(sorted.len() - 1);
                let t = sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo]);
                let last = interior.last().copied().unwrap_or(0.0);
                if t - last >= MIN_KNOT_GAP && 1.0 - t >= MIN_KNOT_GAP {
                    interior.push(t);
                }
            }
        }
        Self::new(&interior)
    }

    pub fn len(&self) -> usize {
        self.knots.len() - ORDER
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Distinct knots, ends included.
    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.breaks[1..self.breaks.len() - 1]
    }

    fn find_span(&self, u: f64) -> usize {
        let n = self.len();
        if u >= self.knots[n] {
            return n - 1;
        }
        if u <= self.knots[DEGREE] {
            return DEGREE;
        }
        // last index s with knots[s] <= u
        self.knots.partition_point(|&t| t <= u) - 1
    }

    /// Index of the first non-zero function at `u` and the values of the
    /// `ORDER` non-zero functions and their first two derivatives.
    pub fn nonzero(&self, u: f64) -> (usize, [[f64; ORDER]; 3]) {
        let u = u.clamp(0.0, 1.0);
        let span = self.find_span(u);
        (span - DEGREE, ders_basis_funs(span, u, &self.knots))
    }

    /// Index of the first non-zero function at `u` and the `ORDER` values.
    pub fn nonzero_values(&self, u: f64) -> (usize, [f64; ORDER]) {
        let u = u.clamp(0.0, 1.0);
        let span = self.find_span(u);
        (span - DEGREE, basis_funs(span, u, &self.knots))
    }

    /// Dense values (derivative order `deriv` ≤ 2) of all basis functions.
    pub fn eval_into(&self, u: f64, deriv: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let (first, d) = self.nonzero(u);
        out[first..first + ORDER].copy_from_slice(&d[deriv]);
    }

    pub fn eval(&self, u: f64, deriv: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(u, deriv, &mut out);
        out
    }

    /// Exact integrals over `[0, 1]`: `(t_{j+4} - t_j) / 4`.
    pub fn integrals(&self) -> Vec<f64> {
        (0..self.len())
            .map(|j| (self.knots[j + ORDER] - self.knots[j]) / ORDER as f64)
            .collect()
    }

    /// Composite Gauss–Legendre rule over the knot spans.
    pub fn span_rule(&self, per_span: usize) -> QuadratureRule {
        QuadratureRule::composite(&self.breaks, per_span).expect("breaks increase")
    }
}

/// Values of the non-zero cubic B-splines on `span` (Cox–de Boor).
fn basis_funs(span: usize, u: f64, knots: &[f64]) -> [f64; ORDER] {
    let mut n = [0.0; ORDER];
    let mut left = [0.0; ORDER];
    let mut right = [0.0; ORDER];
    n[0] = 1.0;
    for j in 1..=DEGREE {
        left[j] = u - knots[span + 1 - j];
        right[j] = knots[span + j] - u;
        let mut saved = 0.0;
        for r in 0..j {
            let temp = n[r] / (right[r + 1] + left[j - r]);
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    n
}

/// Values and first two derivatives of the non-zero cubic B-splines on `span`
/// (de Boor's triangular scheme with derivative recurrences).
fn ders_basis_funs(span: usize, u: f64, knots: &[f64]) -> [[f64; ORDER]; 3] {
    let p = DEGREE;
    let n_der = 2;
    let mut ndu = [[0.0; ORDER]; ORDER];
    let mut left = [0.0; ORDER];
    let mut right = [0.0; ORDER];
    ndu[0][0] = 1.0;
    for j in 1..=p {
        left[j] = u - knots[span + 1 - j];
        right[j] = knots[span + j] - u;
        let mut saved = 0.0;
        for r in 0..j {
            ndu[j][r] = right[r + 1] + left[j - r];
            let temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }
    let mut ders = [[0.0; ORDER]; 3];
    for j in 0..=p {
        ders[0][j] = ndu[j][p];
    }
    let pi = p as i64;
    for r in 0..=pi {
        let mut a = [[0.0; ORDER]; 2];
        let (mut s1, mut s2) = (0usize, 1usize);
        a[0][0] = 1.0;
        for k in 1..=n_der as i64 {
            let mut d = 0.0;
            let rk = r - k;
            let pk = pi - k;
            if r >= k {
                a[s2][0] = a[s1][0] / ndu[(pk + 1) as usize][rk as usize];
                d = a[s2][0] * ndu[rk as usize][pk as usize];
            }
            let j1 = if rk >= -1 { 1 } else { -rk };
            let j2 = if r - 1 <= pk { k - 1 } else { pi - r };
            for j in j1..=j2 {
                let (ju, rkj) = (j as usize, (rk + j) as usize);
                a[s2][ju] = (a[s1][ju] - a[s1][ju - 1]) / ndu[(pk + 1) as usize][rkj];
                d += a[s2][ju] * ndu[rkj][pk as usize];
            }
            if r <= pk {
                let ku = k as usize;
                a[s2][ku] = -a[s1][ku - 1] / ndu[(pk + 1) as usize][r as usize];
                d += a[s2][ku] * ndu[r as usize][pk as usize];
            }
            ders[k as usize][r as usize] = d;
            std::mem::swap(&mut s1, &mut s2);
        }
    }
    let mut fac = p as f64;
    for (k, row) in ders.iter_mut().enumerate().skip(1) {
        for v in row.iter_mut() {
            *v *= fac;
        }
        fac *= (p - k) as f64;
    }
    ders
}

/// B-splines with their uniform average removed, the last one dropped (the
/// centered functions sum to zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CenteredSpec", into = "CenteredSpec")]
pub struct CenteredBasis {
    spline: BSplineBasis,
    means: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CenteredSpec {
    interior_knots: Vec<f64>,
}

impl TryFrom<CenteredSpec> for CenteredBasis {
    type Error = Error;
    fn try_from(s: CenteredSpec) -> Result<Self> {
        Ok(Self::new(BSplineBasis::new(&s.interior_knots)?))
    }
}

impl From<CenteredBasis> for CenteredSpec {
    fn from(c: CenteredBasis) -> Self {
        Self {
            interior_knots: c.spline.interior_knots().to_vec(),
        }
    }
}

/// Gauss–Legendre nodes per knot span used for exact polynomial products.
const EXACT_NODES: usize = 4;

impl CenteredBasis {
    pub fn new(spline: BSplineBasis) -> Self {
        let means = spline.integrals();
        Self { spline, means }
    }

    pub fn spline(&self) -> &BSplineBasis {
        &self.spline
    }

    /// Number of centered features.
    pub fn len(&self) -> usize {
        self.spline.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn means(&self) -> &[f64] {
        &self.means[..self.len()]
    }

    /// `Σ_j c_j B_j(u)` over the kept functions, without the centering
    /// offset `Σ_j c_j mean_j`.
    pub fn raw_dot(&self, u: f64, c: &[f64]) -> f64 {
        let m = self.len();
        let (first, v) = self.spline.nonzero_values(u);
        v.iter()
            .enumerate()
            .filter(|(k, _)| first + k < m)
            .map(|(k, b)| b * c[first + k])
            .sum()
    }

    /// Centered feature values at `u`.
    pub fn eval_into(&self, u: f64, out: &mut [f64]) {
        let m = self.len();
        for (o, mean) in out[..m].iter_mut().zip(&self.means) {
            *o = -mean;
        }
        let (first, d) = self.spline.nonzero(u);
        for (k, v) in d[0].iter().enumerate() {
            if first + k < m {
                out[first + k] += v;
            }
        }
    }

    pub fn eval(&self, u: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(u, &mut out);
        out
    }

    /// Second derivatives of the features (centering does not affect them).
    pub fn eval_deriv2(&self, u: f64) -> Vec<f64> {
        let mut out = self.spline.eval(u, 2);
        out.truncate(self.len());
        out
    }

    /// `∫ f_j f_k` over `[0, 1]` (row-major, `len × len`).
    pub fn gram(&self) -> Vec<f64> {
        self.product_matrix(|u| self.eval(u))
    }

    /// `∫ f_j'' f_k''` over `[0, 1]`.
    pub fn roughness(&self) -> Vec<f64> {
        self.product_matrix(|u| self.eval_deriv2(u))
    }

    fn product_matrix(&self, f: impl Fn(f64) -> Vec<f64>) -> Vec<f64> {
        let m = self.len();
        let rule = self.spline.span_rule(EXACT_NODES);
        let mut out = vec![0.0; m * m];
        for (&u, &w) in rule.nodes.iter().zip(&rule.weights) {
            let v = f(u);
            for j in 0..m {
                for k in 0..m {
                    out[j * m + k] += w * v[j] * v[k];
                }
            }
        }
        out
    }
}
