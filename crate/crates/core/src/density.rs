//! Conditional density estimation by penalized likelihood on a tensor-product
//! spline basis.
//!
//! The log density is modelled as `η(x, y) = Σ_j c_j(x) b_j(y)` where `b_j`
//! are cubic B-splines in the (normalized) response with their uniform
//! average removed, and `c(x) = Θ ξ(x)` with `ξ(x) = [1, ξ_S(x) ...]`
//! collecting tensor products of centered covariate splines for every
//! included term `S`. The leading `1` carries the response main effect.
//! Responses are mapped to `u ∈ [0, 1]`; integrals over the response use a
//! composite Gauss–Legendre rule on the response knot spans.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bspline::{BSplineBasis, CenteredBasis};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{crps_single, Cdf, ExtendedCdf, DEFAULT_GRID_SIZE};
use crate::points::{Interval, PointSet};
use crate::quadrature::{gauss_legendre_unit, QuadratureRule};

pub const DEFAULT_Y_KNOTS: usize = 12;
pub const DEFAULT_X_KNOTS: usize = 6;
/// Gauss–Legendre nodes per quadrature piece of the normalized response.
pub const NODES_PER_SPAN: usize = 6;
/// Knot spans are cut into equal quadrature pieces no wider than this (on
/// the normalized response)...
pub const MAX_PIECE_WIDTH: f64 = 1.0 / 32.0;
/// ...and into at least this many.
pub const MIN_PIECES_PER_SPAN: usize = 2;
pub const GRAD_TOL: f64 = 1e-6;
pub const MAX_NEWTON_ITERS: usize = 200;
/// Share of the fitting set held out when choosing λ.
pub const HOLDOUT_FRACTION: f64 = 0.2;

/// Eight log-spaced values from `1e-6` to `1e1`.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..8).map(|i| 10f64.powf(-6.0 + i as f64)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Likelihood,
    Pseudo,
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "likelihood" => Ok(Mode::Likelihood),
            "pseudo" => Ok(Mode::Pseudo),
            other => Err(Error::domain(format!("unknown fitting mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisConfig {
    /// Response knots, both ends included.
    pub y_knots: usize,
    /// Covariate knots per dimension, both ends included.
    pub x_knots_per_dim: usize,
    /// Covariate subsets interacting with the response. `None` means one
    /// term per covariate.
    pub terms: Option<Vec<Vec<usize>>>,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self {
            y_knots: DEFAULT_Y_KNOTS,
            x_knots_per_dim: DEFAULT_X_KNOTS,
            terms: None,
        }
    }
}

impl BasisConfig {
    pub fn resolved_terms(&self, d: usize) -> Result<Vec<Vec<usize>>> {
        if self.y_knots < 4 {
            return Err(Error::domain("at least 4 response knots are required"));
        }
        if self.x_knots_per_dim < 3 {
            return Err(Error::domain("at least 3 covariate knots per dimension are required"));
        }
        let terms = match &self.terms {
            None => (0..d).map(|q| vec![q]).collect(),
            Some(t) => t.clone(),
        };
        let mut seen: Vec<Vec<usize>> = Vec::new();
        for t in &terms {
            if t.is_empty() || t.windows(2).any(|w| w[0] >= w[1]) || t.iter().any(|&q| q >= d) {
                return Err(Error::domain(format!(
                    "term {t:?} must list distinct covariate indices below {d} in increasing order"
                )));
            }
            if seen.contains(t) {
                return Err(Error::domain(format!("term {t:?} listed twice")));
            }
            seen.push(t.clone());
        }
        Ok(terms)
    }
}

/// The fitted feature dictionary with its normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BasisSpec", into = "BasisSpec")]
pub struct Basis {
    y: CenteredBasis,
    x: Vec<CenteredBasis>,
    terms: Vec<Vec<usize>>,
    y_domain: Interval,
    x_ranges: Vec<Interval>,
    /// Quadrature pieces of `[0, 1]`; every knot is a piece boundary.
    pieces: Vec<f64>,
    quad: QuadratureRule,
    /// Response features at the quadrature nodes, `L × Y` row-major.
    yq: DMatrix<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BasisSpec {
    y_domain: Interval,
    x_ranges: Vec<Interval>,
    terms: Vec<Vec<usize>>,
    y_basis: CenteredBasis,
    x_basis: Vec<CenteredBasis>,
}

impl TryFrom<BasisSpec> for Basis {
    type Error = Error;
    fn try_from(s: BasisSpec) -> Result<Self> {
        Basis::assemble(s.y_basis, s.x_basis, s.terms, s.y_domain, s.x_ranges)
    }
}

impl From<Basis> for BasisSpec {
    fn from(b: Basis) -> Self {
        Self {
            y_domain: b.y_domain,
            x_ranges: b.x_ranges,
            terms: b.terms,
            y_basis: b.y,
            x_basis: b.x,
        }
    }
}

/// Knot spans cut into equal pieces of width at most [`MAX_PIECE_WIDTH`],
/// at least [`MIN_PIECES_PER_SPAN`] per span.
fn quadrature_pieces(breaks: &[f64]) -> Vec<f64> {
    let mut out = vec![breaks[0]];
    for w in breaks.windows(2) {
        let k = (((w[1] - w[0]) / MAX_PIECE_WIDTH).ceil() as usize).max(MIN_PIECES_PER_SPAN);
        for j in 1..k {
            out.push(w[0] + (w[1] - w[0]) * j as f64 / k as f64);
        }
        out.push(w[1]);
    }
    out
}

impl Basis {
    /// Place knots at quantiles of the data and fix the normalization.
    pub fn build(
        cfg: &BasisConfig,
        x: &PointSet,
        y: &[f64],
        y_domain: Interval,
        x_ranges: Vec<Interval>,
    ) -> Result<Self> {
        let d = x.dim();
        if x_ranges.len() != d {
            return Err(Error::domain(format!("{} covariate ranges for {d} covariates", x_ranges.len())));
        }
        let terms = cfg.resolved_terms(d)?;
        if let Some(v) = y.iter().find(|v| !y_domain.contains(**v)) {
            return Err(Error::domain(format!(
                "response {v} outside the domain [{}, {}]",
                y_domain.lo, y_domain.hi
            )));
        }
        let u: Vec<f64> = y.iter().map(|&v| (v - y_domain.lo) / y_domain.len()).collect();
        let yb = CenteredBasis::new(BSplineBasis::at_quantiles(&u, cfg.y_knots)?);
        let xb = (0..d)
            .map(|q| {
                let r = x_ranges[q];
                let col: Vec<f64> = x.column(q).iter().map(|v| (v - r.lo) / r.len()).collect();
                Ok(CenteredBasis::new(BSplineBasis::at_quantiles(&col, cfg.x_knots_per_dim)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::assemble(yb, xb, terms, y_domain, x_ranges)
    }

    fn assemble(
        y: CenteredBasis,
        x: Vec<CenteredBasis>,
        terms: Vec<Vec<usize>>,
        y_domain: Interval,
        x_ranges: Vec<Interval>,
    ) -> Result<Self> {
        if x.len() != x_ranges.len() || terms.iter().flatten().any(|&q| q >= x.len()) {
            return Err(Error::domain("inconsistent basis description"));
        }
        let pieces = quadrature_pieces(y.spline().breaks());
        let quad = QuadratureRule::composite(&pieces, NODES_PER_SPAN)?;
        let ny = y.len();
        let mut yq = DMatrix::zeros(quad.len(), ny);
        let mut buf = vec![0.0; ny];
        for (l, &u) in quad.nodes.iter().enumerate() {
            y.eval_into(u, &mut buf);
            for j in 0..ny {
                yq[(l, j)] = buf[j];
            }
        }
        Ok(Self {
            y,
            x,
            terms,
            y_domain,
            x_ranges,
            pieces,
            quad,
            yq,
        })
    }

    pub fn y_len(&self) -> usize {
        self.y.len()
    }

    /// Length of `ξ(x)`.
    pub fn x_len(&self) -> usize {
        1 + self
            .terms
            .iter()
            .map(|t| t.iter().map(|&q| self.x[q].len()).product::<usize>())
            .sum::<usize>()
    }

    pub fn n_coef(&self) -> usize {
        self.y_len() * self.x_len()
    }

    pub fn terms(&self) -> &[Vec<usize>] {
        &self.terms
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn y_domain(&self) -> Interval {
        self.y_domain
    }

    pub fn x_ranges(&self) -> &[Interval] {
        &self.x_ranges
    }

    /// Quadrature rule on the normalized response `[0, 1]`.
    pub fn quadrature(&self) -> &QuadratureRule {
        &self.quad
    }

    pub fn y_basis(&self) -> &CenteredBasis {
        &self.y
    }

    pub fn normalize_y(&self, y: f64) -> f64 {
        (y - self.y_domain.lo) / self.y_domain.len()
    }

    /// Covariates mapped to `[0, 1]`, clamped; the flag reports clamping.
    pub fn normalize_x(&self, x: &[f64]) -> (Vec<f64>, bool) {
        let mut clamped = false;
        let v = x
            .iter()
            .zip(&self.x_ranges)
            .map(|(&v, r)| {
                let t = (v - r.lo) / r.len();
                if !(0.0..=1.0).contains(&t) {
                    clamped = true;
                }
                t.clamp(0.0, 1.0)
            })
            .collect();
        (v, clamped)
    }

    /// `ξ(x)` for normalized covariates.
    pub fn x_features(&self, xn: &[f64]) -> Vec<f64> {
        let per_dim: Vec<Vec<f64>> = self.x.iter().zip(xn).map(|(b, &t)| b.eval(t)).collect();
        let mut out = Vec::with_capacity(self.x_len());
        out.push(1.0);
        for t in &self.terms {
            let mut v = vec![1.0];
            for &q in t {
                let f = &per_dim[q];
                v = v.iter().flat_map(|a| f.iter().map(move |b| a * b)).collect();
            }
            out.extend(v);
        }
        out
    }

    pub fn y_features(&self, u: f64) -> Vec<f64> {
        self.y.eval(u)
    }

    /// Roughness penalty matrix `P` with `J(η) = θᵀ P θ`.
    ///
    /// The response main effect is penalized by the integrated squared second
    /// derivative in `u`. A term on covariates `S` is penalized by the sum of
    /// integrated squared second derivatives along `u` and along each
    /// covariate in `S`.
    pub fn penalty(&self) -> DMatrix<f64> {
        let ny = self.y_len();
        let nx = self.x_len();
        let sq = |v: Vec<f64>, m: usize| DMatrix::from_row_slice(m, m, &v);
        let gy = sq(self.y.gram(), ny);
        let ry = sq(self.y.roughness(), ny);
        let gx: Vec<DMatrix<f64>> = self.x.iter().map(|b| sq(b.gram(), b.len())).collect();
        let rx: Vec<DMatrix<f64>> = self.x.iter().map(|b| sq(b.roughness(), b.len())).collect();
        let mut p = DMatrix::zeros(ny * nx, ny * nx);
        let mut place = |ay: &DMatrix<f64>, ax: &DMatrix<f64>, off: usize| {
            for j in 0..ny {
                for jj in 0..ny {
                    let s = ay[(j, jj)];
                    if s == 0.0 {
                        continue;
                    }
                    for a in 0..ax.nrows() {
                        for b in 0..ax.ncols() {
                            p[(j * nx + off + a, jj * nx + off + b)] += s * ax[(a, b)];
                        }
                    }
                }
            }
        };
        place(&ry, &DMatrix::from_element(1, 1, 1.0), 0);
        let mut off = 1;
        for t in &self.terms {
            let kron_with = |pick: Option<usize>| {
                let mut m = DMatrix::from_element(1, 1, 1.0);
                for &q in t {
                    let f = if pick == Some(q) { &rx[q] } else { &gx[q] };
                    m = m.kronecker(f);
                }
                m
            };
            let g_all = kron_with(None);
            place(&ry, &g_all, off);
            let mut r_sum = DMatrix::zeros(g_all.nrows(), g_all.ncols());
            for &q in t {
                r_sum += kron_with(Some(q));
            }
            place(&gy, &r_sum, off);
            off += g_all.nrows();
        }
        p
    }
}

/// Features of a fitting set, ready for repeated criterion evaluation.
#[derive(Debug, Clone)]
pub struct Design {
    /// `n × X` covariate features.
    xi: DMatrix<f64>,
    /// `n × Y` response features at the observed responses.
    by: DMatrix<f64>,
    pub clamped_rows: usize,
}

impl Design {
    pub fn new(basis: &Basis, data: &Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::domain("cannot fit a density to an empty set"));
        }
        if data.dim() != basis.dim() {
            return Err(Error::domain(format!(
                "data have {} covariates, the basis expects {}",
                data.dim(),
                basis.dim()
            )));
        }
        let n = data.len();
        let mut xi = DMatrix::zeros(n, basis.x_len());
        let mut by = DMatrix::zeros(n, basis.y_len());
        let mut clamped_rows = 0;
        for i in 0..n {
            let y = data.y[i];
            if !basis.y_domain.contains(y) {
                return Err(Error::domain(format!(
                    "row {i}: response {y} outside the domain [{}, {}]",
                    basis.y_domain.lo, basis.y_domain.hi
                )));
            }
            let (xn, c) = basis.normalize_x(data.x.row(i));
            clamped_rows += usize::from(c);
            for (k, v) in basis.x_features(&xn).into_iter().enumerate() {
                xi[(i, k)] = v;
            }
            for (j, v) in basis.y_features(basis.normalize_y(y)).into_iter().enumerate() {
                by[(i, j)] = v;
            }
        }
        Ok(Self { xi, by, clamped_rows })
    }

    pub fn len(&self) -> usize {
        self.xi.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, rows: &[usize]) -> Design {
        Design {
            xi: self.xi.select_rows(rows),
            by: self.by.select_rows(rows),
            clamped_rows: 0,
        }
    }
}

/// Precomputed `r_ij = ∫ b_j(u) ρ(x_i, u) du` for the pseudo-likelihood.
#[derive(Debug, Clone)]
pub struct PseudoCache {
    r: DMatrix<f64>,
}

impl PseudoCache {
    /// `rho(x, y)` is a density in `y` on the response domain, in original
    /// units.
    pub fn new(basis: &Basis, data: &Dataset, rho: &(dyn Fn(&[f64], f64) -> f64 + Sync)) -> Result<Self> {
        let n = data.len();
        let ny = basis.y_len();
        let len = basis.y_domain.len();
        let rows: Vec<Result<Vec<f64>>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let x = data.x.row(i);
                let mut out = vec![0.0; ny];
                for (l, (&u, &w)) in basis.quad.nodes.iter().zip(&basis.quad.weights).enumerate() {
                    let r = rho(x, basis.y_domain.lo + u * len) * len;
                    if !r.is_finite() || r < 0.0 {
                        return Err(Error::numerical(format!("reference density is {r} at row {i}")));
                    }
                    for j in 0..ny {
                        out[j] += w * r * basis.yq[(l, j)];
                    }
                }
                Ok(out)
            })
            .collect();
        let mut r = DMatrix::zeros(n, ny);
        for (i, row) in rows.into_iter().enumerate() {
            for (j, v) in row?.into_iter().enumerate() {
                r[(i, j)] = v;
            }
        }
        Ok(Self { r })
    }

    /// Uniform reference density: every `r_ij` is the quadrature average of
    /// a centered feature, i.e. zero up to rounding.
    pub fn uniform(basis: &Basis, n: usize) -> Self {
        let w = DVector::from_column_slice(&basis.quad.weights);
        let means = basis.yq.tr_mul(&w);
        Self {
            r: DMatrix::from_fn(n, basis.y_len(), |_, j| means[j]),
        }
    }

    fn select(&self, rows: &[usize]) -> PseudoCache {
        PseudoCache {
            r: self.r.select_rows(rows),
        }
    }
}

/// Criterion value, gradient and (optionally) Hessian.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    /// Rounding-error scale of `value`.
    pub noise: f64,
    pub gradient: Vec<f64>,
    pub hessian: Option<DMatrix<f64>>,
}

struct Criterion<'a> {
    basis: &'a Basis,
    design: &'a Design,
    pseudo: Option<&'a PseudoCache>,
    penalty: &'a DMatrix<f64>,
    lambda: f64,
}

/// Per-row pieces: loss, gradient weights over response features and the
/// `Y × Y` curvature.
struct RowTerms {
    loss: f64,
    g: Vec<f64>,
    c: Vec<f64>,
}

impl Criterion<'_> {
    fn eval(&self, theta: &[f64], hessian: bool) -> Result<Evaluation> {
        let ny = self.basis.y_len();
        let nx = self.basis.x_len();
        let n = self.design.len();
        if theta.len() != ny * nx {
            return Err(Error::domain(format!("{} coefficients, expected {}", theta.len(), ny * nx)));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("coefficients must be finite"));
        }
        let th = DMatrix::from_row_slice(ny, nx, theta);
        let c = &self.design.xi * th.transpose(); // n × Y
        let quad = &self.basis.quad;
        let rows: Vec<Result<RowTerms>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let ci = c.row(i);
                let by = self.design.by.row(i);
                let eta_i = by.dot(&ci);
                match self.pseudo {
                    None => {
                        let e: Vec<f64> = (0..quad.len()).map(|l| self.basis.yq.row(l).dot(&ci)).collect();
                        let m = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let p: Vec<f64> = e.iter().zip(&quad.weights).map(|(v, w)| w * (v - m).exp()).collect();
                        let s: f64 = p.iter().sum();
                        let log_z = m + s.ln();
                        let mut mean = vec![0.0; ny];
                        let mut second = vec![0.0; if hessian { ny * ny } else { 0 }];
                        for (l, pl) in p.iter().enumerate() {
                            let pl = pl / s;
                            let b = self.basis.yq.row(l);
                            for j in 0..ny {
                                mean[j] += pl * b[j];
                            }
                            if hessian {
                                for j in 0..ny {
                                    for k in j..ny {
                                        second[j * ny + k] += pl * b[j] * b[k];
                                    }
                                }
                            }
                        }
                        let loss = log_z - eta_i;
                        if !loss.is_finite() {
                            return Err(Error::numerical(format!("likelihood term at row {i} is {loss}")));
                        }
                        let g: Vec<f64> = (0..ny).map(|j| mean[j] - by[j]).collect();
                        if hessian {
                            for j in 0..ny {
                                for k in j..ny {
                                    let v = second[j * ny + k] - mean[j] * mean[k];
                                    second[j * ny + k] = v;
                                    second[k * ny + j] = v;
                                }
                            }
                        }
                        Ok(RowTerms { loss, g, c: second })
                    }
                    Some(cache) => {
                        let r = cache.r.row(i);
                        let ex = (-eta_i).exp();
                        let loss = ex + r.dot(&ci);
                        if !loss.is_finite() {
                            return Err(Error::numerical(format!(
                                "pseudo-likelihood term at row {i} is {loss} (η = {eta_i})"
                            )));
                        }
                        let g: Vec<f64> = (0..ny).map(|j| r[j] - ex * by[j]).collect();
                        let mut cm = Vec::new();
                        if hessian {
                            cm = vec![0.0; ny * ny];
                            for j in 0..ny {
                                for k in 0..ny {
                                    cm[j * ny + k] = ex * by[j] * by[k];
                                }
                            }
                        }
                        Ok(RowTerms { loss, g, c: cm })
                    }
                }
            })
            .collect();
        let mut loss = 0.0;
        let mut abs_loss = 0.0;
        let mut gmat = DMatrix::zeros(n, ny);
        let mut curv = if hessian { DMatrix::zeros(n, ny * ny) } else { DMatrix::zeros(0, 0) };
        for (i, r) in rows.into_iter().enumerate() {
            let r = r?;
            loss += r.loss;
            abs_loss += r.loss.abs();
            for j in 0..ny {
                gmat[(i, j)] = r.g[j];
            }
            if hessian {
                for (k, v) in r.c.iter().enumerate() {
                    curv[(i, k)] = *v;
                }
            }
        }
        let inv_n = 1.0 / n as f64;
        let tv = DVector::from_column_slice(theta);
        let p_theta = self.penalty * &tv;
        let pen = tv.dot(&p_theta);
        let value = inv_n * loss + 0.5 * self.lambda * pen;
        let ta = tv.abs();
        let noise = f64::EPSILON * (inv_n * abs_loss + 0.5 * self.lambda * ta.dot(&(self.penalty.abs() * &ta)));
        if !value.is_finite() {
            return Err(Error::numerical(format!("criterion is {value} (penalty {pen})")));
        }
        let gm = (gmat.transpose() * &self.design.xi) * inv_n; // Y × X
        let mut gradient = vec![0.0; ny * nx];
        for j in 0..ny {
            for k in 0..nx {
                gradient[j * nx + k] = gm[(j, k)] + self.lambda * p_theta[j * nx + k];
            }
        }
        let hessian = if hessian {
            let mut h = self.penalty * self.lambda;
            let xi = &self.design.xi;
            for j in 0..ny {
                for jj in j..ny {
                    let w = curv.column(j * ny + jj);
                    let mut scaled = xi.clone();
                    for (i, mut row) in scaled.row_iter_mut().enumerate() {
                        row *= w[i] * inv_n;
                    }
                    let m = xi.transpose() * scaled;
                    for a in 0..nx {
                        for b in 0..nx {
                            h[(j * nx + a, jj * nx + b)] += m[(a, b)];
                            if jj != j {
                                h[(jj * nx + b, j * nx + a)] += m[(a, b)];
                            }
                        }
                    }
                }
            }
            Some(h)
        } else {
            None
        };
        Ok(Evaluation {
            value,
            noise,
            gradient,
            hessian,
        })
    }
}

/// Penalized negative log-likelihood
/// `-(1/n) Σ [η(x_i, y_i) - log ∫ e^{η(x_i, u)} du] + (λ/2) θᵀPθ`
/// on normalized responses, with its gradient.
pub fn criterion_likelihood(coeffs: &[f64], data: &Dataset, lambda: f64, basis: &Basis) -> Result<(f64, Vec<f64>)> {
    let design = Design::new(basis, data)?;
    let penalty = basis.penalty();
    let e = Criterion {
        basis,
        design: &design,
        pseudo: None,
        penalty: &penalty,
        lambda,
    }
    .eval(coeffs, false)?;
    Ok((e.value, e.gradient))
}

/// Penalized pseudo-likelihood
/// `(1/n) Σ [e^{-η(x_i, y_i)} + ∫ η(x_i, u) ρ(x_i, u) du] + (λ/2) θᵀPθ`
/// with its gradient.
pub fn criterion_pseudo(
    coeffs: &[f64],
    data: &Dataset,
    lambda: f64,
    basis: &Basis,
    rho: &(dyn Fn(&[f64], f64) -> f64 + Sync),
) -> Result<(f64, Vec<f64>)> {
    let cache = PseudoCache::new(basis, data, rho)?;
    criterion_pseudo_cached(coeffs, data, lambda, basis, &cache)
}

/// [`criterion_pseudo`] with the reference-density integrals precomputed.
pub fn criterion_pseudo_cached(
    coeffs: &[f64],
    data: &Dataset,
    lambda: f64,
    basis: &Basis,
    cache: &PseudoCache,
) -> Result<(f64, Vec<f64>)> {
    let design = Design::new(basis, data)?;
    let penalty = basis.penalty();
    let e = Criterion {
        basis,
        design: &design,
        pseudo: Some(cache),
        penalty: &penalty,
        lambda,
    }
    .eval(coeffs, false)?;
    Ok((e.value, e.gradient))
}

/// How λ is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaChoice {
    Fixed(f64),
    Grid(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub basis: BasisConfig,
    pub mode: Mode,
    pub lambda: LambdaChoice,
    /// Seed of the λ-selection holdout split.
    pub seed: u64,
    /// Response domain; derived from the data when absent.
    pub y_domain: Option<Interval>,
    /// Covariate ranges; derived from the data when absent.
    pub x_ranges: Option<Vec<Interval>>,
    pub max_iters: usize,
    pub grad_tol: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            basis: BasisConfig::default(),
            mode: Mode::Likelihood,
            lambda: LambdaChoice::Grid(default_lambda_grid()),
            seed: 0,
            y_domain: None,
            x_ranges: None,
            max_iters: MAX_NEWTON_ITERS,
            grad_tol: GRAD_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub criterion: f64,
    pub criterion_at_zero: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stop: StopReason,
    pub lambda: f64,
    pub lambda_path: Vec<f64>,
    pub validation_crps: Vec<f64>,
    /// Fitting rows whose covariates fell outside the ranges and were clamped.
    pub clamped_rows: usize,
}

/// A fitted conditional density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityModel {
    pub basis_config: BasisConfig,
    pub basis: Basis,
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    pub mode: Mode,
}

/// Why the optimizer stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Gradient norm reached the tolerance.
    Gradient,
    /// The predicted decrease `gᵀH⁻¹g / 2` fell below the rounding noise of
    /// the criterion (or [`DECREMENT_TOL`]); no representable step lowers it.
    Decrement,
    /// The line search found no decrease.
    LineSearch,
    MaxIterations,
}

/// Predicted-decrease threshold of the Newton iteration.
pub const DECREMENT_TOL: f64 = 1e-13;

struct NewtonOutcome {
    theta: Vec<f64>,
    eval: Evaluation,
    value_at_zero: f64,
    iterations: usize,
    stop: StopReason,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Damped Newton from zero with backtracking line search.
fn newton(crit: &Criterion, max_iters: usize, tol: f64) -> Result<NewtonOutcome> {
    let dim = crit.basis.n_coef();
    let mut theta = vec![0.0; dim];
    let mut eval = crit.eval(&theta, true)?;
    let value_at_zero = eval.value;
    let mut iterations = 0;
    let stop = loop {
        if norm(&eval.gradient) <= tol {
            break StopReason::Gradient;
        }
        if iterations == max_iters {
            break StopReason::MaxIterations;
        }
        iterations += 1;
        let h = eval.hessian.take().expect("requested");
        let g = DVector::from_column_slice(&eval.gradient);
        let step = solve_spd(h, &g).ok_or_else(|| Error::numerical("Newton system could not be solved"))?;
        let slope = g.dot(&step);
        if 0.5 * slope <= (DECREMENT_TOL * (1.0 + eval.value.abs())).max(100.0 * eval.noise) {
            break StopReason::Decrement;
        }
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-10 {
            let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, s)| a - t * s).collect();
            if let Ok(e) = crit.eval(&trial, false) {
                if e.value < eval.value && e.value <= eval.value - 1e-4 * t * slope {
                    accepted = Some(trial);
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some(next) => {
                theta = next;
                eval = crit.eval(&theta, true)?;
            }
            None => break StopReason::LineSearch,
        }
    };
    eval.hessian = None;
    Ok(NewtonOutcome {
        theta,
        eval,
        value_at_zero,
        iterations,
        stop,
    })
}

/// Solve `H x = g` for symmetric positive (semi)definite `H`, adding a
/// growing ridge when the Cholesky factorization fails.
fn solve_spd(h: DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = h.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut ridge = 0.0;
    for _ in 0..30 {
        let mut m = h.clone();
        if ridge > 0.0 {
            for i in 0..m.nrows() {
                m[(i, i)] += ridge;
            }
        }
        if let Some(ch) = m.cholesky() {
            let x = ch.solve(g);
            if x.iter().all(|v| v.is_finite()) {
                return Some(x);
            }
        }
        ridge = if ridge == 0.0 { scale * 1e-12 } else { ridge * 10.0 };
    }
    None
}

fn fit_fixed(
    basis: &Basis,
    design: &Design,
    pseudo: Option<&PseudoCache>,
    penalty: &DMatrix<f64>,
    lambda: f64,
    cfg: &FitConfig,
) -> Result<NewtonOutcome> {
    let crit = Criterion {
        basis,
        design,
        pseudo,
        penalty,
        lambda,
    };
    newton(&crit, cfg.max_iters, cfg.grad_tol)
}

/// Fit a conditional density to `data`.
pub fn fit(data: &Dataset, cfg: &FitConfig) -> Result<(DensityModel, FitReport)> {
    if data.is_empty() {
        return Err(Error::domain("cannot fit a density to an empty set"));
    }
    let y_domain = match cfg.y_domain {
        Some(d) => d,
        None => data.response_domain()?,
    };
    let x_ranges = match &cfg.x_ranges {
        Some(r) => r.clone(),
        None => data.x_ranges()?,
    };
    let basis = Basis::build(&cfg.basis, &data.x, &data.y, y_domain, x_ranges)?;
    let design = Design::new(&basis, data)?;
    let penalty = basis.penalty();
    let pseudo = match cfg.mode {
        Mode::Likelihood => None,
        Mode::Pseudo => Some(PseudoCache::uniform(&basis, data.len())),
    };
    let mut lambda_path = Vec::new();
    let mut validation_crps = Vec::new();
    let lambda = match &cfg.lambda {
        LambdaChoice::Fixed(l) => *l,
        LambdaChoice::Grid(grid) => {
            if grid.is_empty() {
                return Err(Error::domain("empty λ grid"));
            }
            let n = data.len();
            let n_hold = ((n as f64) * HOLDOUT_FRACTION).round() as usize;
            if n_hold == 0 || n - n_hold < 2 {
                grid[grid.len() / 2]
            } else {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
                let (hold, train) = idx.split_at(n_hold);
                let train_design = design.select(train);
                let train_pseudo = pseudo.as_ref().map(|p| p.select(train));
                let hold_set = data.subset(hold);
                for &l in grid {
                    let out = fit_fixed(&basis, &train_design, train_pseudo.as_ref(), &penalty, l, cfg)?;
                    let model = DensityModel {
                        basis_config: cfg.basis.clone(),
                        basis: basis.clone(),
                        coefficients: out.theta,
                        lambda: l,
                        mode: cfg.mode,
                    };
                    lambda_path.push(l);
                    validation_crps.push(model.mean_crps(&hold_set.x, &hold_set.y, DEFAULT_GRID_SIZE)?);
                }
                let best = (0..grid.len())
                    .min_by(|&a, &b| validation_crps[a].total_cmp(&validation_crps[b]).then(a.cmp(&b)))
                    .expect("non-empty");
                grid[best]
            }
        }
    };
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::domain(format!("λ must be positive and finite, got {lambda}")));
    }
    let out = fit_fixed(&basis, &design, pseudo.as_ref(), &penalty, lambda, cfg)?;
    let report = FitReport {
        criterion: out.eval.value,
        criterion_at_zero: out.value_at_zero,
        grad_norm: norm(&out.eval.gradient),
        iterations: out.iterations,
        converged: matches!(out.stop, StopReason::Gradient | StopReason::Decrement),
        stop: out.stop,
        lambda,
        lambda_path,
        validation_crps,
        clamped_rows: design.clamped_rows,
    };
    Ok((
        DensityModel {
            basis_config: cfg.basis.clone(),
            basis,
            coefficients: out.theta,
            lambda,
            mode: cfg.mode,
        },
        report,
    ))
}

/// The conditional distribution at one covariate value.
#[derive(Debug, Clone)]
pub struct Slice<'a> {
    basis: &'a Basis,
    c: Vec<f64>,
    /// `Σ_j c_j mean_j`: centering offset of `η`.
    offset: f64,
    log_z: f64,
    /// Mass below each quadrature piece boundary.
    prefix: Vec<f64>,
    gl: (Vec<f64>, Vec<f64>),
    /// The covariates were outside the fitted ranges and were clamped.
    pub clamped: bool,
}

impl Slice<'_> {
    fn eta(&self, u: f64) -> f64 {
        self.basis.y.raw_dot(u, &self.c) - self.offset
    }

    /// Density of the normalized response.
    pub fn density_unit(&self, u: f64) -> f64 {
        if !(0.0..=1.0).contains(&u) {
            return 0.0;
        }
        (self.eta(u) - self.log_z).exp()
    }

    /// Density in original response units.
    pub fn density(&self, y: f64) -> f64 {
        self.density_unit(self.basis.normalize_y(y)) / self.basis.y_domain.len()
    }

    pub fn log_density(&self, y: f64) -> f64 {
        let u = self.basis.normalize_y(y);
        if !(0.0..=1.0).contains(&u) {
            return f64::NEG_INFINITY;
        }
        self.eta(u) - self.log_z - self.basis.y_domain.len().ln()
    }

    /// Density mass of `[a, b]` by a Gauss–Legendre rule.
    fn mass(&self, a: f64, b: f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.gl
            .0
            .iter()
            .zip(&self.gl.1)
            .map(|(t, w)| w * half * self.density_unit(mid + half * t))
            .sum()
    }

    fn cdf_unit(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        if u >= 1.0 {
            return 1.0;
        }
        let pieces = &self.basis.pieces;
        let j = (pieces.partition_point(|&b| b <= u) - 1).min(pieces.len() - 2);
        let total = self.prefix[self.prefix.len() - 1];
        ((self.prefix[j] + self.mass(pieces[j], u)) / total).clamp(0.0, 1.0)
    }
}

impl Cdf for Slice<'_> {
    fn cdf(&self, y: f64) -> f64 {
        self.cdf_unit(self.basis.normalize_y(y))
    }

    fn domain(&self) -> Interval {
        self.basis.y_domain
    }
}

impl DensityModel {
    pub fn domain(&self) -> Interval {
        self.basis.y_domain
    }

    /// `θᵀ P θ`.
    pub fn roughness(&self) -> f64 {
        let t = DVector::from_column_slice(&self.coefficients);
        t.dot(&(self.basis.penalty() * &t))
    }

    /// The conditional distribution at `x` (clamped to the fitted ranges).
    pub fn slice(&self, x: &[f64]) -> Slice<'_> {
        let b = &self.basis;
        let (xn, clamped) = b.normalize_x(x);
        let xi = b.x_features(&xn);
        let (ny, nx) = (b.y_len(), b.x_len());
        let c: Vec<f64> = (0..ny)
            .map(|j| (0..nx).map(|k| self.coefficients[j * nx + k] * xi[k]).sum())
            .collect();
        // same evaluation path as the partial spans in `cdf`, so the CDF is
        // monotone across knots
        let offset: f64 = c.iter().zip(b.y.means()).map(|(a, m)| a * m).sum();
        let e: Vec<f64> = b.quad.nodes.iter().map(|&u| b.y.raw_dot(u, &c) - offset).collect();
        let m = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = e.iter().zip(&b.quad.weights).map(|(v, w)| w * (v - m).exp()).sum();
        let log_z = m + s.ln();
        let mut slice = Slice {
            basis: b,
            c,
            offset,
            log_z,
            prefix: Vec::new(),
            gl: gauss_legendre_unit(NODES_PER_SPAN),
            clamped,
        };
        let mut prefix = Vec::with_capacity(b.pieces.len());
        prefix.push(0.0);
        let mut acc = 0.0;
        for (l, (&v, &w)) in e.iter().zip(&b.quad.weights).enumerate() {
            acc += w * (v - log_z).exp();
            if (l + 1) % NODES_PER_SPAN == 0 {
                prefix.push(acc);
            }
        }
        slice.prefix = prefix;
        slice
    }

    pub fn cond_density(&self, x: &[f64], y: f64) -> f64 {
        self.slice(x).density(y)
    }

    pub fn cond_cdf(&self, x: &[f64], y: f64) -> f64 {
        self.slice(x).cdf(y)
    }

    /// Mean CRPS over test rows. The integration range covers the model
    /// domain and all test responses; the CDF is 0 below and 1 above the
    /// model domain.
    pub fn mean_crps(&self, x: &PointSet, y: &[f64], grid_size: usize) -> Result<f64> {
        Ok(self.crps_per_row(x, y, grid_size)?.iter().sum::<f64>() / y.len() as f64)
    }

    pub fn crps_per_row(&self, x: &PointSet, y: &[f64], grid_size: usize) -> Result<Vec<f64>> {
        if y.is_empty() || x.len() != y.len() {
            return Err(Error::domain("test covariates and responses must be non-empty and of equal length"));
        }
        let domain = Interval::expanded_from_values(y, 0.0)
            .map(|r| r.hull(&self.domain()))
            .unwrap_or_else(|_| self.domain().hull(&Interval { lo: y[0], hi: y[0] }));
        (0..y.len())
            .into_par_iter()
            .map(|i| {
                let s = self.slice(x.row(i));
                let ext = ExtendedCdf { inner: s, domain };
                crps_single(&ext, y[i], grid_size).map_err(|e| Error::Domain(format!("test row {i}: {e}")))
            })
            .collect()
    }
}
