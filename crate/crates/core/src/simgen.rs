//! Simulated datasets with known conditional distributions.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta as BetaDist, Distribution, Exp, Normal as NormalDist};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, Continuous, ContinuousCDF, Normal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{crps_per_row, FnCdf};
use crate::points::{Interval, PointSet};

/// Smallest Beta shape parameter used when a shape is driven by a covariate.
pub const SHAPE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseId {
    Case1,
    Case2,
    Case3,
    Case4,
    Case5,
    Case6,
    #[serde(rename = "case1_6d")]
    Case1_6d,
    #[serde(rename = "case2_6d")]
    Case2_6d,
    #[serde(rename = "case3_6d")]
    Case3_6d,
    Banana,
    CondBeta,
}

impl CaseId {
    pub const ALL: [CaseId; 11] = [
        CaseId::Case1,
        CaseId::Case2,
        CaseId::Case3,
        CaseId::Case4,
        CaseId::Case5,
        CaseId::Case6,
        CaseId::Case1_6d,
        CaseId::Case2_6d,
        CaseId::Case3_6d,
        CaseId::Banana,
        CaseId::CondBeta,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CaseId::Case1 => "case1",
            CaseId::Case2 => "case2",
            CaseId::Case3 => "case3",
            CaseId::Case4 => "case4",
            CaseId::Case5 => "case5",
            CaseId::Case6 => "case6",
            CaseId::Case1_6d => "case1_6d",
            CaseId::Case2_6d => "case2_6d",
            CaseId::Case3_6d => "case3_6d",
            CaseId::Banana => "banana",
            CaseId::CondBeta => "cond_beta",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            CaseId::Case1 | CaseId::Case2 | CaseId::Case3 => 2,
            CaseId::Case4 | CaseId::Case5 | CaseId::Case6 => 3,
            CaseId::Case1_6d | CaseId::Case2_6d | CaseId::Case3_6d => 6,
            CaseId::Banana | CaseId::CondBeta => 1,
        }
    }

    /// Natural response range, when bounded.
    pub fn response_range(self) -> Option<Interval> {
        match self {
            CaseId::Case1 | CaseId::Case4 | CaseId::Case1_6d | CaseId::CondBeta => {
                Some(Interval { lo: 0.0, hi: 1.0 })
            }
            _ => None,
        }
    }

    fn sample_x(self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let beta = |a: f64, b: f64, rng: &mut ChaCha8Rng| BetaDist::new(a, b).expect("valid shapes").sample(rng);
        match self {
            CaseId::Case1 => vec![beta(2.0, 5.0, rng), beta(5.0, 2.0, rng)],
            CaseId::Case4 => vec![beta(2.0, 5.0, rng), beta(5.0, 2.0, rng), beta(2.0, 2.0, rng)],
            CaseId::Case1_6d => {
                let mut v = Vec::with_capacity(6);
                for _ in 0..2 {
                    v.extend([beta(2.0, 5.0, rng), beta(5.0, 2.0, rng), beta(2.0, 2.0, rng)]);
                }
                v
            }
            CaseId::Case2 | CaseId::Case5 | CaseId::Case2_6d => {
                let nd = NormalDist::new(0.0, 5f64.sqrt()).expect("valid sd");
                (0..self.dim()).map(|_| nd.sample(rng)).collect()
            }
            CaseId::Case3 | CaseId::Case6 | CaseId::Case3_6d => (0..self.dim()).map(|_| rng.random::<f64>()).collect(),
            CaseId::Banana => {
                let nd = NormalDist::new(0.0, 1.0).expect("valid sd");
                loop {
                    let v: f64 = nd.sample(rng);
                    if v.abs() <= 3.0 {
                        break vec![v];
                    }
                }
            }
            CaseId::CondBeta => vec![rng.random::<f64>()],
        }
    }

    /// Parameters of `Y | X = x`.
    pub fn conditional(self, x: &[f64]) -> Conditional {
        let floor = |v: f64| v.max(SHAPE_FLOOR);
        match self {
            CaseId::Case1 => Conditional::Beta(floor(x[0]), floor(x[1])),
            CaseId::Case4 => Conditional::Beta(floor(x[0] + x[2]), floor(x[1] + x[2])),
            CaseId::Case1_6d => Conditional::Beta(floor(x[0] + x[2] + x[3] + x[5]), floor(x[1] + x[2] + x[4] + x[5])),
            CaseId::CondBeta => Conditional::Beta(floor(x[0]), x[0] * x[0] + 10.0),
            CaseId::Case2 | CaseId::Case5 | CaseId::Case2_6d => {
                Conditional::Exponential(x.iter().map(|v| v * v).sum::<f64>().sqrt())
            }
            CaseId::Case3 => Conditional::Mixture(vec![(1.0 - x[0], x[0], x[0]), (x[0], x[1], x[1])]),
            CaseId::Case6 | CaseId::Case3_6d => {
                // Dirichlet(x) weights enter Y | X only through their mean x / Σx
                let s: f64 = x.iter().sum();
                Conditional::Mixture(x.iter().map(|&v| (v / s, v, v)).collect())
            }
            CaseId::Banana => Conditional::Normal(x[0] * x[0] - 1.0, 0.5),
        }
    }

    fn sample_y(self, x: &[f64], rng: &mut ChaCha8Rng) -> f64 {
        self.conditional(x).sample(rng)
    }
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CaseId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        CaseId::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::domain(format!("unknown case '{s}'")))
    }
}

/// A conditional distribution of the response.
#[derive(Debug, Clone, PartialEq)]
pub enum Conditional {
    Beta(f64, f64),
    Exponential(f64),
    Normal(f64, f64),
    /// `(weight, mean, sd)` components.
    Mixture(Vec<(f64, f64, f64)>),
}

impl Conditional {
    pub fn cdf(&self, y: f64) -> f64 {
        match self {
            Conditional::Beta(a, b) => {
                if y <= 0.0 {
                    0.0
                } else if y >= 1.0 {
                    1.0
                } else {
                    Beta::new(*a, *b).expect("valid shapes").cdf(y)
                }
            }
            Conditional::Exponential(r) => {
                if y <= 0.0 {
                    0.0
                } else {
                    -(-r * y).exp_m1()
                }
            }
            Conditional::Normal(m, s) => Normal::new(*m, *s).expect("valid sd").cdf(y),
            Conditional::Mixture(c) => c
                .iter()
                .map(|&(w, m, s)| w * Normal::new(m, s).expect("valid sd").cdf(y))
                .sum(),
        }
    }

    pub fn density(&self, y: f64) -> f64 {
        match self {
            Conditional::Beta(a, b) => {
                if y <= 0.0 || y >= 1.0 {
                    0.0
                } else {
                    Beta::new(*a, *b).expect("valid shapes").pdf(y)
                }
            }
            Conditional::Exponential(r) => {
                if y < 0.0 {
                    0.0
                } else {
                    r * (-r * y).exp()
                }
            }
            Conditional::Normal(m, s) => Normal::new(*m, *s).expect("valid sd").pdf(y),
            Conditional::Mixture(c) => c
                .iter()
                .map(|&(w, m, s)| w * Normal::new(m, s).expect("valid sd").pdf(y))
                .sum(),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Conditional::Beta(a, b) => a / (a + b),
            Conditional::Exponential(r) => 1.0 / r,
            Conditional::Normal(m, _) => *m,
            Conditional::Mixture(c) => c.iter().map(|&(w, m, _)| w * m).sum(),
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Conditional::Beta(a, b) => {
                // small-shape draws can round a hair outside [0, 1]
                let v: f64 = BetaDist::new(*a, *b).expect("valid shapes").sample(rng);
                v.clamp(0.0, 1.0)
            }
            Conditional::Exponential(r) => Exp::new(*r).expect("valid rate").sample(rng),
            Conditional::Normal(m, s) => NormalDist::new(*m, *s).expect("valid sd").sample(rng),
            Conditional::Mixture(c) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = c.len() - 1;
                for (k, &(w, _, _)) in c.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        pick = k;
                        break;
                    }
                }
                let (_, m, s) = c[pick];
                NormalDist::new(m, s).expect("valid sd").sample(rng)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseSpec {
    pub case: CaseId,
    pub n: usize,
    pub seed: u64,
}

/// Exact conditional distribution of a case.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TruthOracle {
    pub case: CaseId,
}

impl TruthOracle {
    pub fn cond_cdf(&self, x: &[f64], y: f64) -> f64 {
        self.case.conditional(x).cdf(y)
    }

    pub fn cond_density(&self, x: &[f64], y: f64) -> f64 {
        self.case.conditional(x).density(y)
    }

    pub fn cond_mean(&self, x: &[f64]) -> f64 {
        self.case.conditional(x).mean()
    }

    /// The conditional CDF at `x` restricted to `domain`.
    pub fn slice(&self, x: &[f64], domain: Interval) -> FnCdf<impl Fn(f64) -> f64 + Sync> {
        let c = self.case.conditional(x);
        FnCdf::new(move |y| c.cdf(y), domain)
    }

    /// Draw from `Y | X = x`.
    pub fn sample(&self, x: &[f64], rng: &mut ChaCha8Rng) -> f64 {
        self.case.sample_y(x, rng)
    }
}

/// Random stream of row `i`: independent of how rows are scheduled.
fn row_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

/// Draw `spec.n` rows of the case.
pub fn generate(spec: &CaseSpec) -> Result<(Dataset, TruthOracle)> {
    if spec.n == 0 {
        return Err(Error::domain("N must be at least 1"));
    }
    let case = spec.case;
    let rows: Vec<(Vec<f64>, f64)> = (0..spec.n)
        .into_par_iter()
        .map(|i| {
            let mut rng = row_rng(spec.seed, i);
            let x = case.sample_x(&mut rng);
            let y = case.sample_y(&x, &mut rng);
            (x, y)
        })
        .collect();
    let mut coords = Vec::with_capacity(spec.n * case.dim());
    let mut y = Vec::with_capacity(spec.n);
    for (x, v) in rows {
        coords.extend(x);
        y.push(v);
    }
    let mut ds = Dataset::new(PointSet::new(case.dim(), coords)?, y)?;
    ds.y_range = case.response_range();
    Ok((ds, TruthOracle { case }))
}

/// Mean CRPS of the true conditional CDFs on a test set, integrated over
/// `domain` (which must cover the test responses).
pub fn truth_crps(oracle: &TruthOracle, test: &Dataset, domain: Interval, grid_size: usize) -> Result<f64> {
    let rows = crps_per_row(|x: &[f64]| oracle.slice(x, domain), &test.x, &test.y, grid_size)?;
    Ok(rows.iter().sum::<f64>() / rows.len() as f64)
}
