//! Covariate-space partitions: equal-width bins on every coordinate, or a
//! Voronoi tessellation around k-means or support-point centers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::{sq_euclidean, PointSet};
use crate::support_points::{support_points_nd, SpConfig, SpInit};

const KMEANS_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    Bins,
    Voronoi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Bins,
    VoronoiKmeans,
    VoronoiSp,
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bins" => Ok(Strategy::Bins),
            "voronoi_kmeans" | "kmeans" => Ok(Strategy::VoronoiKmeans),
            "voronoi_sp" | "sp" => Ok(Strategy::VoronoiSp),
            other => Err(Error::domain(format!("unknown partition strategy '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionConfig {
    pub strategy: Strategy,
    pub k_target: usize,
    pub seed: u64,
}

/// Cell descriptors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Descriptors {
    /// Interval edges per coordinate (`intervals[q] + 1` edges each). Cells are
    /// numbered with the first coordinate varying fastest.
    Bins { edges: Vec<Vec<f64>> },
    Voronoi { centers: PointSet },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub kind: PartitionKind,
    pub k: usize,
    pub cell_of: Vec<usize>,
    pub cells: Vec<Vec<usize>>,
    pub descriptors: Descriptors,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Compact form written next to reduction outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionSummary {
    pub kind: PartitionKind,
    pub k: usize,
    pub cell_sizes: Vec<usize>,
    pub descriptors: Descriptors,
}

impl Partition {
    pub fn sizes(&self) -> Vec<usize> {
        self.cells.iter().map(Vec::len).collect()
    }

    pub fn summary(&self) -> PartitionSummary {
        PartitionSummary {
            kind: self.kind,
            k: self.k,
            cell_sizes: self.sizes(),
            descriptors: self.descriptors.clone(),
        }
    }

    fn from_assignment(
        kind: PartitionKind,
        k: usize,
        cell_of: Vec<usize>,
        descriptors: Descriptors,
        warnings: Vec<String>,
    ) -> Self {
        let mut cells = vec![Vec::new(); k];
        for (row, &c) in cell_of.iter().enumerate() {
            cells[c].push(row);
        }
        Self {
            kind,
            k,
            cell_of,
            cells,
            descriptors,
            warnings,
        }
    }
}

/// Number of cells for `n` representative points: `round(n^{3/5})`, at least 1.
pub fn choose_k(n: usize) -> usize {
    ((n as f64).powf(0.6).round() as usize).max(1)
}

/// Equal-width binning with `round(K_target^{1/d})` intervals per coordinate.
pub fn bin_partition(x: &PointSet, k_target: usize) -> Result<Partition> {
    if x.is_empty() {
        return Err(Error::domain("cannot partition an empty covariate set"));
    }
    if k_target == 0 {
        return Err(Error::domain("K_target must be at least 1"));
    }
    if !x.all_finite() {
        return Err(Error::domain("covariates contain NaN or infinite values"));
    }
    let d = x.dim();
    let kappa = ((k_target as f64).powf(1.0 / d as f64).round() as usize).max(1);
    let mut warnings = Vec::new();
    let mut edges = Vec::with_capacity(d);
    for (q, (lo, hi)) in x.bounds().into_iter().enumerate() {
        if hi > lo {
            let w = (hi - lo) / kappa as f64;
            let mut e: Vec<f64> = (0..kappa).map(|i| lo + w * i as f64).collect();
            e.push(hi);
            edges.push(e);
        } else {
            warnings.push(format!(
                "covariate {q} is constant ({lo}); using a single interval"
            ));
            edges.push(vec![lo, hi]);
        }
    }
    let counts: Vec<usize> = edges.iter().map(|e| e.len() - 1).collect();
    let k: usize = counts.iter().product();
    let cell_of: Vec<usize> = x
        .rows()
        .map(|r| {
            let mut cell = 0;
            let mut stride = 1;
            for (q, v) in r.iter().enumerate() {
                cell += stride * interval_index(&edges[q], *v);
                stride *= counts[q];
            }
            cell
        })
        .collect();
    Ok(Partition::from_assignment(
        PartitionKind::Bins,
        k,
        cell_of,
        Descriptors::Bins { edges },
        warnings,
    ))
}

/// Index of the interval of `edges` containing `v`, last interval closed.
fn interval_index(edges: &[f64], v: f64) -> usize {
    let m = edges.len() - 1;
    if m == 1 {
        return 0;
    }
    let (lo, hi) = (edges[0], edges[m]);
    let mut i = (((v - lo) / (hi - lo)) * m as f64).floor().clamp(0.0, (m - 1) as f64) as usize;
    while i > 0 && v < edges[i] {
        i -= 1;
    }
    while i + 1 < m && v >= edges[i + 1] {
        i += 1;
    }
    i
}

/// Per-dimension bounds of bin cell `cell`.
pub fn bin_bounds(edges: &[Vec<f64>], mut cell: usize) -> Vec<(f64, f64)> {
    edges
        .iter()
        .map(|e| {
            let m = e.len() - 1;
            let i = cell % m;
            cell /= m;
            (e[i], e[i + 1])
        })
        .collect()
}

fn nearest_center(x: &[f64], centers: &PointSet) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, row) in centers.rows().enumerate() {
        let d = sq_euclidean(x, row);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

fn assign_all(x: &PointSet, centers: &PointSet) -> Vec<usize> {
    (0..x.len())
        .into_par_iter()
        .map(|i| nearest_center(x.row(i), centers))
        .collect()
}

/// Assign every row to its nearest center (Euclidean, ties to the lowest
/// center index).
pub fn voronoi_partition(x: &PointSet, centers: &PointSet) -> Result<Partition> {
    if centers.is_empty() {
        return Err(Error::domain("Voronoi partition needs at least one center"));
    }
    if x.dim() != centers.dim() {
        return Err(Error::domain(format!(
            "covariates have dimension {} but centers have {}",
            x.dim(),
            centers.dim()
        )));
    }
    let cell_of = assign_all(x, centers);
    Ok(Partition::from_assignment(
        PartitionKind::Voronoi,
        centers.len(),
        cell_of,
        Descriptors::Voronoi {
            centers: centers.clone(),
        },
        Vec::new(),
    ))
}

fn kmeans_pp_init(x: &PointSet, k: usize, rng: &mut ChaCha8Rng) -> PointSet {
    let n = x.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centers = x.select(&[first]);
    let mut d2: Vec<f64> = x.rows().map(|r| sq_euclidean(r, x.row(first))).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if *w <= 0.0 {
                    continue;
                }
                if target < *w {
                    idx = i;
                    break;
                }
                target -= w;
            }
            if chosen[idx] {
                (0..n).find(|&i| !chosen[i] && d2[i] > 0.0).unwrap_or(idx)
            } else {
                idx
            }
        } else {
            // every remaining row coincides with a center
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        centers.push(x.row(pick));
        let c = x.row(pick);
        for (i, r) in x.rows().enumerate() {
            d2[i] = d2[i].min(sq_euclidean(r, c));
        }
    }
    centers
}

/// Lloyd's k-means from a seeded k-means++ start. Centers are returned in
/// the order of the lowest row index assigned to each; centers that end up
/// with no rows come last.
pub fn kmeans_centers(x: &PointSet, k: usize, seed: u64) -> Result<PointSet> {
    if k == 0 {
        return Err(Error::domain("k-means needs K >= 1"));
    }
    if k > x.len() {
        return Err(Error::domain(format!(
            "k-means asked for {k} centers from {} rows",
            x.len()
        )));
    }
    if !x.all_finite() {
        return Err(Error::domain("covariates contain NaN or infinite values"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = kmeans_pp_init(x, k, &mut rng);
    let dim = x.dim();
    let mut assignment = assign_all(x, &centers);
    for _ in 0..KMEANS_MAX_ITERS {
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (r, &c) in x.rows().zip(&assignment) {
            counts[c] += 1;
            for (acc, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(r) {
                *acc += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let row = centers.row_mut(c);
                for (q, v) in row.iter_mut().enumerate() {
                    *v = sums[c * dim + q] / counts[c] as f64;
                }
            }
        }
        let next = assign_all(x, &centers);
        if next == assignment {
            break;
        }
        assignment = next;
    }
    let mut first_row = vec![usize::MAX; k];
    for (row, &c) in assignment.iter().enumerate() {
        first_row[c] = first_row[c].min(row);
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by_key(|&c| (first_row[c], c));
    Ok(centers.select(&order))
}

/// Voronoi centers placed by support points of the covariate cloud.
pub fn sp_centers(x: &PointSet, k: usize, cfg: &SpConfig) -> Result<PointSet> {
    let cfg = SpConfig {
        init: SpInit::RandomSubsample,
        ..cfg.clone()
    };
    Ok(support_points_nd(x, k, &cfg)?.points)
}

/// Build the partition requested by `cfg`.
pub fn build_partition(x: &PointSet, cfg: &PartitionConfig, sp_cfg: &SpConfig) -> Result<Partition> {
    match cfg.strategy {
        Strategy::Bins => bin_partition(x, cfg.k_target),
        Strategy::VoronoiKmeans => {
            let k = cfg.k_target.min(x.len());
            voronoi_partition(x, &kmeans_centers(x, k, cfg.seed)?)
        }
        Strategy::VoronoiSp => {
            let k = cfg.k_target.min(x.len());
            let sp = SpConfig {
                seed: cfg.seed,
                ..sp_cfg.clone()
            };
            voronoi_partition(x, &sp_centers(x, k, &sp)?)
        }
    }
}
