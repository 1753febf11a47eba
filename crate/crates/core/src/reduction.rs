//! Reducing a dataset to `n` representative `(x, y)` pairs.
//!
//! [`csp_reduce`] partitions the covariates, places one-dimensional support
//! points on the responses of every cell and couples each point with the
//! covariates of its nearest-response neighbour. [`mcsp_reduce`] repeats this
//! per covariate. [`uniform_subsample`] and [`vanilla_sp_reduce`] are the
//! baselines.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::EmpiricalSet1D;
use crate::partition::{build_partition, choose_k, Partition, PartitionConfig, PartitionSummary, Strategy};
use crate::points::{sq_euclidean, PointSet};
use crate::support_points::{support_points_1d, support_points_nd, SpConfig, SpInit};

/// Upper bound on points per observation in a cell.
pub const MAX_POINTS_PER_ROW: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Csp,
    Mcsp,
    Uniform,
    VanillaSp,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Csp => "csp",
            Method::Mcsp => "mcsp",
            Method::Uniform => "uniform",
            Method::VanillaSp => "vanilla_sp",
        }
    }

    pub const ALL: [Method; 4] = [Method::Csp, Method::Mcsp, Method::Uniform, Method::VanillaSp];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csp" => Ok(Method::Csp),
            "mcsp" => Ok(Method::Mcsp),
            "uniform" => Ok(Method::Uniform),
            "vanilla_sp" | "sp" => Ok(Method::VanillaSp),
            other => Err(Error::domain(format!("unknown reduction method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationMode {
    #[default]
    Proportional,
    Equal,
}

impl FromStr for AllocationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proportional" => Ok(AllocationMode::Proportional),
            "equal" => Ok(AllocationMode::Equal),
            other => Err(Error::domain(format!("unknown allocation mode '{other}'"))),
        }
    }
}

/// Points per cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub n_k: Vec<usize>,
}

impl Allocation {
    pub fn total(&self) -> usize {
        self.n_k.iter().sum()
    }
}

/// Split `n` points over cells of sizes `sizes`.
///
/// Proportional mode uses largest-remainder rounding of `n N_k / N` with ties
/// going to the lower cell index. Equal mode gives every non-empty cell
/// `floor(n / m)` points and hands the leftovers to the lowest-index cells.
/// In both modes a cell never receives more than ten points per row; any
/// excess moves to the next cells with spare capacity, lowest index first.
pub fn allocate_sizes(sizes: &[usize], n: usize, mode: AllocationMode) -> Result<Allocation> {
    if n == 0 {
        return Err(Error::domain("cannot allocate zero points"));
    }
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Err(Error::domain("all cells are empty"));
    }
    let capacity: usize = sizes.iter().map(|s| s * MAX_POINTS_PER_ROW).sum();
    if n > capacity {
        return Err(Error::domain(format!(
            "{n} points exceed the limit of {MAX_POINTS_PER_ROW} per observation ({total} observations)"
        )));
    }
    let mut n_k = match mode {
        AllocationMode::Proportional => {
            // Integer arithmetic keeps the remainders exact.
            let (n128, tot) = (n as u128, total as u128);
            let mut floors: Vec<usize> = sizes.iter().map(|&s| (n128 * s as u128 / tot) as usize).collect();
            let rems: Vec<u128> = sizes.iter().map(|&s| n128 * s as u128 % tot).collect();
            let left = n - floors.iter().sum::<usize>();
            let mut order: Vec<usize> = (0..sizes.len()).filter(|&k| sizes[k] > 0).collect();
            order.sort_by(|&a, &b| rems[b].cmp(&rems[a]).then(a.cmp(&b)));
            for &k in order.iter().take(left) {
                floors[k] += 1;
            }
            floors
        }
        AllocationMode::Equal => {
            let nonempty: Vec<usize> = (0..sizes.len()).filter(|&k| sizes[k] > 0).collect();
            let base = n / nonempty.len();
            let mut left = n % nonempty.len();
            let mut out = vec![0; sizes.len()];
            for &k in &nonempty {
                out[k] = base;
                if left > 0 {
                    out[k] += 1;
                    left -= 1;
                }
            }
            out
        }
    };
    let mut excess = 0;
    for (v, &s) in n_k.iter_mut().zip(sizes) {
        let cap = s * MAX_POINTS_PER_ROW;
        if *v > cap {
            excess += *v - cap;
            *v = cap;
        }
    }
    for (v, &s) in n_k.iter_mut().zip(sizes) {
        if excess == 0 {
            break;
        }
        let give = (s * MAX_POINTS_PER_ROW - *v).min(excess);
        *v += give;
        excess -= give;
    }
    Ok(Allocation { n_k })
}

/// One-dimensional support points of the responses in a single cell, kept
/// within the observed response range of the cell.
pub fn conditional_support_points_cell(responses: &EmpiricalSet1D, n_k: usize, cfg: &SpConfig) -> Result<Vec<f64>> {
    if responses.is_empty() {
        return Err(Error::domain("cell has no responses"));
    }
    let (lo, hi) = (responses.min(), responses.max());
    let mut pts = support_points_1d(responses, n_k, cfg)?.points.into_coords();
    for p in &mut pts {
        *p = p.clamp(lo, hi);
    }
    Ok(pts)
}

/// A coupled pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupled {
    pub x: Vec<f64>,
    pub y: f64,
    pub row: usize,
}

/// Pair every `y*` with the covariates of the cell row whose response is
/// closest, ties going to the lowest row index. `cell_rows` are global row
/// indices into `data`.
pub fn couple_covariates(y_star: &[f64], cell_rows: &[usize], data: &Dataset) -> Result<Vec<Coupled>> {
    if cell_rows.is_empty() {
        return Err(Error::domain("cannot couple against an empty cell"));
    }
    Ok(y_star
        .iter()
        .map(|&ys| {
            let mut best = cell_rows[0];
            let mut best_d = (data.y[best] - ys).abs();
            for &r in &cell_rows[1..] {
                let d = (data.y[r] - ys).abs();
                if d < best_d || (d == best_d && r < best) {
                    best = r;
                    best_d = d;
                }
            }
            Coupled {
                x: data.x.row(best).to_vec(),
                y: ys,
                row: best,
            }
        })
        .collect())
}

/// Output of every reducer.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedSet {
    pub x: PointSet,
    pub y: Vec<f64>,
    pub cell_id: Vec<usize>,
    pub coupled_row: Vec<usize>,
    pub method: Method,
    pub seed: u64,
}

impl ReducedSet {
    fn empty(dim: usize, method: Method, seed: u64) -> Self {
        Self {
            x: PointSet::with_capacity(dim, 0),
            y: Vec::new(),
            cell_id: Vec::new(),
            coupled_row: Vec::new(),
            method,
            seed,
        }
    }

    fn push(&mut self, c: Coupled, cell: usize) {
        self.x.push(&c.x);
        self.y.push(c.y);
        self.cell_id.push(cell);
        self.coupled_row.push(c.row);
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.dim()
    }

    /// The pairs as a plain dataset (for fitting).
    pub fn to_dataset(&self) -> Dataset {
        Dataset::new(self.x.clone(), self.y.clone()).expect("lengths agree")
    }

    /// The pairs as points in `R^{d+1}`, response last.
    pub fn joint(&self) -> PointSet {
        joint_points(&self.x, &self.y)
    }

    /// Columns `x_1..x_d, y, cell_id, coupled_row, method`.
    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (1..=self.dim()).map(|q| format!("x_{q}")).collect();
        header.extend(["y", "cell_id", "coupled_row", "method"].map(String::from));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.x.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.y[i].to_string());
            rec.push(self.cell_id[i].to_string());
            rec.push(self.coupled_row[i].to_string());
            rec.push(self.method.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV written by [`ReducedSet::to_csv`]. The seed is not part
    /// of the CSV and is set to 0.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let headers = rdr.headers()?.clone();
        let dim = headers.iter().take_while(|h| h.starts_with("x_")).count();
        let expect: Vec<String> = (1..=dim)
            .map(|q| format!("x_{q}"))
            .chain(["y", "cell_id", "coupled_row", "method"].map(String::from))
            .collect();
        if dim == 0 || headers.iter().ne(expect.iter().map(String::as_str)) {
            return Err(Error::domain(format!(
                "{} is not a reduced-set file (expected columns {})",
                path.display(),
                expect.join(",")
            )));
        }
        let mut out: Option<ReducedSet> = None;
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| Error::domain(format!("line {}: bad {what}", line + 2));
            let num = |i: usize| -> Result<f64> {
                rec[i].trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| bad(&headers[i]))
            };
            let x: Vec<f64> = (0..dim).map(num).collect::<Result<_>>()?;
            let y = num(dim)?;
            let cell: usize = rec[dim + 1].trim().parse().map_err(|_| bad("cell_id"))?;
            let row: usize = rec[dim + 2].trim().parse().map_err(|_| bad("coupled_row"))?;
            let method: Method = rec[dim + 3].trim().parse()?;
            let set = out.get_or_insert_with(|| ReducedSet::empty(dim, method, 0));
            if set.method != method {
                return Err(bad("method (mixed methods in one file)"));
            }
            set.push(Coupled { x, y, row }, cell);
        }
        out.ok_or_else(|| Error::domain(format!("{} has no rows", path.display())))
    }
}

/// Concatenate covariates and responses into `R^{d+1}` points.
pub fn joint_points(x: &PointSet, y: &[f64]) -> PointSet {
    let mut out = PointSet::with_capacity(x.dim() + 1, x.len());
    let mut buf = Vec::with_capacity(x.dim() + 1);
    for (r, v) in x.rows().zip(y) {
        buf.clear();
        buf.extend_from_slice(r);
        buf.push(*v);
        out.push(&buf);
    }
    out
}

/// Options shared by the conditional reducers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CspOptions {
    pub partition: PartitionConfig,
    pub sp: SpConfig,
    pub allocation: AllocationMode,
    /// Run cells in parallel (the output does not depend on this).
    pub parallel: bool,
}

impl CspOptions {
    pub fn new(partition: PartitionConfig, sp: SpConfig) -> Self {
        Self {
            partition,
            sp,
            allocation: AllocationMode::Proportional,
            parallel: true,
        }
    }

    /// Defaults for `n` points: bins with `K = choose_k(n)`.
    pub fn for_size(n: usize, seed: u64) -> Self {
        Self::new(
            PartitionConfig {
                strategy: Strategy::Bins,
                k_target: choose_k(n),
                seed,
            },
            SpConfig::default().with_seed(seed),
        )
    }
}

/// Diagnostics of a conditional reduction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CspReport {
    pub partition: PartitionSummary,
    pub allocation: Allocation,
    /// Sum over cells of the per-cell energy objective.
    pub objective: f64,
    /// Cells that received more points than they have rows.
    pub oversubscribed_cells: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Per-cell energy objective `2/(n N) ΣΣ|z - y| - 1/n² ΣΣ|z - z'|`.
pub fn cell_objective(points: &[f64], responses: &EmpiricalSet1D) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let n = points.len() as f64;
    let cross: f64 = points.iter().map(|&z| responses.mean_abs_to(z)).sum::<f64>() / n;
    let own = EmpiricalSet1D::new(points.to_vec()).expect("finite points");
    2.0 * cross - own.mean_pairwise_abs()
}

/// Sum of [`cell_objective`] over the cells of `partition`, with `points[k]`
/// the responses placed in cell `k`. Cells without points contribute 0.
pub fn partition_objective(partition: &Partition, data: &Dataset, points: &[Vec<f64>]) -> Result<f64> {
    let mut total = 0.0;
    for (rows, pts) in partition.cells.iter().zip(points) {
        if pts.is_empty() || rows.is_empty() {
            continue;
        }
        let resp = EmpiricalSet1D::new(rows.iter().map(|&r| data.y[r]).collect())?;
        total += cell_objective(pts, &resp);
    }
    Ok(total)
}

fn check_size(data: &Dataset, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::domain("reduced size must be at least 1"));
    }
    if n > data.len() {
        return Err(Error::domain(format!(
            "reduced size {n} exceeds the {} available rows",
            data.len()
        )));
    }
    if !data.x.all_finite() || data.y.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("dataset contains NaN or infinite values"));
    }
    Ok(())
}

/// Conditional support points: partition, per-cell support points with
/// allocated sizes, nearest-response coupling, union in cell order.
pub fn csp_reduce(data: &Dataset, n: usize, opts: &CspOptions) -> Result<(ReducedSet, CspReport)> {
    check_size(data, n)?;
    let partition = build_partition(&data.x, &opts.partition, &opts.sp)?;
    csp_on_partition(data, n, &partition, opts, Method::Csp)
}

/// [`csp_reduce`] on a given partition.
pub fn csp_on_partition(
    data: &Dataset,
    n: usize,
    partition: &Partition,
    opts: &CspOptions,
    method: Method,
) -> Result<(ReducedSet, CspReport)> {
    let sizes = partition.sizes();
    let allocation = allocate_sizes(&sizes, n, opts.allocation)?;
    let work = |k: usize| -> Result<(Vec<Coupled>, f64)> {
        let n_k = allocation.n_k[k];
        if n_k == 0 {
            return Ok((Vec::new(), 0.0));
        }
        let rows = &partition.cells[k];
        let resp = EmpiricalSet1D::new(rows.iter().map(|&r| data.y[r]).collect())?;
        let cell_cfg = opts.sp.clone().with_seed(opts.sp.seed.wrapping_add(k as u64));
        let pts = conditional_support_points_cell(&resp, n_k, &cell_cfg)
            .map_err(|e| with_context(e, &format!("cell {k}")))?;
        let obj = cell_objective(&pts, &resp);
        Ok((couple_covariates(&pts, rows, data)?, obj))
    };
    let per_cell: Vec<Result<(Vec<Coupled>, f64)>> = if opts.parallel {
        (0..partition.k).into_par_iter().map(work).collect()
    } else {
        (0..partition.k).map(work).collect()
    };
    let mut out = ReducedSet::empty(data.dim(), method, opts.sp.seed);
    let mut objective = 0.0;
    for (k, res) in per_cell.into_iter().enumerate() {
        let (pairs, obj) = res?;
        objective += obj;
        for c in pairs {
            out.push(c, k);
        }
    }
    let oversubscribed_cells: Vec<usize> = (0..partition.k)
        .filter(|&k| allocation.n_k[k] > sizes[k])
        .collect();
    let mut warnings = partition.warnings.clone();
    if !oversubscribed_cells.is_empty() {
        warnings.push(format!(
            "{} cells received more points than rows",
            oversubscribed_cells.len()
        ));
    }
    Ok((
        out,
        CspReport {
            partition: partition.summary(),
            allocation,
            objective,
            oversubscribed_cells,
            warnings,
        },
    ))
}

fn with_context(e: Error, ctx: &str) -> Error {
    match e {
        Error::Domain(m) => Error::Domain(format!("{ctx}: {m}")),
        Error::Numerical(m) => Error::Numerical(format!("{ctx}: {m}")),
        other => other,
    }
}

/// Default per-dimension sizes: `floor(n/d)` each, leftovers to the lowest
/// dimensions.
pub fn default_dimension_sizes(n: usize, d: usize) -> Vec<usize> {
    (0..d).map(|q| n / d + usize::from(q < n % d)).collect()
}

/// Diagnostics of [`mcsp_reduce`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McspReport {
    pub n_q: Vec<usize>,
    /// Global cell ids of dimension `q` start at `cell_offsets[q]`.
    pub cell_offsets: Vec<usize>,
    pub per_dimension: Vec<Option<CspReport>>,
}

/// Marginal conditional support points: one conditional reduction per
/// covariate on `(x_q, y)` with `K_q = choose_k(n_q)`; every point carries
/// the full covariate vector of its coupled row.
pub fn mcsp_reduce(
    data: &Dataset,
    n: usize,
    n_q: Option<&[usize]>,
    opts: &CspOptions,
) -> Result<(ReducedSet, McspReport)> {
    check_size(data, n)?;
    let d = data.dim();
    let n_q: Vec<usize> = match n_q {
        Some(v) => {
            if v.len() != d || v.iter().sum::<usize>() != n {
                return Err(Error::domain(format!(
                    "per-dimension sizes {v:?} must have {d} entries summing to {n}"
                )));
            }
            v.to_vec()
        }
        None => default_dimension_sizes(n, d),
    };
    let work = |q: usize| -> Result<Option<(ReducedSet, CspReport)>> {
        if n_q[q] == 0 {
            return Ok(None);
        }
        let col = data.single_covariate(q);
        let mut o = opts.clone();
        o.partition.k_target = choose_k(n_q[q]);
        o.partition.seed = opts.partition.seed.wrapping_add(q as u64);
        o.sp.seed = opts.sp.seed.wrapping_add(1000 * q as u64);
        csp_reduce(&col, n_q[q], &o)
            .map(Some)
            .map_err(|e| with_context(e, &format!("dimension {}", q + 1)))
    };
    let per_dim: Vec<Result<Option<(ReducedSet, CspReport)>>> = if opts.parallel {
        (0..d).into_par_iter().map(work).collect()
    } else {
        (0..d).map(work).collect()
    };
    let mut out = ReducedSet::empty(d, Method::Mcsp, opts.sp.seed);
    let mut offsets = Vec::with_capacity(d);
    let mut reports = Vec::with_capacity(d);
    let mut offset = 0;
    for res in per_dim {
        offsets.push(offset);
        match res? {
            Some((set, rep)) => {
                for i in 0..set.len() {
                    let row = set.coupled_row[i];
                    out.push(
                        Coupled {
                            x: data.x.row(row).to_vec(),
                            y: set.y[i],
                            row,
                        },
                        offset + set.cell_id[i],
                    );
                }
                offset += rep.partition.k;
                reports.push(Some(rep));
            }
            None => reports.push(None),
        }
    }
    Ok((
        out,
        McspReport {
            n_q,
            cell_offsets: offsets,
            per_dimension: reports,
        },
    ))
}

/// `n` distinct rows drawn uniformly without replacement.
pub fn uniform_subsample(data: &Dataset, n: usize, seed: u64) -> Result<ReducedSet> {
    check_size(data, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = index::sample(&mut rng, data.len(), n).into_vec();
    let mut out = ReducedSet::empty(data.dim(), Method::Uniform, seed);
    for r in rows {
        out.push(
            Coupled {
                x: data.x.row(r).to_vec(),
                y: data.y[r],
                row: r,
            },
            0,
        );
    }
    Ok(out)
}

/// Diagnostics of [`vanilla_sp_reduce`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VanillaReport {
    /// Support points before snapping, response last.
    pub unsnapped: PointSet,
    pub objective: f64,
    pub iters_used: usize,
    pub converged: bool,
    /// Distance from each support point to the row it was snapped to.
    pub snap_distance: Vec<f64>,
}

/// Support points of the joint `(x, y)` cloud, each snapped to the nearest
/// observed row.
pub fn vanilla_sp_reduce(data: &Dataset, n: usize, cfg: &SpConfig) -> Result<(ReducedSet, VanillaReport)> {
    check_size(data, n)?;
    let joint = joint_points(&data.x, &data.y);
    let mut cfg = cfg.clone();
    cfg.init = SpInit::RandomSubsample;
    let res = support_points_nd(&joint, n, &cfg)?;
    let snaps: Vec<(usize, f64)> = res
        .points
        .rows()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (r, q) in joint.rows().enumerate() {
                let d = sq_euclidean(p, q);
                if d < best.1 {
                    best = (r, d);
                }
            }
            (best.0, best.1.sqrt())
        })
        .collect();
    let mut out = ReducedSet::empty(data.dim(), Method::VanillaSp, cfg.seed);
    for &(r, _) in &snaps {
        out.push(
            Coupled {
                x: data.x.row(r).to_vec(),
                y: data.y[r],
                row: r,
            },
            0,
        );
    }
    Ok((
        out,
        VanillaReport {
            unsnapped: res.points,
            objective: res.objective,
            iters_used: res.iters_used,
            converged: res.converged,
            snap_distance: snaps.iter().map(|s| s.1).collect(),
        },
    ))
}
