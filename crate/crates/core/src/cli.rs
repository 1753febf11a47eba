//! Command-line front end.
//!
//! Five subcommands: `generate` writes a simulation case to CSV, `reduce`
//! compacts a CSV into a reduced set, `fit` estimates a conditional density
//! on a reduced set, `eval` scores a model on test rows, and `simulate` runs
//! the whole generate/split/reduce/fit/eval loop over a grid of sizes and
//! repetitions. The pipeline helpers ([`reduce_dataset`], [`fit_reduced`],
//! [`run_replicate`]) are shared by `simulate` and the chained commands, so
//! the two routes give the same numbers.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, RejectReport};
use crate::density::{self, BasisConfig, DensityModel, FitConfig, FitReport, LambdaChoice, Mode};
use crate::error::{Error, Result};
use crate::metrics::{
    energy_distance_empirical, l2_discrepancy_sq, EmpiricalCdf, EmpiricalSet1D, DEFAULT_GRID_SIZE,
};
use crate::partition::{choose_k, PartitionConfig, Strategy};
use crate::points::{Interval, PointSet};
use crate::quadrature::QuadratureRule;
use crate::reduction::{
    csp_reduce, mcsp_reduce, uniform_subsample, vanilla_sp_reduce, AllocationMode, CspOptions, Method, ReducedSet,
};
use crate::simgen::{generate, truth_crps, CaseId, CaseSpec, TruthOracle};
use crate::support_points::SpConfig;

#[derive(Debug, Parser)]
#[command(name = "condsp", version, about = "Conditional support points for density regression")]
pub struct Cli {
    /// Worker threads (default: available parallelism; 1 = serial reference path).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw rows of a simulation case, optionally split into train/test.
    Generate(GenerateArgs),
    /// Compact a CSV into a reduced set.
    Reduce(ReduceArgs),
    /// Fit a conditional density to a reduced set.
    Fit(FitArgs),
    /// Score a fitted model on test rows.
    Eval(EvalArgs),
    /// Repeated reduce/fit/eval runs on simulation cases.
    Simulate(SimulateArgs),
}

/// Parse a comma-separated list of floats: `lo,hi`.
fn parse_interval(s: &str) -> std::result::Result<Interval, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected 'lo,hi', got '{s}'"));
    }
    let lo: f64 = parts[0].trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = parts[1].trim().parse().map_err(|e| format!("{e}"))?;
    Interval::new(lo, hi).map_err(|e| e.to_string())
}

/// Parse interaction terms such as `0;1;0,1`.
fn parse_terms(s: &str) -> std::result::Result<Vec<Vec<usize>>, String> {
    s.split(';')
        .map(|t| {
            t.split(',')
                .map(|v| v.trim().parse::<usize>().map_err(|e| format!("term '{t}': {e}")))
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenerateArgs {
    #[arg(long)]
    pub case: CaseId,
    /// Rows to draw.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// All rows.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Training rows of the seeded 95/5 split.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Test rows of the seeded 95/5 split.
    #[arg(long)]
    pub test: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReduceArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Covariate column names, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub x_cols: Vec<String>,
    #[arg(long)]
    pub y_col: String,
    #[arg(long, default_value = "csp")]
    pub method: Method,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value = "bins")]
    pub strategy: Strategy,
    /// Target cell count (default round(n^0.6)).
    #[arg(long)]
    pub k_target: Option<usize>,
    #[arg(long, default_value = "proportional")]
    pub allocation: AllocationMode,
    /// Per-covariate sizes for `mcsp`, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub n_q: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = SpConfig::default().max_iters)]
    pub sp_max_iters: usize,
    #[arg(long, default_value_t = SpConfig::default().tol)]
    pub sp_tol: f64,
    /// Natural response range `lo,hi` (otherwise taken from the data).
    #[arg(long, value_parser = parse_interval)]
    pub y_range: Option<Interval>,
    #[arg(long)]
    pub output: PathBuf,
    /// Provenance JSON (default: output path with `.json` extension).
    #[arg(long)]
    pub provenance: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FitArgs {
    /// A reduced-set CSV, or any CSV when `--x-cols`/`--y-col` are given.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub x_cols: Option<Vec<String>>,
    #[arg(long)]
    pub y_col: Option<String>,
    /// Provenance JSON of the reduction; supplies the response domain and
    /// covariate ranges.
    #[arg(long)]
    pub provenance: Option<PathBuf>,
    #[arg(long, value_parser = parse_interval)]
    pub y_range: Option<Interval>,
    #[arg(long, default_value = "likelihood")]
    pub mode: Mode,
    /// Fixed penalty weight; overrides the grid.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Candidate penalty weights, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = density::DEFAULT_Y_KNOTS)]
    pub y_knots: usize,
    #[arg(long, default_value_t = density::DEFAULT_X_KNOTS)]
    pub x_knots: usize,
    /// Interaction terms, e.g. `0;1;0,1` (default one term per covariate).
    #[arg(long, value_parser = parse_terms)]
    pub terms: Option<Vec<Vec<usize>>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Model JSON.
    #[arg(long)]
    pub output: PathBuf,
    /// Fit report JSON (default: `<output stem>.report.json`).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Test CSV.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    pub x_cols: Vec<String>,
    #[arg(long)]
    pub y_col: String,
    #[arg(long, default_value_t = DEFAULT_GRID_SIZE)]
    pub grid: usize,
    /// Reduced set to compare against the test rows (energy distance and
    /// response L2 discrepancy).
    #[arg(long)]
    pub reduced: Option<PathBuf>,
    /// Simulation case of the test rows; enables truth CRPS and SKL.
    #[arg(long)]
    pub case: Option<CaseId>,
    /// Report JSON.
    #[arg(long)]
    pub output: PathBuf,
    /// Per-row CRPS CSV.
    #[arg(long)]
    pub per_row: Option<PathBuf>,
    /// Density/CDF curves at the first `--curve-rows` test covariates.
    #[arg(long)]
    pub curves: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub curve_rows: usize,
    #[arg(long, default_value_t = 200)]
    pub curve_points: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub cases: Vec<CaseId>,
    /// Rows generated per repetition (before the 95/5 split).
    #[arg(long, default_value_t = 20_000)]
    pub n_total: usize,
    #[arg(long, value_delimiter = ',', required = true)]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long, value_delimiter = ',', default_value = "csp")]
    pub methods: Vec<Method>,
    #[arg(long, value_delimiter = ',', default_value = "proportional")]
    pub allocations: Vec<AllocationMode>,
    #[arg(long, default_value = "bins")]
    pub strategy: Strategy,
    #[arg(long, default_value = "likelihood")]
    pub mode: Mode,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Repetition `r` uses seed `seed + r`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_GRID_SIZE)]
    pub grid: usize,
    #[arg(long, default_value_t = SpConfig::default().max_iters)]
    pub sp_max_iters: usize,
    /// Also score the true conditional distributions.
    #[arg(long)]
    pub truth: bool,
    /// Tidy result table.
    #[arg(long)]
    pub output: PathBuf,
    /// Summary JSON (default: output path with `.json` extension).
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

/// Everything that determines a reduction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReduceSettings {
    pub method: Method,
    pub n: usize,
    pub strategy: Strategy,
    pub k_target: Option<usize>,
    pub allocation: AllocationMode,
    pub n_q: Option<Vec<usize>>,
    pub seed: u64,
    pub sp_max_iters: usize,
    pub sp_tol: f64,
}

impl ReduceSettings {
    pub fn new(method: Method, n: usize, seed: u64) -> Self {
        let sp = SpConfig::default();
        Self {
            method,
            n,
            strategy: Strategy::Bins,
            k_target: None,
            allocation: AllocationMode::Proportional,
            n_q: None,
            seed,
            sp_max_iters: sp.max_iters,
            sp_tol: sp.tol,
        }
    }

    pub fn sp_config(&self) -> SpConfig {
        SpConfig {
            max_iters: self.sp_max_iters,
            tol: self.sp_tol,
            ..SpConfig::default().with_seed(self.seed)
        }
    }

    fn csp_options(&self) -> CspOptions {
        let mut o = CspOptions::new(
            PartitionConfig {
                strategy: self.strategy,
                k_target: self.k_target.unwrap_or_else(|| choose_k(self.n)),
                seed: self.seed,
            },
            self.sp_config(),
        );
        o.allocation = self.allocation;
        o
    }
}

/// A reduced set with its method-specific diagnostics.
#[derive(Debug, Clone)]
pub struct ReduceOutcome {
    pub set: ReducedSet,
    /// Realized cell count (conditional methods).
    pub k: Option<usize>,
    pub n_q: Option<Vec<usize>>,
    pub report: serde_json::Value,
}

pub fn reduce_dataset(data: &Dataset, s: &ReduceSettings) -> Result<ReduceOutcome> {
    match s.method {
        Method::Csp => {
            let (set, rep) = csp_reduce(data, s.n, &s.csp_options())?;
            Ok(ReduceOutcome {
                set,
                k: Some(rep.partition.k),
                n_q: None,
                report: serde_json::to_value(&rep)?,
            })
        }
        Method::Mcsp => {
            let (set, rep) = mcsp_reduce(data, s.n, s.n_q.as_deref(), &s.csp_options())?;
            let k = rep.per_dimension.iter().flatten().map(|r| r.partition.k).sum();
            Ok(ReduceOutcome {
                set,
                k: Some(k),
                n_q: Some(rep.n_q.clone()),
                report: serde_json::to_value(&rep)?,
            })
        }
        Method::Uniform => Ok(ReduceOutcome {
            set: uniform_subsample(data, s.n, s.seed)?,
            k: None,
            n_q: None,
            report: serde_json::Value::Null,
        }),
        Method::VanillaSp => {
            let (set, rep) = vanilla_sp_reduce(data, s.n, &s.sp_config())?;
            Ok(ReduceOutcome {
                set,
                k: None,
                n_q: None,
                report: serde_json::json!({
                    "objective": rep.objective,
                    "iters_used": rep.iters_used,
                    "converged": rep.converged,
                    "max_snap_distance": rep.snap_distance.iter().copied().fold(0.0, f64::max),
                }),
            })
        }
    }
}

/// Everything that determines a fit, apart from the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub mode: Mode,
    pub lambda: LambdaChoice,
    pub basis: BasisConfig,
    pub seed: u64,
}

impl FitSettings {
    pub fn new(seed: u64) -> Self {
        Self {
            mode: Mode::Likelihood,
            lambda: LambdaChoice::Grid(density::default_lambda_grid()),
            basis: BasisConfig::default(),
            seed,
        }
    }

    pub fn config(&self, y_domain: Interval, x_ranges: Vec<Interval>) -> FitConfig {
        FitConfig {
            basis: self.basis.clone(),
            mode: self.mode,
            lambda: self.lambda.clone(),
            seed: self.seed,
            y_domain: Some(y_domain),
            x_ranges: Some(x_ranges),
            ..FitConfig::default()
        }
    }
}

/// Fit on a reduced set using the response domain and covariate ranges of
/// the data it was drawn from.
pub fn fit_reduced(
    set: &ReducedSet,
    source_y_domain: Interval,
    source_x_ranges: Vec<Interval>,
    fs: &FitSettings,
) -> Result<(DensityModel, FitReport)> {
    density::fit(&set.to_dataset(), &fs.config(source_y_domain, source_x_ranges))
}

/// One row of a simulation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replicate {
    pub case: CaseId,
    pub method: Method,
    pub allocation: AllocationMode,
    pub strategy: Strategy,
    pub mode: Mode,
    pub n: usize,
    pub rep: usize,
    pub seed: u64,
    pub k: Option<usize>,
    pub log_n: f64,
    pub crps: f64,
    pub log_crps: f64,
    pub truth_crps: Option<f64>,
    pub lambda: f64,
    pub reduce_secs: f64,
    pub fit_secs: f64,
    pub eval_secs: f64,
}

/// Data of one repetition: `N` rows of the case split 95/5 with `seed`.
#[derive(Debug, Clone)]
pub struct RepData {
    pub train: Dataset,
    pub test: Dataset,
    pub oracle: TruthOracle,
    pub seed: u64,
}

impl RepData {
    pub fn new(case: CaseId, n_total: usize, seed: u64) -> Result<Self> {
        let (all, oracle) = generate(&CaseSpec { case, n: n_total, seed })?;
        let (train, test) = all.split(seed);
        Ok(Self {
            train,
            test,
            oracle,
            seed,
        })
    }

    pub fn truth_crps(&self, grid: usize) -> Result<f64> {
        let dom = self.train.response_domain()?;
        let dom = Interval::expanded_from_values(&self.test.y, 0.0)
            .map(|r| r.hull(&dom))
            .unwrap_or(dom);
        truth_crps(&self.oracle, &self.test, dom, grid)
    }
}

/// Reduce the training rows, fit, and score on the test rows.
pub fn run_replicate(
    rep_data: &RepData,
    rs: &ReduceSettings,
    fs: &FitSettings,
    grid: usize,
) -> Result<(Replicate, ReduceOutcome, DensityModel)> {
    let t0 = Instant::now();
    let red = reduce_dataset(&rep_data.train, rs)?;
    let t1 = Instant::now();
    let (model, report) = fit_reduced(
        &red.set,
        rep_data.train.response_domain()?,
        rep_data.train.x_ranges()?,
        fs,
    )?;
    let t2 = Instant::now();
    let crps = model.mean_crps(&rep_data.test.x, &rep_data.test.y, grid)?;
    let t3 = Instant::now();
    let row = Replicate {
        case: rep_data.oracle.case,
        method: rs.method,
        allocation: rs.allocation,
        strategy: rs.strategy,
        mode: fs.mode,
        n: rs.n,
        rep: 0,
        seed: rep_data.seed,
        k: red.k,
        log_n: (rs.n as f64).ln(),
        crps,
        log_crps: crps.ln(),
        truth_crps: None,
        lambda: report.lambda,
        reduce_secs: (t1 - t0).as_secs_f64(),
        fit_secs: (t2 - t1).as_secs_f64(),
        eval_secs: (t3 - t2).as_secs_f64(),
    };
    Ok((row, red, model))
}

/// Provenance written next to a reduced set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub config: ReduceArgs,
    pub settings: ReduceSettings,
    pub method: Method,
    pub n: usize,
    pub k: Option<usize>,
    pub n_q: Option<Vec<usize>>,
    pub seed: u64,
    pub input_rows: usize,
    pub rejects: RejectReport,
    pub y_domain: Interval,
    pub x_ranges: Vec<Interval>,
    pub x_names: Vec<String>,
    pub y_name: String,
    pub report: serde_json::Value,
    pub timing_secs: f64,
}

/// Scores written by `eval`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalArgs,
    pub n_test: usize,
    pub rejects: RejectReport,
    pub mean_crps: f64,
    pub crps_domain: Interval,
    pub model_lambda: f64,
    pub model_mode: Mode,
    pub energy_distance: Option<f64>,
    pub l2_discrepancy_sq: Option<f64>,
    pub truth_crps: Option<f64>,
    pub skl: Option<f64>,
    pub timing_secs: f64,
}

#[derive(Debug, Clone, Serialize)]
struct FitOutput<'a> {
    config: &'a FitArgs,
    fit_config: &'a FitConfig,
    report: &'a FitReport,
    training_rows: usize,
    timing_secs: f64,
}

#[derive(Debug, Clone, Serialize)]
struct SimulateSummary<'a> {
    config: &'a SimulateArgs,
    groups: Vec<GroupSummary>,
    timing_secs: f64,
}

#[derive(Debug, Clone, Serialize)]
struct GroupSummary {
    case: CaseId,
    method: Method,
    allocation: AllocationMode,
    n: usize,
    reps: usize,
    mean_log_crps: f64,
    median_crps: f64,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len();
    if m == 0 {
        f64::NAN
    } else if m % 2 == 1 {
        s[m / 2]
    } else {
        0.5 * (s[m / 2 - 1] + s[m / 2])
    }
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    if a.output.is_none() && a.train.is_none() && a.test.is_none() {
        return Err(Error::domain("nothing to write: give --output and/or --train/--test"));
    }
    let (all, _) = generate(&CaseSpec {
        case: a.case,
        n: a.n,
        seed: a.seed,
    })?;
    if let Some(p) = &a.output {
        all.to_csv(p)?;
    }
    if a.train.is_some() || a.test.is_some() {
        let (train, test) = all.split(a.seed);
        if let Some(p) = &a.train {
            train.to_csv(p)?;
        }
        if let Some(p) = &a.test {
            test.to_csv(p)?;
        }
    }
    Ok(())
}

pub fn cmd_reduce(a: &ReduceArgs) -> Result<ReducedSet> {
    let t0 = Instant::now();
    let (mut data, rejects) = Dataset::from_csv(&a.input, &a.x_cols, &a.y_col)?;
    if let Some(r) = a.y_range {
        if let Some(v) = data.y.iter().find(|v| !r.contains(**v)) {
            return Err(Error::domain(format!("response {v} outside --y-range [{}, {}]", r.lo, r.hi)));
        }
        data.y_range = Some(r);
    }
    let settings = ReduceSettings {
        method: a.method,
        n: a.n,
        strategy: a.strategy,
        k_target: a.k_target,
        allocation: a.allocation,
        n_q: a.n_q.clone(),
        seed: a.seed,
        sp_max_iters: a.sp_max_iters,
        sp_tol: a.sp_tol,
    };
    let out = reduce_dataset(&data, &settings)?;
    let set = out.set;
    set.to_csv(&a.output)?;
    let prov = Provenance {
        command: "reduce".into(),
        config: a.clone(),
        settings,
        method: a.method,
        n: a.n,
        k: out.k,
        n_q: out.n_q,
        seed: a.seed,
        input_rows: data.len(),
        rejects,
        y_domain: data.response_domain()?,
        x_ranges: data.x_ranges()?,
        x_names: data.x_names.clone(),
        y_name: data.y_name.clone(),
        report: out.report,
        timing_secs: t0.elapsed().as_secs_f64(),
    };
    let path = a.provenance.clone().unwrap_or_else(|| a.output.with_extension("json"));
    write_json(&path, &prov)?;
    Ok(set)
}

pub fn cmd_fit(a: &FitArgs) -> Result<DensityModel> {
    let t0 = Instant::now();
    let data = match (&a.x_cols, &a.y_col) {
        (Some(x), Some(y)) => Dataset::from_csv(&a.input, x, y)?.0,
        (None, None) => ReducedSet::from_csv(&a.input)?.to_dataset(),
        _ => return Err(Error::domain("--x-cols and --y-col must be given together")),
    };
    let prov: Option<Provenance> = a.provenance.as_deref().map(read_json).transpose()?;
    let y_domain = match (a.y_range, &prov) {
        (Some(r), _) => r,
        (None, Some(p)) => p.y_domain,
        (None, None) => data.response_domain()?,
    };
    let x_ranges = match &prov {
        Some(p) => p.x_ranges.clone(),
        None => data.x_ranges()?,
    };
    let lambda = match (a.lambda, &a.lambda_grid) {
        (Some(l), _) => LambdaChoice::Fixed(l),
        (None, Some(g)) => LambdaChoice::Grid(g.clone()),
        (None, None) => LambdaChoice::Grid(density::default_lambda_grid()),
    };
    let fs = FitSettings {
        mode: a.mode,
        lambda,
        basis: BasisConfig {
            y_knots: a.y_knots,
            x_knots_per_dim: a.x_knots,
            terms: a.terms.clone(),
        },
        seed: a.seed,
    };
    let cfg = fs.config(y_domain, x_ranges);
    let (model, report) = density::fit(&data, &cfg)?;
    write_json(&a.output, &model)?;
    let out = FitOutput {
        config: a,
        fit_config: &cfg,
        report: &report,
        training_rows: data.len(),
        timing_secs: t0.elapsed().as_secs_f64(),
    };
    let path = a.report.clone().unwrap_or_else(|| sibling(&a.output, ".report.json"));
    write_json(&path, &out)?;
    Ok(model)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<EvalReport> {
    let t0 = Instant::now();
    let model: DensityModel = read_json(&a.model)?;
    let (test, rejects) = Dataset::from_csv(&a.input, &a.x_cols, &a.y_col)?;
    if test.dim() != model.basis.dim() {
        return Err(Error::domain(format!(
            "model expects {} covariates, test data has {}",
            model.basis.dim(),
            test.dim()
        )));
    }
    let per_row = model.crps_per_row(&test.x, &test.y, a.grid)?;
    let mean_crps = per_row.iter().sum::<f64>() / per_row.len() as f64;
    let crps_domain = Interval::expanded_from_values(&test.y, 0.0)
        .map(|r| r.hull(&model.domain()))
        .unwrap_or(model.domain());

    let (energy, l2) = match &a.reduced {
        Some(p) => {
            let red = ReducedSet::from_csv(p)?;
            let e = energy_distance_empirical(&red.joint(), &crate::reduction::joint_points(&test.x, &test.y))?;
            let both: Vec<f64> = red.y.iter().chain(&test.y).copied().collect();
            let dom = Interval::expanded_from_values(&both, 0.0)?;
            let f = EmpiricalCdf::new(EmpiricalSet1D::new(red.y.clone())?, dom);
            let g = EmpiricalCdf::new(EmpiricalSet1D::new(test.y.clone())?, dom);
            (Some(e), Some(l2_discrepancy_sq(&f, &g, a.grid)?))
        }
        None => (None, None),
    };

    let (truth, skl) = match a.case {
        Some(case) => {
            if case.dim() != test.dim() {
                return Err(Error::domain(format!("case {case} has {} covariates", case.dim())));
            }
            let oracle = TruthOracle { case };
            let t = truth_crps(&oracle, &test, crps_domain, a.grid)?;
            let quad = QuadratureRule::gauss_legendre(64, model.domain())?;
            let s = crate::metrics::skl(
                |x: &[f64], y: f64| model.cond_density(x, y),
                |x: &[f64], y: f64| oracle.cond_density(x, y),
                &test.x,
                &quad,
            )
            .ok();
            (Some(t), s)
        }
        None => (None, None),
    };

    if let Some(p) = &a.per_row {
        let mut w = csv::Writer::from_path(p)?;
        let mut header = test.x_names.clone();
        header.push(test.y_name.clone());
        header.push("crps".into());
        w.write_record(&header)?;
        for (i, c) in per_row.iter().enumerate() {
            let mut rec: Vec<String> = test.x.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(test.y[i].to_string());
            rec.push(c.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
    }
    if let Some(p) = &a.curves {
        write_curves(p, &model, &test.x, a.curve_rows, a.curve_points)?;
    }
    let report = EvalReport {
        config: a.clone(),
        n_test: test.len(),
        rejects,
        mean_crps,
        crps_domain,
        model_lambda: model.lambda,
        model_mode: model.mode,
        energy_distance: energy,
        l2_discrepancy_sq: l2,
        truth_crps: truth,
        skl,
        timing_secs: t0.elapsed().as_secs_f64(),
    };
    write_json(&a.output, &report)?;
    Ok(report)
}

/// Density and CDF on an even response grid at the first `rows` covariates.
fn write_curves(path: &Path, model: &DensityModel, x: &PointSet, rows: usize, points: usize) -> Result<()> {
    use crate::metrics::Cdf;
    if points < 2 {
        return Err(Error::domain("--curve-points must be at least 2"));
    }
    let dom = model.domain();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["row", "y", "density", "cdf"])?;
    for i in 0..rows.min(x.len()) {
        let s = model.slice(x.row(i));
        for j in 0..points {
            let y = dom.lo + dom.len() * j as f64 / (points - 1) as f64;
            w.write_record([i.to_string(), y.to_string(), s.density(y).to_string(), s.cdf(y).to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<Vec<Replicate>> {
    let t0 = Instant::now();
    if a.reps == 0 {
        return Err(Error::domain("--reps must be at least 1"));
    }
    let mut rows = Vec::new();
    for &case in &a.cases {
        for rep in 0..a.reps {
            let seed = a.seed.wrapping_add(rep as u64);
            let rd = RepData::new(case, a.n_total, seed)?;
            let truth = if a.truth { Some(rd.truth_crps(a.grid)?) } else { None };
            for &n in &a.sizes {
                for &method in &a.methods {
                    let allocations: &[AllocationMode] = match method {
                        Method::Csp | Method::Mcsp => &a.allocations,
                        _ => &[AllocationMode::Proportional],
                    };
                    for &allocation in allocations {
                        let mut rs = ReduceSettings::new(method, n, seed);
                        rs.strategy = a.strategy;
                        rs.allocation = allocation;
                        rs.sp_max_iters = a.sp_max_iters;
                        let mut fs = FitSettings::new(seed);
                        fs.mode = a.mode;
                        if let Some(l) = a.lambda {
                            fs.lambda = LambdaChoice::Fixed(l);
                        }
                        let (mut row, _, _) = run_replicate(&rd, &rs, &fs, a.grid)?;
                        row.rep = rep;
                        row.truth_crps = truth;
                        rows.push(row);
                    }
                }
            }
        }
    }
    write_table(&a.output, &rows)?;
    let summary = SimulateSummary {
        config: a,
        groups: summarize(&rows),
        timing_secs: t0.elapsed().as_secs_f64(),
    };
    let path = a.summary.clone().unwrap_or_else(|| a.output.with_extension("json"));
    write_json(&path, &summary)?;
    Ok(rows)
}

fn summarize(rows: &[Replicate]) -> Vec<GroupSummary> {
    let mut keys: Vec<(CaseId, Method, AllocationMode, usize)> = Vec::new();
    for r in rows {
        let k = (r.case, r.method, r.allocation, r.n);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(case, method, allocation, n)| {
            let g: Vec<&Replicate> = rows
                .iter()
                .filter(|r| r.case == case && r.method == method && r.allocation == allocation && r.n == n)
                .collect();
            let crps: Vec<f64> = g.iter().map(|r| r.crps).collect();
            GroupSummary {
                case,
                method,
                allocation,
                n,
                reps: g.len(),
                mean_log_crps: g.iter().map(|r| r.log_crps).sum::<f64>() / g.len() as f64,
                median_crps: median(&crps),
            }
        })
        .collect()
}

fn write_table(path: &Path, rows: &[Replicate]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "case",
        "method",
        "allocation",
        "strategy",
        "mode",
        "n",
        "rep",
        "seed",
        "k",
        "log_n",
        "crps",
        "log_crps",
        "truth_crps",
        "lambda",
        "reduce_secs",
        "fit_secs",
        "eval_secs",
    ])?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    for r in rows {
        w.write_record([
            r.case.as_str().to_string(),
            r.method.as_str().to_string(),
            serde_plain(&r.allocation)?,
            serde_plain(&r.strategy)?,
            serde_plain(&r.mode)?,
            r.n.to_string(),
            r.rep.to_string(),
            r.seed.to_string(),
            opt(r.k.map(|v| v.to_string())),
            r.log_n.to_string(),
            r.crps.to_string(),
            r.log_crps.to_string(),
            opt(r.truth_crps.map(|v| v.to_string())),
            r.lambda.to_string(),
            r.reduce_secs.to_string(),
            r.fit_secs.to_string(),
            r.eval_secs.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Unit enum variant as its serde name.
fn serde_plain<T: Serialize>(v: &T) -> Result<String> {
    match serde_json::to_value(v)? {
        serde_json::Value::String(s) => Ok(s),
        other => Ok(other.to_string()),
    }
}

fn dispatch(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Generate(a) => cmd_generate(a),
        Command::Reduce(a) => cmd_reduce(a).map(|_| ()),
        Command::Fit(a) => cmd_fit(a).map(|_| ()),
        Command::Eval(a) => cmd_eval(a).map(|_| ()),
        Command::Simulate(a) => cmd_simulate(a).map(|_| ()),
    }
}

/// Run the CLI on `args` (program name first) and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.threads {
        Some(0) => Err(Error::domain("--threads must be at least 1")),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::domain(format!("thread pool: {e}")))
            .and_then(|pool| pool.install(|| dispatch(&cli.command))),
        None => dispatch(&cli.command),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
