//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! Run with `cargo test --release -p condsp --test acceptance -- --nocapture`
//! (the PASS/FAIL lines go straight to stderr and show up either way).

use std::io::Write;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use condsp::cli::{median, run_replicate, FitSettings, ReduceSettings, RepData};
use condsp::density::{criterion_likelihood, criterion_pseudo_cached, Basis, BasisConfig, PseudoCache};
use condsp::metrics::{
    crps_empirical_closed_form, crps_per_row, crps_single, energy_distance_empirical, l2_discrepancy_sq, Cdf,
    EmpiricalCdf, EmpiricalSet1D, FnCdf, DEFAULT_GRID_SIZE,
};
use condsp::quadrature::QuadratureRule;
use condsp::reduction::{csp_reduce, AllocationMode, CspOptions, Method, ReducedSet};
use condsp::simgen::{generate, CaseId, CaseSpec};
use condsp::support_points::{empirical_energy_objective, support_points_1d, SpConfig};
use condsp::{Interval, PointSet};

/// Criteria run one at a time so each wall-clock budget measures only itself.
static SERIAL: Mutex<()> = Mutex::new(());

fn verdict(id: u32, name: &str, pass: bool, elapsed: Duration, budget: Option<Duration>, detail: &str) -> bool {
    let in_budget = budget.is_none_or(|b| elapsed <= b);
    let ok = pass && in_budget;
    let budget_txt = budget.map(|b| format!(" / budget {:.0}s", b.as_secs_f64())).unwrap_or_default();
    let line = format!(
        "\ncriterion {id:>2} {name}: {} [{:.1}s{budget_txt}] {detail}\n",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    ok
}

fn minutes(m: u64) -> Option<Duration> {
    Some(Duration::from_secs(60 * m))
}

fn random_set(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rng.random_range(1..=30);
    let (loc, scale) = (rng.random_range(-3.0..3.0), rng.random_range(0.1..4.0));
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            loc + scale * z
        })
        .collect()
}

#[test]
fn criterion_01_identity_suite() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);

    let mut worst_half = 0.0f64;
    for _ in 0..50 {
        let (a, b) = (random_set(&mut rng), random_set(&mut rng));
        let both: Vec<f64> = a.iter().chain(&b).copied().collect();
        let dom = Interval::expanded_from_values(&both, 0.01).unwrap();
        let fa = EmpiricalCdf::new(EmpiricalSet1D::new(a.clone()).unwrap(), dom);
        let fb = EmpiricalCdf::new(EmpiricalSet1D::new(b.clone()).unwrap(), dom);
        let d2 = l2_discrepancy_sq(&fa, &fb, DEFAULT_GRID_SIZE).unwrap();
        let e = energy_distance_empirical(&PointSet::from_scalars(&a), &PointSet::from_scalars(&b)).unwrap();
        worst_half = worst_half.max((d2 - e / 2.0).abs());
    }

    let mut worst_crps = 0.0f64;
    for _ in 0..50 {
        let pts = random_set(&mut rng);
        let y: f64 = pts[0] + rng.random_range(-4.0..4.0);
        let mut span = pts.clone();
        span.push(y);
        let dom = Interval::expanded_from_values(&span, 0.01).unwrap();
        let set = EmpiricalSet1D::new(pts).unwrap();
        let numeric = crps_single(&EmpiricalCdf::new(set.clone(), dom), y, DEFAULT_GRID_SIZE).unwrap();
        worst_crps = worst_crps.max((numeric - crps_empirical_closed_form(&set, y)).abs());
    }

    let mut worst_self = 0.0f64;
    for d in 1..=3 {
        for _ in 0..10 {
            let n = rng.random_range(1..40);
            let coords: Vec<f64> = (0..n * d).map(|_| rng.random_range(-5.0..5.0)).collect();
            let s = PointSet::new(d, coords).unwrap();
            worst_self = worst_self.max(energy_distance_empirical(&s, &s).unwrap().abs());
        }
    }

    let pass = worst_half <= 1e-5 && worst_crps <= 1e-6 && worst_self == 0.0;
    assert!(verdict(
        1,
        "identity suite",
        pass,
        t0.elapsed(),
        minutes(1),
        &format!("max|D2-E/2|={worst_half:.2e} max|crps num-closed|={worst_crps:.2e} max E(A,A)={worst_self:.1e}"),
    ));
}

#[test]
fn criterion_02_support_point_oracle() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t0 = Instant::now();
    let big_n = 20_000;
    let grid: Vec<f64> = (0..big_n).map(|j| (j as f64 + 0.5) / big_n as f64).collect();
    let data = EmpiricalSet1D::new(grid).unwrap();
    let mut worst_level = 0.0f64;
    for n in [1usize, 2, 5] {
        let res = support_points_1d(&data, n, &SpConfig::default()).unwrap();
        for (i, z) in res.points.coords().iter().enumerate() {
            let level = (2 * i + 1) as f64 / (2 * n) as f64;
            worst_level = worst_level.max((z - level).abs());
        }
    }

    // exhaustive search over ordered pairs on a 0.0005 grid
    let five = [0.0, 0.1, 0.35, 0.8, 1.0];
    let obj = |a: f64, b: f64| {
        let cross: f64 = five.iter().map(|y| (a - y).abs() + (b - y).abs()).sum::<f64>() / 10.0;
        2.0 * cross - (a - b).abs() / 2.0
    };
    let steps = 2000;
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..=steps {
        let a = i as f64 / steps as f64;
        for j in i..=steps {
            let b = j as f64 / steps as f64;
            let v = obj(a, b);
            if v < best.0 {
                best = (v, a, b);
            }
        }
    }
    let res = support_points_1d(&EmpiricalSet1D::new(five.to_vec()).unwrap(), 2, &SpConfig::default()).unwrap();
    let z = res.points.coords();
    let grid_gap = (z[0] - best.1).abs().max((z[1] - best.2).abs());
    let solver_obj = empirical_energy_objective(&res.points, &PointSet::from_scalars(&five)).unwrap();

    let pass = worst_level <= 1e-3 && grid_gap <= 1e-3 && solver_obj <= best.0 + 1e-9;
    assert!(verdict(
        2,
        "1D support-point oracle",
        pass,
        t0.elapsed(),
        minutes(1),
        &format!(
            "max|z_i-(2i-1)/2n|={worst_level:.2e} solver={z:?} grid=({:.4},{:.4}) gap={grid_gap:.2e}",
            best.1, best.2
        ),
    ));
}

#[test]
fn criterion_03_crps_decomposition() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t0 = Instant::now();
    // truth Y | X=x ~ N(x, 1), X ~ N(0, 1); estimator N(0.8x + 0.3, 1.5^2)
    let m = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut xs = Vec::with_capacity(m);
    let mut ys = Vec::with_capacity(m);
    for _ in 0..m {
        let x: f64 = StandardNormal.sample(&mut rng);
        let e: f64 = StandardNormal.sample(&mut rng);
        xs.push(x);
        ys.push(x + e);
    }
    let x = PointSet::from_scalars(&xs);
    let dom = |x: f64| Interval::new(x - 25.0, x + 25.0).unwrap();
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let truth = |xv: &[f64]| {
        let c = xv[0];
        FnCdf::new(move |t| std_normal.cdf(t - c), dom(c))
    };
    let est = |xv: &[f64]| {
        let c = xv[0];
        let mu = 0.8 * c + 0.3;
        FnCdf::new(move |t| std_normal.cdf((t - mu) / 1.5), dom(c))
    };
    let c_hat = crps_per_row(est, &x, &ys, DEFAULT_GRID_SIZE).unwrap();
    let c_true = crps_per_row(truth, &x, &ys, DEFAULT_GRID_SIZE).unwrap();
    let d2: Vec<f64> = xs
        .iter()
        .map(|&v| l2_discrepancy_sq(&est(&[v]), &truth(&[v]), DEFAULT_GRID_SIZE).unwrap())
        .collect();
    let z: Vec<f64> = (0..m).map(|i| c_hat[i] - c_true[i] - d2[i]).collect();
    let mean = z.iter().sum::<f64>() / m as f64;
    let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
    let se = (var / m as f64).sqrt();
    let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;

    let pass = mean.abs() <= 3.0 * se;
    assert!(verdict(
        3,
        "CRPS decomposition",
        pass,
        t0.elapsed(),
        minutes(5),
        &format!(
            "E crps(est)={:.5} E crps(truth)={:.5} E D2={:.5} residual={mean:.2e} (3 s.e.={:.2e})",
            avg(&c_hat),
            avg(&c_true),
            avg(&d2),
            3.0 * se
        ),
    ));
}

fn fd_relative_error(f: impl Fn(&[f64]) -> (f64, Vec<f64>), theta: &[f64], h: f64) -> f64 {
    let (_, g) = f(theta);
    let mut num = 0.0;
    let mut den = 0.0;
    let mut t = theta.to_vec();
    for k in 0..theta.len() {
        t[k] = theta[k] + h;
        let up = f(&t).0;
        t[k] = theta[k] - h;
        let down = f(&t).0;
        t[k] = theta[k];
        let fd = (up - down) / (2.0 * h);
        num += (g[k] - fd).powi(2);
        den += fd * fd;
    }
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

#[test]
fn criterion_04_gradient_checks() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t0 = Instant::now();
    let (data, _) = generate(&CaseSpec {
        case: CaseId::Case1,
        n: 5000,
        seed: 404,
    })
    .unwrap();
    let (red, _) = csp_reduce(&data, 200, &CspOptions::for_size(200, 404)).unwrap();
    let ds = red.to_dataset();
    let basis = Basis::build(
        &BasisConfig::default(),
        &ds.x,
        &ds.y,
        data.response_domain().unwrap(),
        data.x_ranges().unwrap(),
    )
    .unwrap();
    // a covariate-dependent reference density on the normalized response
    let rho = |x: &[f64], u: f64| 1.0 + 0.5 * (x[0] - 0.5) * (2.0 * u - 1.0);
    let cache = PseudoCache::new(&basis, &ds, &rho).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4040);
    let (mut worst_lik, mut worst_pseudo) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let scale = rng.random_range(0.05..1.0);
        let theta: Vec<f64> = (0..basis.n_coef())
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                scale * z
            })
            .collect();
        let lambda = 10f64.powf(rng.random_range(-5.0..0.0));
        worst_lik = worst_lik.max(fd_relative_error(
            |t| criterion_likelihood(t, &ds, lambda, &basis).unwrap(),
            &theta,
            1e-5,
        ));
        worst_pseudo = worst_pseudo.max(fd_relative_error(
            |t| criterion_pseudo_cached(t, &ds, lambda, &basis, &cache).unwrap(),
            &theta,
            1e-5,
        ));
    }
    let pass = worst_lik < 1e-5 && worst_pseudo < 1e-5;
    assert!(verdict(
        4,
        "gradient checks",
        pass,
        t0.elapsed(),
        minutes(1),
        &format!(
            "{} coefficients, max rel err likelihood={worst_lik:.2e} pseudo={worst_pseudo:.2e}",
            basis.n_coef()
        ),
    ));
}

#[test]
fn criterion_05_density_validity() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t0 = Instant::now();
    let mut worst_mass = 0.0f64;
    let mut worst_drop = 0.0f64;
    let mut min_density = f64::INFINITY;
    let mut failures = Vec::new();
    for (ci, case) in CaseId::ALL.into_iter().enumerate() {
        let seed = 500 + ci as u64;
        let rd = RepData::new(case, 10_000, seed).unwrap();
        let (_, _, model) = run_replicate(
            &rd,
            &ReduceSettings::new(Method::Csp, 200, seed),
            &FitSettings::new(seed),
            DEFAULT_GRID_SIZE,
        )
        .unwrap();
        let (probe, _) = generate(&CaseSpec { case, n: 100, seed: seed + 1000 }).unwrap();
        let dom = model.domain();
        // knots in original units plus a fine uniform cut, 20 nodes per piece
        let mut pieces: Vec<f64> = (0..=256).map(|k| dom.lo + dom.len() * k as f64 / 256.0).collect();
        pieces.extend(model.basis.y_basis().spline().breaks().iter().map(|u| dom.lo + dom.len() * u));
        pieces.sort_by(f64::total_cmp);
        pieces.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * dom.len());
        let quad = QuadratureRule::composite(&pieces, 20).unwrap();
        let (mut case_mass, mut case_drop) = (0.0f64, 0.0f64);
        for x in probe.x.rows() {
            let s = model.slice(x);
            let mass = quad.integrate(|y| s.density(y));
            case_mass = case_mass.max((mass - 1.0).abs());
            let mut prev = s.cdf(dom.lo);
            case_drop = case_drop.max(prev.abs());
            for k in 1..=2000 {
                let y = dom.lo + dom.len() * k as f64 / 2000.0;
                let f = s.cdf(y);
                case_drop = case_drop.max(prev - f);
                prev = f;
                min_density = min_density.min(s.density(y));
            }
            case_drop = case_drop.max((prev - 1.0).abs());
        }
        if case_mass > 1e-6 || case_drop > 1e-12 {
            failures.push(format!("{case}: mass err {case_mass:.1e}, cdf drop {case_drop:.1e}"));
        }
        worst_mass = worst_mass.max(case_mass);
        worst_drop = worst_drop.max(case_drop);
    }
    let pass = failures.is_empty() && min_density > 0.0;
    assert!(verdict(
        5,
        "density validity",
        pass,
        t0.elapsed(),
        minutes(1),
        &format!(
            "{} cases x 100 x: max|int f - 1|={worst_mass:.1e} max cdf violation={worst_drop:.1e} min f={min_density:.1e} {failures:?}",
            CaseId::ALL.len()
        ),
    ));
}

/// Mean CRPS per method over seeds, from one shared dataset per seed.
fn crps_table(
    case: CaseId,
    n_total: usize,
    seeds: std::ops::Range<u64>,
    configs: &[ReduceSettings],
) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new(); configs.len()];
    for seed in seeds {
        let rd = RepData::new(case, n_total, seed).unwrap();
        for (j, base) in configs.iter().enumerate() {
            let rs = ReduceSettings { seed, ..base.clone() };
            let (row, _, _) = run_replicate(&rd, &rs, &FitSettings::new(seed), DEFAULT_GRID_SIZE).unwrap();
            out[j].push(row.crps);
        }
    }
    out
}

#[test]
fn criterion_06_convergence_pattern() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t0 = Instant::now();
    let sizes = [32usize, 100, 316, 1000];
    let configs: Vec<ReduceSettings> = sizes.iter().map(|&n| ReduceSettings::new(Method::Csp, n, 0)).collect();
    let table = crps_table(CaseId::Case2, 20_000, 0..5, &configs);
    let m: Vec<f64> = table
        .iter()
        .map(|v| v.iter().map(|c| c.ln()).sum::<f64>() / v.len() as f64)
        .collect();
    let first = m[0] - m[1];
    let pass = m[0] > m[1] && m[1] > m[2] && (m[3] - m[2]).abs() <= 0.5 * first;
    assert!(verdict(
        6,
        "convergence pattern",
        pass,
        t0.elapsed(),
        minutes(15),
        &format!(
            "mean log CRPS at n={sizes:?}: [{:.4}, {:.4}, {:.4}, {:.4}]; first drop {first:.4}, last |change| {:.4}",
            m[0],
            m[1],
            m[2],
            m[3],
            (m[3] - m[2]).abs()
        ),
    ));
}

#[test]
fn criterion_07_method_ordering() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t0 = Instant::now();
    let methods = [Method::Csp, Method::Mcsp, Method::Uniform, Method::VanillaSp];
    let configs: Vec<ReduceSettings> = methods.iter().map(|&me| ReduceSettings::new(me, 500, 0)).collect();
    let mut chain_ok = 0;
    let mut vs_sp_ok = 0;
    let mut detail = Vec::new();
    for case in [CaseId::Case1, CaseId::Case2, CaseId::Case3] {
        let table = crps_table(case, 20_000, 0..10, &configs);
        let med: Vec<f64> = table.iter().map(|v| median(v)).collect();
        let chain = med[0] <= med[1] && med[1] <= med[2];
        let vs_sp = med[0] <= med[3];
        chain_ok += usize::from(chain);
        vs_sp_ok += usize::from(vs_sp);
        detail.push(format!(
            "{case}: csp {:.5} mcsp {:.5} unif {:.5} sp {:.5}",
            med[0], med[1], med[2], med[3]
        ));
    }
    let pass = chain_ok >= 2 && vs_sp_ok >= 2;
    assert!(verdict(
        7,
        "method ordering",
        pass,
        t0.elapsed(),
        minutes(20),
        &format!(
            "median CRPS {}; csp<=mcsp<=unif in {chain_ok}/3, csp<=sp in {vs_sp_ok}/3",
            detail.join("; ")
        ),
    ));
}

#[test]
fn criterion_08_allocation_comparison() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t0 = Instant::now();
    let mut pass = true;
    let mut detail = Vec::new();
    for n in [100usize, 316] {
        let prop = ReduceSettings::new(Method::Csp, n, 0);
        let equal = ReduceSettings {
            allocation: AllocationMode::Equal,
            ..prop.clone()
        };
        let table = crps_table(CaseId::Case1, 20_000, 0..10, &[prop, equal]);
        let (mp, me) = (median(&table[0]), median(&table[1]));
        pass &= mp < me;
        detail.push(format!("n={n}: proportional {mp:.5} vs equal {me:.5}"));
    }
    assert!(verdict(
        8,
        "allocation comparison",
        pass,
        t0.elapsed(),
        minutes(10),
        &format!("median CRPS {}", detail.join("; ")),
    ));
}

#[test]
fn criterion_09_distributional_convergence() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t0 = Instant::now();
    let (train, _) = generate(&CaseSpec {
        case: CaseId::Case1,
        n: 20_000,
        seed: 900,
    })
    .unwrap();
    let (holdout, _) = generate(&CaseSpec {
        case: CaseId::Case1,
        n: 5000,
        seed: 9_000_900,
    })
    .unwrap();
    let target = condsp::reduction::joint_points(&holdout.x, &holdout.y);
    let sizes = [32usize, 100, 316, 1000];
    let mut ed = Vec::new();
    for &n in &sizes {
        let (red, _): (ReducedSet, _) = csp_reduce(&train, n, &CspOptions::for_size(n, 900)).unwrap();
        ed.push(energy_distance_empirical(&red.joint(), &target).unwrap());
    }
    let inversions = ed.windows(2).filter(|w| w[1] >= w[0]).count();
    assert!(verdict(
        9,
        "distributional convergence",
        inversions <= 1,
        t0.elapsed(),
        minutes(10),
        &format!("energy distance at n={sizes:?}: {ed:.5?}; inversions {inversions}"),
    ));
}

#[test]
fn criterion_10_performance_envelope() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("big.csv");
    let (data, _) = generate(&CaseSpec {
        case: CaseId::Case1,
        n: 100_000,
        seed: 1000,
    })
    .unwrap();
    data.to_csv(&input).unwrap();
    let run = |threads: usize, out: &std::path::Path| {
        let args: Vec<String> = vec![
            "condsp".into(),
            "--threads".into(),
            threads.to_string(),
            "reduce".into(),
            "--input".into(),
            input.display().to_string(),
            "--x-cols".into(),
            "x_1,x_2".into(),
            "--y-col".into(),
            "y".into(),
            "--method".into(),
            "csp".into(),
            "--n".into(),
            "1000".into(),
            "--seed".into(),
            "10".into(),
            "--output".into(),
            out.display().to_string(),
        ];
        condsp::cli::run(args)
    };
    let serial_out = dir.path().join("serial.csv");
    let parallel_out = dir.path().join("parallel.csv");
    let t0 = Instant::now();
    let code_serial = run(1, &serial_out);
    let serial_time = t0.elapsed();
    let code_parallel = run(4, &parallel_out);
    let identical = code_serial == 0
        && code_parallel == 0
        && std::fs::read(&serial_out).unwrap() == std::fs::read(&parallel_out).unwrap();
    let rows = ReducedSet::from_csv(&serial_out).map(|r| r.len()).unwrap_or(0);
    assert!(verdict(
        10,
        "performance envelope",
        identical && rows == 1000,
        serial_time,
        minutes(5),
        &format!("N=100000 d=2 n=1000 single-threaded reduce; rows={rows}; serial == 4-thread output: {identical}"),
    ));
}
