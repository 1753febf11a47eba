//! End-to-end runs of the `condsp` command line through `cli::run`.

use std::path::Path;

use condsp::cli::{run, EvalReport};
use condsp::data::Dataset;
use condsp::reduction::ReducedSet;

fn cli(args: &[&str]) -> i32 {
    run(std::iter::once("condsp").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn mcsp_splits_budget_over_covariates() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("c4.csv");
    let out = dir.path().join("red.csv");
    assert_eq!(cli(&["generate", "--case", "case4", "--n", "3000", "--seed", "1", "--output", p(&data)]), 0);
    let code = cli(&[
        "reduce", "--input", p(&data), "--x-cols", "x_1,x_2,x_3", "--y-col", "y", "--method", "mcsp", "--n", "500",
        "--y-range", "0,1", "--output", p(&out),
    ]);
    assert_eq!(code, 0);
    let prov = json(&out.with_extension("json"));
    assert_eq!(prov["n_q"], serde_json::json!([167, 167, 166]));
    let red = ReducedSet::from_csv(&out).unwrap();
    assert_eq!(red.len(), 500);
    assert!(red.y.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn every_method_returns_exactly_n_rows() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("c2.csv");
    assert_eq!(cli(&["generate", "--case", "case2", "--n", "1500", "--seed", "2", "--output", p(&data)]), 0);
    for method in ["csp", "mcsp", "uniform", "vanilla_sp"] {
        let out = dir.path().join(format!("{method}.csv"));
        let code = cli(&[
            "reduce", "--input", p(&data), "--x-cols", "x_1,x_2", "--y-col", "y", "--method", method, "--n", "60",
            "--output", p(&out),
        ]);
        assert_eq!(code, 0, "{method}");
        let red = ReducedSet::from_csv(&out).unwrap();
        assert_eq!(red.len(), 60, "{method}");
        assert!(red.coupled_row.iter().all(|&r| r < 1500));
    }
}

#[test]
fn seeded_uniform_reduction_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("c3.csv");
    assert_eq!(cli(&["generate", "--case", "case3", "--n", "2000", "--seed", "5", "--output", p(&data)]), 0);
    let mut files = Vec::new();
    for run_id in 0..2 {
        let out = dir.path().join(format!("u{run_id}.csv"));
        let code = cli(&[
            "reduce", "--input", p(&data), "--x-cols", "x_1,x_2", "--y-col", "y", "--method", "uniform", "--n",
            "200", "--seed", "7", "--output", p(&out),
        ]);
        assert_eq!(code, 0);
        files.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    assert_eq!(cli(&["--version"]), 0);
    assert_eq!(cli(&["reduce", "--n", "5"]), 1);
    assert_eq!(
        cli(&["reduce", "--input", p(&missing), "--x-cols", "x_1", "--y-col", "y", "--n", "5", "--output", p(&missing)]),
        1
    );
    let data = dir.path().join("b.csv");
    assert_eq!(cli(&["generate", "--case", "banana", "--n", "20", "--output", p(&data)]), 0);
    let out = dir.path().join("r.csv");
    // more points than ten times the rows
    assert_eq!(
        cli(&["reduce", "--input", p(&data), "--x-cols", "x_1", "--y-col", "y", "--n", "201", "--output", p(&out)]),
        1
    );
    assert!(!out.exists());
}

#[test]
fn chained_commands_reproduce_simulate() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name);
    let seed = "3";
    assert_eq!(
        cli(&[
            "generate", "--case", "case1", "--n", "2000", "--seed", seed, "--train", p(&d("train.csv")), "--test",
            p(&d("test.csv")),
        ]),
        0
    );
    let (train, _) = Dataset::from_csv(&d("train.csv"), &["x_1".into(), "x_2".into()], "y").unwrap();
    assert_eq!(train.len(), 1900);
    assert_eq!(
        cli(&[
            "reduce", "--input", p(&d("train.csv")), "--x-cols", "x_1,x_2", "--y-col", "y", "--n", "100", "--seed",
            seed, "--y-range", "0,1", "--output", p(&d("red.csv")),
        ]),
        0
    );
    assert_eq!(
        cli(&[
            "fit", "--input", p(&d("red.csv")), "--provenance", p(&d("red.json")), "--seed", seed, "--output",
            p(&d("model.json")),
        ]),
        0
    );
    assert!(d("model.report.json").exists());
    assert_eq!(
        cli(&[
            "eval", "--model", p(&d("model.json")), "--input", p(&d("test.csv")), "--x-cols", "x_1,x_2", "--y-col",
            "y", "--reduced", p(&d("red.csv")), "--per-row", p(&d("rows.csv")), "--curves", p(&d("curves.csv")),
            "--output", p(&d("eval.json")),
        ]),
        0
    );
    let report: EvalReport = serde_json::from_value(json(&d("eval.json"))).unwrap();
    assert_eq!(report.n_test, 100);
    assert!(report.energy_distance.unwrap() > 0.0);

    assert_eq!(
        cli(&[
            "simulate", "--cases", "case1", "--n-total", "2000", "--sizes", "100", "--reps", "1", "--seed", seed,
            "--output", p(&d("sim.csv")),
        ]),
        0
    );
    let mut rdr = csv::Reader::from_path(d("sim.csv")).unwrap();
    let header = rdr.headers().unwrap().clone();
    let col = header.iter().position(|h| h == "crps").unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 1);
    let sim_crps: f64 = rows[0][col].parse().unwrap();
    assert_eq!(sim_crps, report.mean_crps);
    let summary = json(&d("sim.json"));
    assert_eq!(summary["groups"][0]["reps"], 1);
}
