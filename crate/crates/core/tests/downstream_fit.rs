//! Downstream density fits on reduced sets.

use condsp::cli::{run_replicate, FitSettings, ReduceSettings, RepData};
use condsp::metrics::DEFAULT_GRID_SIZE;
use condsp::reduction::Method;
use condsp::simgen::CaseId;

#[test]
fn csp_fit_beats_uniform_subsample_on_case1() {
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..10u64 {
        let rd = RepData::new(CaseId::Case1, 20_000, seed).unwrap();
        let crps = |method| {
            let (row, _, _) = run_replicate(
                &rd,
                &ReduceSettings::new(method, 500, seed),
                &FitSettings::new(seed),
                DEFAULT_GRID_SIZE,
            )
            .unwrap();
            row.crps
        };
        let (c, u) = (crps(Method::Csp), crps(Method::Uniform));
        wins += usize::from(c < u);
        pairs.push((c, u));
    }
    assert!(wins >= 8, "csp below uniform in {wins}/10: {pairs:?}");
}
