//! Reduction properties checked across the simulation cases.

use condsp::metrics::{energy_distance_empirical, EmpiricalSet1D};
use condsp::partition::bin_partition;
use condsp::reduction::{
    cell_objective, csp_on_partition, csp_reduce, joint_points, uniform_subsample, CspOptions, Method,
};
use condsp::simgen::{generate, CaseId, CaseSpec};

#[test]
fn csp_objective_never_exceeds_uniform_subsample() {
    for (ci, case) in CaseId::ALL.into_iter().enumerate() {
        let (ds, _) = generate(&CaseSpec { case, n: 4000, seed: 40 + ci as u64 }).unwrap();
        for n in [100usize, 500] {
            let opts = CspOptions::for_size(n, 0);
            let part = bin_partition(&ds.x, opts.partition.k_target).unwrap();
            let (red, _) = csp_on_partition(&ds, n, &part, &opts, Method::Csp).unwrap();
            let uni = uniform_subsample(&ds, n, 1).unwrap();
            let mut csp_pts = vec![Vec::new(); part.k];
            let mut uni_pts = vec![Vec::new(); part.k];
            for i in 0..n {
                csp_pts[red.cell_id[i]].push(red.y[i]);
                uni_pts[part.cell_of[uni.coupled_row[i]]].push(uni.y[i]);
            }
            let (mut c, mut u) = (0.0, 0.0);
            for k in 0..part.k {
                if csp_pts[k].is_empty() || uni_pts[k].is_empty() {
                    continue;
                }
                let resp = EmpiricalSet1D::new(part.cells[k].iter().map(|&r| ds.y[r]).collect()).unwrap();
                c += cell_objective(&csp_pts[k], &resp);
                u += cell_objective(&uni_pts[k], &resp);
            }
            assert!(c <= u, "{case} n={n}: csp {c} > uniform {u}");
        }
    }
}

#[test]
fn reduced_sets_approach_holdout_in_energy_distance() {
    for (case, seed) in [(CaseId::Case2, 71u64), (CaseId::Case3, 72)] {
        let (train, _) = generate(&CaseSpec { case, n: 10_000, seed }).unwrap();
        let (hold, _) = generate(&CaseSpec { case, n: 3000, seed: seed + 9_000_000 }).unwrap();
        let hold = joint_points(&hold.x, &hold.y);
        let eds: Vec<f64> = [50usize, 200, 800]
            .iter()
            .map(|&n| {
                let (red, _) = csp_reduce(&train, n, &CspOptions::for_size(n, seed)).unwrap();
                energy_distance_empirical(&red.joint(), &hold).unwrap()
            })
            .collect();
        assert!(eds[0] > eds[1] && eds[1] > eds[2], "{case}: {eds:?}");
    }
}
