//! Steady-state behavior of the reference tracking scenario.

use cmdf_core::analysis::{self, GapMetric};
use cmdf_core::filter::{CovarianceSchedule, FusionPlan};
use cmdf_core::network::{graph_metrics, metropolis_weights, random_geometric, WeightMatrix};
use cmdf_core::numerics::{norm2, Matrix};
use cmdf_core::simulate::reference_scenario;

fn scenario_weights() -> (WeightMatrix, usize) {
    let s = reference_scenario();
    let g = random_geometric(s.node_count, s.width, s.radius, 1).unwrap();
    (metropolis_weights(&g).unwrap(), graph_metrics(&g).diameter)
}

/// Centralized solution from an independent solver (Schur-based DARE).
#[test]
fn centralized_matches_frozen_baseline() {
    let s = reference_scenario();
    let expect = Matrix::from_row_slice(
        4,
        4,
        &[
            1.764531095467661, 1.434186691472181, 0.505136407453505, 0.541794395072361,
            1.434186691472181, 1.714285311262486, 0.541794395072360, 0.758656916051694,
            0.505136407453505, 0.541794395072360, 1.764531095467666, 1.434186691472183,
            0.541794395072361, 0.758656916051694, 1.434186691472183, 1.714285311262489,
        ],
    );
    let p = analysis::centralized_steady(&s.system, &s.sensors).unwrap();
    assert!(norm2(&(&p - &expect)) < 1e-9, "{p}");
    assert!((p.trace() - 6.9576328134603).abs() < 1e-9);
}

#[test]
fn filter_covariance_reaches_modified_dare() {
    let s = reference_scenario();
    let (w, d) = scenario_weights();
    let plan = FusionPlan::new(&w);
    let sched = CovarianceSchedule::compute(&s.system, &s.sensors, &plan, d, 500, &Matrix::identity(4, 4)).unwrap();
    let last = sched.instants.last().unwrap();
    for i in 0..s.node_count {
        let p = analysis::node_param_steady(&s.system, &s.sensors, &w, i, d).unwrap();
        assert!(norm2(&(&last.prior[i] - &p)) < 1e-6, "node {i}");
    }
}

#[test]
fn gap_series_consistent_after_diameter() {
    let s = reference_scenario();
    let (w, d) = scenario_weights();
    for node in [0, 7, 19] {
        for l in [d, d + 3] {
            let gap = analysis::gap_series_mismatch(&s.system, &s.sensors, &w, node, l, 500).unwrap();
            assert!(gap < 1e-6, "node {node} L {l}: {gap:e}");
        }
    }
}

#[test]
fn uniform_weights_are_exact() {
    let s = reference_scenario();
    let w = WeightMatrix::uniform(s.node_count);
    let rep = analysis::gap_report(&s.system, &s.sensors, &w, &[1, 3]).unwrap();
    for (_, g) in rep.worst_case(GapMetric::Total) {
        assert!(g <= 1e-8, "{g:e}");
    }
}

#[test]
fn distributed_never_beats_centralized() {
    let s = reference_scenario();
    let (w, d) = scenario_weights();
    let rep = analysis::gap_report(&s.system, &s.sensors, &w, &[d, d + 10]).unwrap();
    let central = rep.central.trace();
    for row in &rep.rows {
        assert!(row.mse_theory >= central - 1e-9, "{row:?}");
        assert!(row.mse_theory_posterior < row.mse_theory);
    }
    // more fusion helps every node
    let by = |l: usize, i: usize| rep.rows.iter().find(|r| r.depth == l && r.node == i).unwrap().mse_theory;
    for i in 0..s.node_count {
        assert!(by(d + 10, i) < by(d, i));
    }
}

#[test]
fn fitted_rates_are_below_consensus_rate() {
    let s = reference_scenario();
    let (w, d) = scenario_weights();
    let depths: Vec<usize> = (d..=d + 30).collect();
    let rep = analysis::gap_report(&s.system, &s.sensors, &w, &depths).unwrap();
    let slem = cmdf_core::network::slem(&w).unwrap();
    for metric in GapMetric::ALL {
        let fit = analysis::fit_rate(&rep.worst_case(metric)).unwrap();
        assert!(fit.q < 1.0 && fit.q <= slem + 0.05, "{metric:?}: {fit:?}");
    }
}

#[test]
fn reference_scan_reaches_every_node_within_diameter() {
    let s = reference_scenario();
    let (w, d) = scenario_weights();
    let scan = analysis::minimal_fusion_scan(&s.system, &s.sensors, &w, d).unwrap();
    assert!(scan.iter().all(|l| matches!(l, Some(l) if *l <= d)));
}
