mod common;

use common::{forward_invariance, load_witness};
use jmls_mpc::planner::{PlannerConfig, PlannerKind};
use jmls_mpc::sim::{run_episode, EpisodeConfig};
use jmls_mpc::solver::ClarabelSolver;

#[test]
fn feasible_single_mode_loops_stay_safe() {
    let solver = ClarabelSolver::new();
    let report = forward_invariance(50, 20, &solver);
    assert_eq!(report.runs, 50);
    assert!(report.min_barrier >= -1e-6, "{report:?}");
    assert!(report.min_step_margin >= -1e-6, "{report:?}");
}

#[test]
fn first_step_consensus_can_be_unsafe() {
    let (bundle, schedule) = load_witness();
    assert_eq!(bundle.model().n_modes(), 2);
    let solver = ClarabelSolver::new();
    let run = |kind| {
        run_episode(
            &EpisodeConfig {
                bundle: &bundle,
                schedule,
                planner: PlannerConfig::new(kind),
                seed: 0,
            },
            &solver,
        )
        .unwrap()
    };
    for _ in 0..2 {
        let first = run(PlannerKind::FirstStep);
        assert!(!first.safe);
        assert_eq!(first.first_violation, Some(6));
        let full = run(PlannerKind::FullStep);
        assert!(full.safe);
        assert_eq!(full.fallback_steps(), 0);
    }
}
