use jmls_mpc::oracle::OracleSchedule;
use jmls_mpc::planner::{PlannerConfig, PlannerKind};
use jmls_mpc::scenario::{build_rendezvous, ScenarioName, ScenarioVariant, SweepGrid};
use jmls_mpc::sim::{
    emit_results, read_rows, run_episode, run_sweep, EpisodeConfig, EpisodeRow, SweepResults, TrajectoryMode,
};
use jmls_mpc::solver::ClarabelSolver;
use std::sync::OnceLock;

fn small_grid() -> SweepGrid {
    SweepGrid {
        scenario: ScenarioName::Rendezvous,
        variants: vec![
            ScenarioVariant::OffNominalMeanMotion(0.061),
            ScenarioVariant::OffNominalMeanMotion(0.101),
        ],
        switch_steps: vec![4, 20],
        delays: vec![0, 1],
        switched_mode: 2,
    }
}

fn sweep(workers: usize, mode: TrajectoryMode) -> SweepResults {
    let planners = [
        PlannerConfig::new(PlannerKind::FirstStep),
        PlannerConfig::new(PlannerKind::Adaptive),
    ];
    run_sweep(&small_grid(), &planners, workers, &ClarabelSolver::new(), mode).unwrap()
}

fn kept_sweep() -> &'static SweepResults {
    static KEPT: OnceLock<SweepResults> = OnceLock::new();
    KEPT.get_or_init(|| sweep(1, TrajectoryMode::Keep))
}

#[test]
fn sweep_rows_match_single_episodes() {
    let results = kept_sweep();
    assert_eq!(results.outcomes.len(), 16);
    assert_eq!(results.errors(), 0);
    let solver = ClarabelSolver::new();
    let outcome = results
        .outcomes
        .iter()
        .find(|o| {
            o.row.planner == PlannerKind::Adaptive
                && o.row.variant_index == 1
                && o.row.switch_step == 4
                && o.row.delay == 1
        })
        .unwrap();
    let bundle = build_rendezvous(0.101).unwrap();
    let record = run_episode(
        &EpisodeConfig {
            bundle: &bundle,
            schedule: OracleSchedule::new(0, 1, 4, 1).unwrap(),
            planner: PlannerConfig::new(PlannerKind::Adaptive),
            seed: 0,
        },
        &solver,
    )
    .unwrap();
    let kept = outcome.record.as_ref().unwrap();
    assert_eq!(kept.states, record.states);
    assert_eq!(kept.controls, record.controls);
    assert_eq!(outcome.row.success, record.success);
    assert_eq!(outcome.row.avg_cost, record.avg_cost);
}

#[test]
fn outputs_round_trip_and_repeat() {
    let one = kept_sweep();
    let three = sweep(3, TrajectoryMode::Discard);
    assert_eq!(one.rows(), three.rows());

    let dir = tempfile::tempdir().unwrap();
    let files = emit_results(one, dir.path()).unwrap();
    let rows: Vec<EpisodeRow> = read_rows(&files.episodes).unwrap();
    assert_eq!(rows, one.rows());
    assert_eq!(files.trajectories.len(), 16);

    let again = tempfile::tempdir().unwrap();
    let files_again = emit_results(&three, again.path()).unwrap();
    assert_eq!(
        std::fs::read(&files.episodes).unwrap(),
        std::fs::read(&files_again.episodes).unwrap()
    );
    assert!(files_again.trajectories.is_empty());

    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(&files.summary).unwrap()).unwrap();
    assert_eq!(summary["scenario"], "rendezvous");
    let planners = summary["planners"].as_object().unwrap();
    assert_eq!(planners.len(), 2);
    for block in planners.values() {
        for key in [
            "trials",
            "successes",
            "success_pct",
            "avg_cost",
            "rate_mean_hz",
            "rate_std_hz",
        ] {
            assert!(block[key].is_number(), "missing {key}");
        }
        assert_eq!(block["trials"], 8);
    }
}

#[test]
fn trajectory_file_layout() {
    let dir = tempfile::tempdir().unwrap();
    let files = emit_results(kept_sweep(), dir.path()).unwrap();
    let path = files
        .trajectories
        .iter()
        .find(|p| p.file_name().unwrap() == "adaptive_v1_s4_d1.csv")
        .unwrap();
    let mut reader = csv::Reader::from_path(path).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header.len(), 1 + 6 + 3 + 2);
    assert_eq!(header[0], "t");
    let records: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(records.len(), 29);
    assert!(records[28][7].is_empty());
    let horizons: Vec<usize> = records[..28].iter().map(|r| r[10].parse().unwrap()).collect();
    assert!(horizons[..4].iter().all(|&h| h == 29));
    assert!(horizons[4..].iter().any(|&h| h < 29));
}

#[test]
fn zero_length_episodes_report_no_success() {
    let mut bundle = build_rendezvous(0.061).unwrap();
    bundle.episode_steps = 0;
    bundle.duration_s = 0.0;
    let record = run_episode(
        &EpisodeConfig {
            bundle: &bundle,
            schedule: OracleSchedule::new(0, 1, 1, 0).unwrap(),
            planner: PlannerConfig::new(PlannerKind::Adaptive),
            seed: 0,
        },
        &ClarabelSolver::new(),
    )
    .unwrap();
    assert_eq!(record.states.len(), 1);
    assert!(record.safe);
    assert!(!record.success);
    assert_eq!(record.avg_cost, 0.0);
}
