//! Closed-loop episodes, sweeps and result files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::OracleSchedule;
use crate::planner::{PlanStepReport, Planner, PlannerConfig, PlannerKind};
use crate::scenario::{ScenarioBundle, ScenarioVariant, SweepGrid};
use crate::solver::ConvexSolver;

#[derive(Debug, Clone)]
pub struct EpisodeConfig<'a> {
    pub bundle: &'a ScenarioBundle,
    pub schedule: OracleSchedule,
    pub planner: PlannerConfig,
    /// Unused; the pipeline is deterministic.
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    /// `episode_steps + 1` states, starting with `x0`.
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub step_reports: Vec<PlanStepReport>,
    pub safe: bool,
    /// Index of the first state outside the safe set.
    pub first_violation: Option<usize>,
    pub reached_goal: bool,
    pub success: bool,
    pub avg_cost: f64,
    pub control_rate_hz: f64,
    /// Planner wall time summed over the episode, seconds.
    pub planning_time_s: f64,
}

impl EpisodeRecord {
    pub fn fallback_steps(&self) -> usize {
        self.step_reports.iter().filter(|r| r.fallback_level > 0).count()
    }

    pub fn infeasible_steps(&self) -> usize {
        self.step_reports.iter().filter(|r| !r.feasible).count()
    }

    pub fn min_chosen_h(&self) -> Option<usize> {
        self.step_reports.iter().filter_map(|r| r.chosen_h).min()
    }
}

pub fn run_episode(config: &EpisodeConfig<'_>, solver: &dyn ConvexSolver) -> Result<EpisodeRecord> {
    let bundle = config.bundle;
    let model = bundle.model();
    config.schedule.validate_for(model.n_modes())?;
    let mut planner = Planner::new(config.planner.clone(), &bundle.ocp, solver)?;
    let barriers = bundle.barriers();

    let steps = bundle.episode_steps;
    let mut x = bundle.x0.clone();
    let mut states = vec![x.clone()];
    let mut controls = Vec::with_capacity(steps);
    let mut reports = Vec::with_capacity(steps);
    let mut cost = 0.0;
    let mut planning_time = 0.0;

    for t in 0..steps {
        let estimate = config.schedule.estimate(model.n_modes(), t, &x)?;
        let report = planner.plan_step(&estimate)?;
        planning_time += report.solve_time;
        let u = report.applied_u.clone();
        cost += bundle.ocp.stage_cost(&x, &u);
        x = model.step_truth(&x, config.schedule.true_mode(t), &u)?;
        states.push(x.clone());
        controls.push(u);
        reports.push(report);
    }

    let first_violation = states.iter().position(|s| !barriers.is_safe(s));
    let safe = first_violation.is_none();
    let reached_goal = steps > 0 && bundle.position_error(&x) <= bundle.success_tolerance;
    Ok(EpisodeRecord {
        states,
        controls,
        step_reports: reports,
        safe,
        first_violation,
        reached_goal,
        success: safe && reached_goal,
        avg_cost: if steps > 0 { cost / steps as f64 } else { 0.0 },
        control_rate_hz: if planning_time > 0.0 {
            steps as f64 / planning_time
        } else {
            0.0
        },
        planning_time_s: planning_time,
    })
}

/// One CSV row per episode. No wall-clock fields, so sweeps are
/// reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub scenario: String,
    pub planner: PlannerKind,
    pub variant_index: usize,
    pub n_p: Option<f64>,
    pub x0_x: Option<f64>,
    pub x0_y: Option<f64>,
    pub switch_step: usize,
    pub delay: usize,
    pub safe: bool,
    pub first_violation: Option<usize>,
    pub reached_goal: bool,
    pub success: bool,
    pub avg_cost: f64,
    pub final_position_error: f64,
    pub fallback_steps: usize,
    pub infeasible_steps: usize,
    pub min_chosen_h: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub planner: PlannerKind,
    pub variant_index: usize,
    pub switch_step: usize,
    pub delay: usize,
    pub planning_time_s: f64,
    pub control_rate_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerSummary {
    pub trials: usize,
    pub successes: usize,
    pub success_pct: f64,
    pub avg_cost: f64,
    pub rate_mean_hz: f64,
    pub rate_std_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryMode {
    Discard,
    Keep,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub row: EpisodeRow,
    pub timing: TimingRow,
    pub record: Option<EpisodeRecord>,
}

#[derive(Debug, Clone)]
pub struct SweepResults {
    pub scenario: String,
    pub planners: Vec<PlannerKind>,
    /// Planner-major, then grid order.
    pub outcomes: Vec<SweepOutcome>,
}

impl SweepResults {
    pub fn rows(&self) -> Vec<EpisodeRow> {
        self.outcomes.iter().map(|o| o.row.clone()).collect()
    }

    pub fn errors(&self) -> usize {
        self.outcomes.iter().filter(|o| o.row.error.is_some()).count()
    }

    pub fn summary(&self, kind: PlannerKind) -> PlannerSummary {
        let own: Vec<&SweepOutcome> = self.outcomes.iter().filter(|o| o.row.planner == kind).collect();
        let trials = own.len();
        let successes = own.iter().filter(|o| o.row.success).count();
        let mean = |v: &[f64]| {
            if v.is_empty() {
                0.0
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        let costs: Vec<f64> = own.iter().map(|o| o.row.avg_cost).collect();
        let rates: Vec<f64> = own.iter().map(|o| o.timing.control_rate_hz).collect();
        let rate_mean = mean(&rates);
        let rate_var = mean(&rates.iter().map(|r| (r - rate_mean).powi(2)).collect::<Vec<_>>());
        PlannerSummary {
            trials,
            successes,
            success_pct: if trials > 0 {
                100.0 * successes as f64 / trials as f64
            } else {
                0.0
            },
            avg_cost: mean(&costs),
            rate_mean_hz: rate_mean,
            rate_std_hz: rate_var.sqrt(),
        }
    }
}

fn variant_columns(variant: &ScenarioVariant) -> (Option<f64>, Option<f64>, Option<f64>) {
    match *variant {
        ScenarioVariant::OffNominalMeanMotion(n) => (Some(n), None, None),
        ScenarioVariant::InitialXy([x, y]) => (None, Some(x), Some(y)),
    }
}

/// Run every (planner, grid cell) episode on a pool of `workers` threads.
/// Failures are recorded per row and never abort the sweep.
pub fn run_sweep(
    grid: &SweepGrid,
    planners: &[PlannerConfig],
    workers: usize,
    solver: &dyn ConvexSolver,
    trajectories: TrajectoryMode,
) -> Result<SweepResults> {
    let bundles: Vec<Result<ScenarioBundle>> = grid.variants.iter().map(|v| v.build(grid.scenario)).collect();
    let cells = grid.cells();
    let jobs: Vec<(&PlannerConfig, _)> = planners
        .iter()
        .flat_map(|p| cells.iter().map(move |c| (p, *c)))
        .collect();
    info!(
        "sweeping {} episodes ({} planners x {} cells) on {workers} workers",
        jobs.len(),
        planners.len(),
        cells.len()
    );

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidGrid(format!("cannot build worker pool: {e}")))?;
    let scenario = grid.scenario.as_str().to_string();

    let outcomes = pool.install(|| {
        jobs.par_iter()
            .map(|(planner, cell)| {
                let (n_p, x0_x, x0_y) = variant_columns(&cell.variant);
                let mut row = EpisodeRow {
                    scenario: scenario.clone(),
                    planner: planner.kind,
                    variant_index: cell.variant_index,
                    n_p,
                    x0_x,
                    x0_y,
                    switch_step: cell.switch_step,
                    delay: cell.delay,
                    safe: false,
                    first_violation: None,
                    reached_goal: false,
                    success: false,
                    avg_cost: 0.0,
                    final_position_error: f64::NAN,
                    fallback_steps: 0,
                    infeasible_steps: 0,
                    min_chosen_h: None,
                    error: None,
                };
                let mut timing = TimingRow {
                    planner: planner.kind,
                    variant_index: cell.variant_index,
                    switch_step: cell.switch_step,
                    delay: cell.delay,
                    planning_time_s: 0.0,
                    control_rate_hz: 0.0,
                };
                let result = bundles[cell.variant_index]
                    .as_ref()
                    .map_err(|e| e.to_string())
                    .and_then(|bundle| {
                        let schedule = OracleSchedule::new(0, grid.switched_mode - 1, cell.switch_step, cell.delay)
                            .map_err(|e| e.to_string())?;
                        let config = EpisodeConfig {
                            bundle,
                            schedule,
                            planner: (*planner).clone(),
                            seed: 0,
                        };
                        run_episode(&config, solver)
                            .map(|r| {
                                let err = bundle.position_error(r.states.last().expect("x0 recorded"));
                                (r, err)
                            })
                            .map_err(|e| e.to_string())
                    });
                let record = match result {
                    Ok((record, final_error)) => {
                        row.safe = record.safe;
                        row.first_violation = record.first_violation;
                        row.reached_goal = record.reached_goal;
                        row.success = record.success;
                        row.avg_cost = record.avg_cost;
                        row.final_position_error = final_error;
                        row.fallback_steps = record.fallback_steps();
                        row.infeasible_steps = record.infeasible_steps();
                        row.min_chosen_h = record.min_chosen_h();
                        timing.planning_time_s = record.planning_time_s;
                        timing.control_rate_hz = record.control_rate_hz;
                        Some(record)
                    }
                    Err(message) => {
                        warn!("episode {} {:?} failed: {message}", planner.kind, cell);
                        row.error = Some(message);
                        None
                    }
                };
                SweepOutcome {
                    row,
                    timing,
                    record: record.filter(|_| trajectories == TrajectoryMode::Keep),
                }
            })
            .collect::<Vec<_>>()
    });

    Ok(SweepResults {
        scenario,
        planners: planners.iter().map(|p| p.kind).collect(),
        outcomes,
    })
}

fn csv_error(path: &Path, source: csv::Error) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in rows {
        writer.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| csv_error(path, e))
}

/// Per-step trajectory: one row per state, the last row has no control.
pub fn write_trajectory(path: &Path, record: &EpisodeRecord) -> Result<()> {
    let n = record.states.first().map_or(0, |s| s.len());
    let m = record.controls.first().map_or(0, |u| u.len());
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|i| format!("x{i}")));
    header.extend((0..m).map(|i| format!("u{i}")));
    header.push("chosen_h".into());
    header.push("fallback_level".into());
    writer.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (t, x) in record.states.iter().enumerate() {
        let mut fields = vec![t.to_string()];
        fields.extend(x.iter().map(|v| v.to_string()));
        match (record.controls.get(t), record.step_reports.get(t)) {
            (Some(u), Some(report)) => {
                fields.extend(u.iter().map(|v| v.to_string()));
                fields.push(report.chosen_h.map(|h| h.to_string()).unwrap_or_default());
                fields.push(report.fallback_level.to_string());
            }
            _ => fields.extend(std::iter::repeat_n(String::new(), m + 2)),
        }
        writer.write_record(&fields).map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Paths written by [`emit_results`].
#[derive(Debug, Clone)]
pub struct EmittedFiles {
    pub episodes: PathBuf,
    pub timing: PathBuf,
    pub summary: PathBuf,
    pub trajectories: Vec<PathBuf>,
}

/// Write `episodes.csv`, `timing.csv`, `summary.json` and, for kept
/// records, `trajectories/<planner>_v<variant>_s<switch>_d<delay>.csv`.
pub fn emit_results(results: &SweepResults, out_dir: &Path) -> Result<EmittedFiles> {
    if results.outcomes.is_empty() {
        return Err(Error::InvalidGrid("nothing to emit".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let episodes = out_dir.join("episodes.csv");
    write_rows(&episodes, &results.rows())?;
    let timing = out_dir.join("timing.csv");
    let timing_rows: Vec<&TimingRow> = results.outcomes.iter().map(|o| &o.timing).collect();
    write_rows(&timing, &timing_rows)?;

    let summary = out_dir.join("summary.json");
    let mut blocks = serde_json::Map::new();
    for &kind in &results.planners {
        blocks.insert(kind.name().into(), serde_json::to_value(results.summary(kind))?);
    }
    let doc = serde_json::json!({ "scenario": results.scenario, "planners": blocks });
    let mut file = fs::File::create(&summary).map_err(|e| Error::io(&summary, e))?;
    writeln!(file, "{}", serde_json::to_string_pretty(&doc)?).map_err(|e| Error::io(&summary, e))?;

    let mut trajectories = Vec::new();
    let kept: Vec<&SweepOutcome> = results.outcomes.iter().filter(|o| o.record.is_some()).collect();
    if !kept.is_empty() {
        let dir = out_dir.join("trajectories");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for outcome in kept {
            let r = &outcome.row;
            let path = dir.join(format!(
                "{}_v{}_s{}_d{}.csv",
                r.planner, r.variant_index, r.switch_step, r.delay
            ));
            write_trajectory(&path, outcome.record.as_ref().expect("filtered"))?;
            trajectories.push(path);
        }
    }
    Ok(EmittedFiles {
        episodes,
        timing,
        summary,
        trajectories,
    })
}
