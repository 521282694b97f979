//! Feasibility-guided consensus planning.
//!
//! The adaptive planner picks, at every step, the largest consensus horizon
//! whose feasibility LP is solvable and then solves the QP at that horizon.
//! The fixed-horizon baselines and the single-mode planner share the same
//! fallback ladder when their designated problem is infeasible:
//!
//! 1. solve without consensus (`h = 0`) and apply the most likely mode's
//!    first input;
//! 2. drop the CBF rows and solve pure tracking, again applying the most
//!    likely mode's first input;
//! 3. replay the next input of the last successful plan, or zero clamped
//!    into the control box.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use log::{debug, warn};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ocp::{build_feasibility_lp, build_qp, OcpInstance, OcpSolution, OcpSpec};
use crate::oracle::HybridEstimate;
use crate::solver::{ConvexSolver, SolveStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PlannerKind {
    #[serde(rename = "adaptive")]
    Adaptive,
    #[serde(rename = "first")]
    FirstStep,
    #[serde(rename = "full")]
    FullStep,
    #[serde(rename = "nonrobust")]
    NonRobust,
}

impl PlannerKind {
    pub const ALL: [PlannerKind; 4] = [
        PlannerKind::FirstStep,
        PlannerKind::FullStep,
        PlannerKind::NonRobust,
        PlannerKind::Adaptive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlannerKind::Adaptive => "adaptive",
            PlannerKind::FirstStep => "first",
            PlannerKind::FullStep => "full",
            PlannerKind::NonRobust => "nonrobust",
        }
    }

    /// Consensus horizon of the fixed-horizon variants. Full consensus is
    /// `H - 1`, the largest horizon the search can return.
    pub fn fixed_consensus(self, horizon: usize) -> Option<usize> {
        match self {
            PlannerKind::FirstStep => Some(1.min(horizon - 1)),
            PlannerKind::FullStep => Some(horizon - 1),
            PlannerKind::Adaptive | PlannerKind::NonRobust => None,
        }
    }
}

impl fmt::Display for PlannerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlannerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PlannerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidOcp(format!("unknown planner {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub kind: PlannerKind,
    pub gamma_override: Option<f64>,
    /// Grow `h` from 1 instead of bisecting.
    pub incremental: bool,
    /// Wall-clock budget for the incremental search.
    pub time_budget_ms: Option<u64>,
    /// Modes with belief below this are left out of the program.
    pub prune_threshold: f64,
    /// Evaluate the next bisection candidates concurrently.
    pub parallel_probes: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            kind: PlannerKind::Adaptive,
            gamma_override: None,
            incremental: false,
            time_budget_ms: None,
            prune_threshold: 0.0,
            parallel_probes: false,
        }
    }
}

impl PlannerConfig {
    pub fn new(kind: PlannerKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }
}

/// Result of a consensus-horizon search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HorizonSearch {
    /// Largest feasible horizon, `None` when even `h = 0` is infeasible.
    pub horizon: Option<usize>,
    /// Predicate results consumed by the search.
    pub probes: usize,
    /// Predicate evaluations actually run, including speculative ones.
    pub launched: usize,
}

/// Bisection for the maximally feasible consensus horizon over `0..horizon`.
///
/// `feasible` must be monotone: feasible at `h` implies feasible below `h`.
/// Uses at most `ceil(log2(horizon)) + 1` evaluations.
pub fn max_feasible_horizon(horizon: usize, mut feasible: impl FnMut(usize) -> bool) -> HorizonSearch {
    assert!(horizon >= 1, "planning horizon must be positive");
    let mut memo: Vec<Option<bool>> = vec![None; horizon];
    let mut probes = 0;
    let mut probe = |h: usize| -> bool {
        *memo[h].get_or_insert_with(|| {
            probes += 1;
            feasible(h)
        })
    };

    let (mut lo, mut hi) = (0isize, horizon as isize - 1);
    let mut best = None;
    while lo < hi {
        let h = (lo + hi) / 2;
        if probe(h as usize) {
            lo = h + 1;
            best = Some(h as usize);
        } else {
            hi = h - 1;
        }
    }
    let found = if hi >= 0 && probe(hi as usize) {
        Some(hi as usize)
    } else {
        best
    };
    HorizonSearch {
        horizon: found,
        probes,
        launched: probes,
    }
}

/// [`max_feasible_horizon`] with a speculative frontier: whenever a probe is
/// needed, the candidates for both possible next iterations are evaluated
/// alongside it. The answer and `probes` match the sequential search.
pub fn max_feasible_horizon_speculative(horizon: usize, feasible: &(dyn Fn(usize) -> bool + Sync)) -> HorizonSearch {
    assert!(horizon >= 1, "planning horizon must be positive");
    let mut memo: Vec<Option<bool>> = vec![None; horizon];
    let mut consumed: HashSet<usize> = HashSet::new();
    let mut launched = 0;

    let mut probe = |h: usize, lo: isize, hi: isize, memo: &mut Vec<Option<bool>>| -> bool {
        if memo[h].is_none() {
            let h_i = h as isize;
            let mut batch = vec![h];
            // next midpoints after a feasible / infeasible answer at h
            let after_yes = (h_i + 1, hi);
            let after_no = (lo, h_i - 1);
            for (l, r) in [after_yes, after_no] {
                if l < r {
                    batch.push(((l + r) / 2) as usize);
                } else if r >= 0 && l >= r {
                    batch.push(r as usize);
                }
            }
            batch.retain(|&c| c < horizon && memo[c].is_none());
            batch.sort_unstable();
            batch.dedup();
            launched += batch.len();
            let results: Vec<(usize, bool)> = batch.par_iter().map(|&c| (c, feasible(c))).collect();
            for (c, ok) in results {
                memo[c] = Some(ok);
            }
        }
        consumed.insert(h);
        memo[h].expect("probe result recorded")
    };

    let (mut lo, mut hi) = (0isize, horizon as isize - 1);
    let mut best = None;
    while lo < hi {
        let h = (lo + hi) / 2;
        if probe(h as usize, lo, hi, &mut memo) {
            lo = h + 1;
            best = Some(h as usize);
        } else {
            hi = h - 1;
        }
    }
    let found = if hi >= 0 && probe(hi as usize, hi, hi, &mut memo) {
        Some(hi as usize)
    } else {
        best
    };
    HorizonSearch {
        horizon: found,
        probes: consumed.len(),
        launched,
    }
}

/// Linear growth from `h = 1` until infeasibility, the end of the range, or
/// the deadline. Falls back to checking `h = 0` when `h = 1` fails.
pub fn incremental_horizon(
    horizon: usize,
    deadline: Option<Instant>,
    mut feasible: impl FnMut(usize) -> bool,
) -> HorizonSearch {
    assert!(horizon >= 1, "planning horizon must be positive");
    let mut probes = 0;
    let mut probe = |h| {
        probes += 1;
        feasible(h)
    };
    let start = 1.min(horizon - 1);
    let found = if probe(start) {
        let mut best = start;
        for h in start + 1..horizon {
            if deadline.is_some_and(|d| Instant::now() >= d) {
                break;
            }
            if !probe(h) {
                break;
            }
            best = h;
        }
        Some(best)
    } else if start > 0 && probe(0) {
        Some(0)
    } else {
        None
    };
    HorizonSearch {
        horizon: found,
        probes,
        launched: probes,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanStepReport {
    /// Consensus horizon of the designated problem; `None` for the
    /// single-mode planner and when no horizon was feasible.
    pub chosen_h: Option<usize>,
    /// Whether the designated problem solved to optimality.
    pub feasible: bool,
    pub designated_status: SolveStatus,
    pub applied_u: DVector<f64>,
    /// 0 when the designated plan was applied, otherwise the ladder rung.
    pub fallback_level: u8,
    pub feasibility_probe_count: usize,
    pub speculative_probe_count: usize,
    pub solver_failures: usize,
    /// Planner wall time in seconds.
    pub solve_time: f64,
}

/// A planner bound to one episode. Holds the only cross-step state: the
/// tail of the last successful plan, used by the last fallback rung.
pub struct Planner<'s> {
    config: PlannerConfig,
    spec: OcpSpec,
    solver: &'s dyn ConvexSolver,
    carry: Vec<DVector<f64>>,
}

impl<'s> Planner<'s> {
    pub fn new(config: PlannerConfig, spec: &OcpSpec, solver: &'s dyn ConvexSolver) -> Result<Self> {
        let spec = match config.gamma_override {
            Some(gamma) => spec.with_gamma(gamma)?,
            None => spec.clone(),
        };
        if !(config.prune_threshold >= 0.0 && config.prune_threshold <= 1.0) {
            return Err(Error::InvalidOcp(format!(
                "prune threshold {} outside [0, 1]",
                config.prune_threshold
            )));
        }
        Ok(Self {
            config,
            spec,
            solver,
            carry: Vec::new(),
        })
    }

    pub fn config(&self) -> &PlannerConfig {
        &self.config
    }

    pub fn spec(&self) -> &OcpSpec {
        &self.spec
    }

    /// Forget the carried plan.
    pub fn reset(&mut self) {
        self.carry.clear();
    }

    fn probe(&self, base: &OcpInstance<'_>, h: usize, failures: &std::sync::atomic::AtomicUsize) -> bool {
        let instance = base.with_consensus(h).expect("probe horizon within range");
        let status = build_feasibility_lp(&instance).solve(self.solver).status;
        if status == SolveStatus::SolverFailure {
            warn!("feasibility probe at h={h} hit a solver failure; treating as infeasible");
            failures.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        }
        status == SolveStatus::Optimal
    }

    pub fn plan_step(&mut self, estimate: &HybridEstimate) -> Result<PlanStepReport> {
        let started = Instant::now();
        let horizon = self.spec.horizon();
        let mu = &estimate.mu_hat;
        let lead = mu.argmax();
        let base =
            OcpInstance::new(&self.spec, estimate.x_hat.clone(), mu.clone(), 0)?.pruned(self.config.prune_threshold);
        let failures = std::sync::atomic::AtomicUsize::new(0);

        let mut probes = 0;
        let mut speculative = 0;
        let (chosen_h, designated) = match self.config.kind {
            PlannerKind::Adaptive => {
                let search = if self.config.incremental {
                    let deadline = self.config.time_budget_ms.map(|ms| started + Duration::from_millis(ms));
                    incremental_horizon(horizon, deadline, |h| self.probe(&base, h, &failures))
                } else if self.config.parallel_probes {
                    max_feasible_horizon_speculative(horizon, &|h| self.probe(&base, h, &failures))
                } else {
                    max_feasible_horizon(horizon, |h| self.probe(&base, h, &failures))
                };
                probes = search.probes;
                speculative = search.launched;
                let solution = search
                    .horizon
                    .map(|h| build_qp(&base.with_consensus(h).expect("search stays in range")).solve(self.solver));
                (search.horizon, solution)
            }
            PlannerKind::FirstStep | PlannerKind::FullStep => {
                let h = self
                    .config
                    .kind
                    .fixed_consensus(horizon)
                    .expect("fixed-horizon planner");
                (Some(h), Some(build_qp(&base.with_consensus(h)?).solve(self.solver)))
            }
            PlannerKind::NonRobust => {
                let single = OcpInstance::single_mode(&self.spec, estimate.x_hat.clone(), mu.clone(), lead)?;
                (None, Some(build_qp(&single).solve(self.solver)))
            }
        };

        let designated_status = designated.as_ref().map(|s| s.status).unwrap_or(SolveStatus::Infeasible);
        let note = |s: &OcpSolution| {
            if s.status == SolveStatus::SolverFailure {
                failures.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            }
        };
        if let Some(s) = &designated {
            note(s);
        }

        let chosen = match designated.filter(OcpSolution::is_optimal) {
            Some(solution) => Some((solution, 0)),
            None => {
                let mut outcome = None;
                // the single-mode planner has no consensus to relax
                if self.config.kind != PlannerKind::NonRobust {
                    let relaxed = build_qp(&base).solve(self.solver);
                    note(&relaxed);
                    if relaxed.is_optimal() {
                        outcome = Some((relaxed, 1));
                    }
                }
                if outcome.is_none() {
                    let tracking = build_qp(&base.clone().without_barriers()).solve(self.solver);
                    note(&tracking);
                    if tracking.is_optimal() {
                        outcome = Some((tracking, 2));
                    }
                }
                outcome
            }
        };
        drop(base);
        let (applied_u, fallback_level) = match chosen {
            Some((solution, level)) => (self.adopt(&solution, lead), level),
            None => (self.replay(), 3),
        };
        if fallback_level > 0 {
            debug!(
                "{} planner fell back to rung {fallback_level} (designated: {designated_status:?})",
                self.config.kind
            );
        }

        Ok(PlanStepReport {
            chosen_h,
            feasible: designated_status == SolveStatus::Optimal,
            designated_status,
            applied_u,
            fallback_level,
            feasibility_probe_count: probes,
            speculative_probe_count: speculative,
            solver_failures: failures.into_inner(),
            solve_time: started.elapsed().as_secs_f64(),
        })
    }

    /// Take `mode`'s first input from a solution and keep its tail.
    fn adopt(&mut self, solution: &OcpSolution, mode: usize) -> DVector<f64> {
        let slot = solution.slot_of(mode).unwrap_or(0);
        let controls = &solution.controls[slot];
        self.carry = controls[1..].to_vec();
        self.spec.model().saturate(&controls[0])
    }

    fn replay(&mut self) -> DVector<f64> {
        if self.carry.is_empty() {
            self.spec
                .model()
                .saturate(&DVector::zeros(self.spec.model().n_controls()))
        } else {
            let u = self.carry.remove(0);
            self.spec.model().saturate(&u)
        }
    }
}
