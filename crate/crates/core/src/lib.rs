//! Safe multi-mode MPC for jump Markov linear systems.
//!
//! Affine control barrier functions keep the state in a polyhedral safe set
//! while an adaptive consensus horizon hedges against an unknown mode. The
//! crate covers the model, the consensus OCP and its feasibility LP, the
//! planner with its fallback ladder, an oracle estimator, two benchmark
//! scenarios and a sweep harness.

pub mod barrier;
pub mod error;
pub mod jmls;
pub mod ocp;
pub mod oracle;
pub mod planner;
pub mod scenario;
pub mod sim;
pub mod solver;

pub use barrier::{AffineBarrier, BarrierSet, CbfRow, SAFETY_TOL};
pub use error::{Error, Result};
pub use jmls::{ContinuousModel, JumpLinearModel, ModeBelief, ModeDynamics};
pub use ocp::{build_feasibility_lp, build_qp, ConsensusEncoding, OcpInstance, OcpProgram, OcpSolution, OcpSpec};
pub use oracle::{HybridEstimate, OracleSchedule};
pub use planner::{max_feasible_horizon, PlanStepReport, Planner, PlannerConfig, PlannerKind};
pub use scenario::{build_mineshaft, build_rendezvous, cwh_continuous, HexacopterParams, ScenarioBundle, SweepGrid};
pub use sim::{emit_results, run_episode, run_sweep, EpisodeConfig, EpisodeRecord, SweepResults};
pub use solver::{ClarabelSolver, ConvexProgram, ConvexSolver, SolveOutcome, SolveStatus};
