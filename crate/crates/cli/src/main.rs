use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use jmls_mpc::jmls::ModeBelief;
use jmls_mpc::ocp::{build_feasibility_lp, build_qp, OcpInstance};
use jmls_mpc::planner::{PlannerConfig, PlannerKind};
use jmls_mpc::scenario::{
    build_mineshaft, build_rendezvous, HexacopterParams, ScenarioBundle, ScenarioName, SweepGrid,
};
use jmls_mpc::sim::{emit_results, run_sweep, TrajectoryMode};
use jmls_mpc::solver::ClarabelSolver;
use log::info;
use nalgebra::DVector;

#[derive(Parser)]
#[command(
    name = "jmls-mpc",
    version,
    about = "Safe consensus MPC for jump Markov linear systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run closed-loop episodes over a sweep grid.
    Simulate {
        #[arg(long)]
        scenario: ScenarioName,
        /// adaptive, first, full, nonrobust or all
        #[arg(long, default_value = "all")]
        planner: String,
        /// `default` or a grid JSON file
        #[arg(long, default_value = "default")]
        sweep: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Grow the consensus horizon from 1 instead of bisecting.
        #[arg(long)]
        incremental: bool,
        #[arg(long)]
        time_budget_ms: Option<u64>,
        /// Skip per-episode trajectory files.
        #[arg(long)]
        no_trajectories: bool,
    },
    /// Check a scenario file and print a short description.
    ValidateScenario { file: PathBuf },
    /// Print the enumerated sweep grid.
    ShowGrid {
        #[arg(long)]
        scenario: ScenarioName,
        #[arg(long, default_value = "default")]
        sweep: String,
    },
    /// Write a built-in scenario as JSON (rendezvous with n_p = 0.101,
    /// mineshaft from the origin).
    ExportScenario {
        #[arg(long)]
        scenario: ScenarioName,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the consensus program of a scenario at its initial state in the
    /// text dump format, for cross-checks with external solvers.
    DumpProgram {
        file: PathBuf,
        /// Consensus horizon h.
        #[arg(long)]
        consensus: usize,
        /// Mode probabilities, comma separated (default uniform).
        #[arg(long)]
        belief: Option<String>,
        /// Dump the constant-objective feasibility LP instead of the QP.
        #[arg(long)]
        feasibility: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_grid(scenario: ScenarioName, sweep: &str) -> anyhow::Result<SweepGrid> {
    if sweep == "default" {
        return Ok(SweepGrid::default_for(scenario));
    }
    let grid = SweepGrid::load(sweep).with_context(|| format!("loading grid {sweep}"))?;
    if grid.scenario != scenario {
        bail!(
            "grid {sweep} is for {}, not {}",
            grid.scenario.as_str(),
            scenario.as_str()
        );
    }
    Ok(grid)
}

fn parse_planners(arg: &str) -> anyhow::Result<Vec<PlannerKind>> {
    if arg == "all" {
        return Ok(PlannerKind::ALL.to_vec());
    }
    arg.split(',')
        .map(|s| s.trim().parse::<PlannerKind>().map_err(anyhow::Error::from))
        .collect()
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Simulate {
            scenario,
            planner,
            sweep,
            out,
            workers,
            incremental,
            time_budget_ms,
            no_trajectories,
        } => {
            let grid = load_grid(scenario, &sweep)?;
            let planners: Vec<PlannerConfig> = parse_planners(&planner)?
                .into_iter()
                .map(|kind| PlannerConfig {
                    incremental,
                    time_budget_ms,
                    ..PlannerConfig::new(kind)
                })
                .collect();
            let solver = ClarabelSolver::new();
            let mode = if no_trajectories {
                TrajectoryMode::Discard
            } else {
                TrajectoryMode::Keep
            };
            let results = run_sweep(&grid, &planners, workers, &solver, mode)?;
            let files = emit_results(&results, &out)?;
            for &kind in &results.planners {
                let s = results.summary(kind);
                println!(
                    "{:<10} trials {:>4}  successes {:>4}  ({:>5.1}%)  avg cost {:>10.4}  rate {:>8.1} +- {:.1} Hz",
                    kind.name(),
                    s.trials,
                    s.successes,
                    s.success_pct,
                    s.avg_cost,
                    s.rate_mean_hz,
                    s.rate_std_hz
                );
            }
            let ledger = solver.ledger().snapshot();
            info!("solver ledger: {ledger:?}");
            println!("results in {}", files.episodes.parent().unwrap_or(&out).display());
            let errors = results.errors();
            if errors > 0 {
                eprintln!("{errors} episodes did not execute");
                return Ok(ExitCode::FAILURE);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::ValidateScenario { file } => {
            let bundle = ScenarioBundle::load(&file).with_context(|| format!("validating {}", file.display()))?;
            let model = bundle.model();
            println!(
                "{}: ok ({} states, {} inputs, {} modes, {} barriers, H={}, dt={} s, {} steps)",
                bundle.name,
                model.n_states(),
                model.n_controls(),
                model.n_modes(),
                bundle.barriers().len(),
                bundle.ocp.horizon(),
                bundle.dt,
                bundle.episode_steps
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::ShowGrid { scenario, sweep } => {
            let grid = load_grid(scenario, &sweep)?;
            for (i, cell) in grid.cells().iter().enumerate() {
                println!(
                    "{i:>4}  {:<18} switch {:>3}  delay {:>2}",
                    cell.variant.label(),
                    cell.switch_step,
                    cell.delay
                );
            }
            println!(
                "{} variants x {} switch steps x {} delays = {} trials per planner",
                grid.variants.len(),
                grid.switch_steps.len(),
                grid.delays.len(),
                grid.len()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::ExportScenario { scenario, out } => {
            let bundle = match scenario {
                ScenarioName::Rendezvous => build_rendezvous(0.101)?,
                ScenarioName::Mineshaft => build_mineshaft(&HexacopterParams::default(), [0.0, 0.0])?,
            };
            bundle.save(&out)?;
            println!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::DumpProgram {
            file,
            consensus,
            belief,
            feasibility,
            out,
        } => {
            let bundle = ScenarioBundle::load(&file).with_context(|| format!("loading {}", file.display()))?;
            let n_modes = bundle.model().n_modes();
            let mu = match belief {
                None => ModeBelief::uniform(n_modes)?,
                Some(text) => {
                    let probs = text
                        .split(',')
                        .map(|v| v.trim().parse::<f64>())
                        .collect::<Result<Vec<_>, _>>()
                        .context("parsing --belief")?;
                    ModeBelief::new(DVector::from_vec(probs))?
                }
            };
            let inst = OcpInstance::new(&bundle.ocp, bundle.x0.clone(), mu, consensus)?;
            let program = if feasibility {
                build_feasibility_lp(&inst).program
            } else {
                build_qp(&inst).program
            };
            let writer = std::io::BufWriter::new(
                std::fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?,
            );
            program.write_dump(writer)?;
            println!(
                "wrote {} ({} variables, {} equality rows, {} inequality rows)",
                out.display(),
                program.n_vars,
                program.n_eq,
                program.n_ineq
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
