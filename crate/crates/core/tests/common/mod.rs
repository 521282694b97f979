//! Shared helpers for the integration tests: random small instances, an
//! independent dense interior-point solver and closed-loop safety checks.

#![allow(dead_code)]

use jmls_mpc::barrier::{AffineBarrier, BarrierSet};
use jmls_mpc::jmls::{JumpLinearModel, ModeBelief, ModeDynamics};
use jmls_mpc::ocp::OcpSpec;
use jmls_mpc::oracle::{HybridEstimate, OracleSchedule, ScheduleFile};
use jmls_mpc::planner::{Planner, PlannerConfig, PlannerKind};
use jmls_mpc::scenario::ScenarioBundle;
use jmls_mpc::solver::{ConvexProgram, ConvexSolver};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

pub use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random consensus problem together with a starting point and belief.
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub spec: OcpSpec,
    pub x0: DVector<f64>,
    pub mu: ModeBelief,
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-scale..scale))
}

/// n <= 4, m <= 2, M <= 3, H <= 8. Mode matrices are perturbations of a
/// shared nominal pair so consensus is sometimes, not always, feasible.
pub fn random_instance(rng: &mut ChaCha8Rng) -> RandomInstance {
    let n = rng.gen_range(1..=4);
    let m = rng.gen_range(1..=2);
    let n_modes = rng.gen_range(1..=3);
    let horizon = rng.gen_range(2..=8);

    let a_nom = DMatrix::identity(n, n) + random_matrix(rng, n, n, 0.25);
    let b_nom = random_matrix(rng, n, m, 1.0);
    let spread = rng.gen_range(0.0..0.8);
    let modes = (0..n_modes)
        .map(|_| {
            ModeDynamics::new(
                &a_nom + random_matrix(rng, n, n, 0.3 * spread),
                &b_nom + random_matrix(rng, n, m, spread),
            )
            .unwrap()
        })
        .collect();
    let bound = rng.gen_range(0.05..1.0);
    let model = JumpLinearModel::new(
        modes,
        DMatrix::identity(n_modes, n_modes),
        DVector::from_element(m, -bound),
        DVector::from_element(m, bound),
    )
    .unwrap();

    let mut barriers = Vec::new();
    for coord in 0..n {
        if rng.gen_bool(0.7) {
            barriers.push(AffineBarrier::upper(n, coord, rng.gen_range(0.3..2.0), format!("x{coord}_max")).unwrap());
        }
        if rng.gen_bool(0.5) {
            barriers.push(AffineBarrier::lower(n, coord, -rng.gen_range(0.3..2.0), format!("x{coord}_min")).unwrap());
        }
    }
    if barriers.is_empty() {
        barriers.push(AffineBarrier::upper(n, 0, 1.0, "x0_max").unwrap());
    }
    let gamma = rng.gen_range(0.02..1.0);
    let set = BarrierSet::new(barriers, gamma).unwrap();

    // start strictly inside, sometimes close to a wall
    let x0 = loop {
        let candidate = DVector::from_fn(n, |_, _| rng.gen_range(-1.5..1.5));
        if set.min_value(&candidate) > 1e-3 {
            break candidate;
        }
    };
    let q = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.gen_range(0.1..10.0)));
    let r = DMatrix::from_diagonal(&DVector::from_fn(m, |_, _| rng.gen_range(0.01..1.0)));
    let x_ref = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let spec = OcpSpec::new(model, set, horizon, q, r, x_ref).unwrap();

    let raw = DVector::from_fn(n_modes, |_, _| rng.gen_range(0.05..1.0));
    let mu = ModeBelief::new(&raw / raw.sum()).unwrap();
    RandomInstance { spec, x0, mu }
}

/// Result of the reference solver.
#[derive(Debug, Clone)]
pub struct DenseSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// Step in (x, y, s, z).
type Direction = (DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>);

fn dense(cols: usize, triplets: &[(usize, usize, f64)], row_offset: usize, row_count: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(row_count, cols);
    for &(i, j, v) in triplets {
        if i >= row_offset && i < row_offset + row_count {
            out[(i - row_offset, j)] += v;
        }
    }
    out
}

/// Mehrotra predictor-corrector on the dense KKT system. Independent of
/// the production backend; only meant for small and medium programs.
/// Returns `None` if it fails to converge (treated as infeasible).
pub fn dense_ipm(program: &ConvexProgram) -> Option<DenseSolution> {
    let n = program.n_vars;
    let (n_eq, n_in) = (program.n_eq, program.n_ineq);
    let mut p = DMatrix::zeros(n, n);
    for &(i, j, v) in &program.p_upper {
        p[(i, j)] += v;
        if i != j {
            p[(j, i)] += v;
        }
    }
    let q = DVector::from_column_slice(&program.q);
    let a_eq = dense(n, &program.a, 0, n_eq);
    let a_in = dense(n, &program.a, n_eq, n_in);
    let b_eq = DVector::from_column_slice(&program.b[..n_eq]);
    let b_in = DVector::from_column_slice(&program.b[n_eq..]);

    let mut x = DVector::zeros(n);
    let mut y = DVector::zeros(n_eq);
    let mut s = (&b_in - &a_in * &x).map(|v| v.max(1.0));
    let mut z = DVector::from_element(n_in, 1.0);
    let scale = 1.0 + q.amax().max(b_in.amax()).max(b_eq.amax());

    for iteration in 0..200 {
        let r_d = &p * &x + &q + a_eq.transpose() * &y + a_in.transpose() * &z;
        let r_e = &a_eq * &x - &b_eq;
        let r_i = &a_in * &x + &s - &b_in;
        let mu = if n_in > 0 { s.dot(&z) / n_in as f64 } else { 0.0 };
        let res = r_d.amax().max(r_e.amax()).max(r_i.amax());
        if res < 1e-10 * scale && mu < 1e-11 * scale {
            let objective = 0.5 * x.dot(&(&p * &x)) + q.dot(&x) + program.constant;
            return Some(DenseSolution {
                x,
                objective,
                iterations: iteration,
            });
        }

        let w = z.component_div(&s);
        let mut h = p.clone();
        h += a_in.transpose() * DMatrix::from_diagonal(&w) * &a_in;
        let dim = n + n_eq;
        let mut kkt = DMatrix::zeros(dim, dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(&h);
        kkt.view_mut((0, n), (n, n_eq)).copy_from(&a_eq.transpose());
        kkt.view_mut((n, 0), (n_eq, n)).copy_from(&a_eq);
        for i in 0..n {
            kkt[(i, i)] += 1e-11;
        }
        for i in 0..n_eq {
            kkt[(n + i, n + i)] -= 1e-11;
        }
        let lu = kkt.lu();

        // solve for a given complementarity target `comp` (= s.*z desired)
        let direction = |comp: &DVector<f64>| -> Option<Direction> {
            // dz = (comp - s.*z + z.*(r_i + A dx)) ./ s
            let t = (comp - s.component_mul(&z) + z.component_mul(&r_i)).component_div(&s);
            let mut rhs = DVector::zeros(dim);
            rhs.rows_mut(0, n).copy_from(&(-&r_d - a_in.transpose() * &t));
            rhs.rows_mut(n, n_eq).copy_from(&(-&r_e));
            let sol = lu.solve(&rhs)?;
            let dx = sol.rows(0, n).into_owned();
            let dy = sol.rows(n, n_eq).into_owned();
            let ds = -&r_i - &a_in * &dx;
            let dz = (comp - s.component_mul(&z) - z.component_mul(&ds)).component_div(&s);
            Some((dx, dy, ds, dz))
        };
        let max_step = |v: &DVector<f64>, dv: &DVector<f64>| {
            v.iter()
                .zip(dv.iter())
                .filter(|(_, d)| **d < 0.0)
                .map(|(a, d)| -a / d)
                .fold(1.0_f64, f64::min)
        };

        let (_, _, ds_aff, dz_aff) = direction(&DVector::zeros(n_in))?;
        let alpha_aff = max_step(&s, &ds_aff).min(max_step(&z, &dz_aff));
        let mu_aff = if n_in > 0 {
            (&s + alpha_aff * &ds_aff).dot(&(&z + alpha_aff * &dz_aff)) / n_in as f64
        } else {
            0.0
        };
        let sigma = if mu > 0.0 { (mu_aff / mu).powi(3) } else { 0.0 };
        let comp = DVector::from_element(n_in, sigma * mu) - ds_aff.component_mul(&dz_aff);
        let (dx, dy, ds, dz) = direction(&comp)?;
        let alpha = (0.99 * max_step(&s, &ds).min(max_step(&z, &dz))).min(1.0);
        x += alpha * dx;
        y += alpha * dy;
        s += alpha * ds;
        z += alpha * dz;
        if !x.iter().chain(z.iter()).all(|v| v.is_finite()) || x.amax() > 1e12 || z.amax() > 1e14 {
            return None;
        }
    }
    None
}

pub fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Draw instances until one has a single mode.
pub fn random_single_mode(rng: &mut ChaCha8Rng) -> RandomInstance {
    loop {
        let case = random_instance(rng);
        if case.spec.model().n_modes() == 1 {
            return case;
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct InvarianceReport {
    /// Runs whose every step was solved without fallback.
    pub runs: usize,
    /// Runs discarded because some step needed the fallback ladder.
    pub skipped: usize,
    pub min_barrier: f64,
    /// Smallest beta(x+) - (1 - gamma) beta(x) over all steps and barriers.
    pub min_step_margin: f64,
}

/// Closed-loop runs of single-mode instances whose CBF-constrained OCP
/// stays feasible; collects the worst barrier value and stepwise margin.
pub fn forward_invariance(target: usize, steps: usize, solver: &dyn ConvexSolver) -> InvarianceReport {
    let mut report = InvarianceReport {
        min_barrier: f64::INFINITY,
        min_step_margin: f64::INFINITY,
        ..Default::default()
    };
    let mut rng = rng(6);
    while report.runs < target {
        let case = random_single_mode(&mut rng);
        let mut planner = Planner::new(PlannerConfig::new(PlannerKind::Adaptive), &case.spec, solver).unwrap();
        let barriers = case.spec.barriers();
        let mode = case.spec.model().mode(0);
        let mut x = case.x0.clone();
        let mut states = vec![x.clone()];
        let mut clean = true;
        for _ in 0..steps {
            let step = planner
                .plan_step(&HybridEstimate {
                    x_hat: x.clone(),
                    mu_hat: ModeBelief::one_hot(1, 0).unwrap(),
                })
                .unwrap();
            if step.fallback_level > 0 {
                clean = false;
                break;
            }
            x = mode.step(&x, &step.applied_u);
            states.push(x.clone());
        }
        if !clean {
            report.skipped += 1;
            continue;
        }
        report.runs += 1;
        let gamma = barriers.gamma();
        for pair in states.windows(2) {
            for barrier in barriers.barriers() {
                let (now, next) = (barrier.value(&pair[0]), barrier.value(&pair[1]));
                report.min_barrier = report.min_barrier.min(now).min(next);
                report.min_step_margin = report.min_step_margin.min(next - (1.0 - gamma) * now);
            }
        }
    }
    report
}

#[derive(Debug, Clone, Deserialize)]
struct WitnessFile {
    scenario: ScenarioBundle,
    schedule: ScheduleFile,
}

/// The checked-in two-mode instance on which first-step consensus is unsafe.
pub fn load_witness() -> (ScenarioBundle, OracleSchedule) {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/unsafe_witness.json");
    let file: WitnessFile = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    (file.scenario, file.schedule.try_into().unwrap())
}
