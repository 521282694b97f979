//! Convex program representation and the solver contract.
//!
//! Programs are stated in the standard conic form
//!
//! ```text
//! minimize    1/2 x'Px + q'x + c
//! subject to  A x + s = b,   s in {0}^n_eq x R+^n_ineq
//! ```
//!
//! with the equality rows first. [`ClarabelSolver`] is the default backend;
//! any engine implementing [`ConvexSolver`] can stand in for it as long as it
//! honours the tolerances in [`ContractTolerances`].

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use log::debug;

use crate::error::{Error, Result};

/// One structural nonzero `(row, col, value)`.
pub type Triplet = (usize, usize, f64);

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvexProgram {
    pub n_vars: usize,
    /// Upper triangle of P, including the diagonal.
    pub p_upper: Vec<Triplet>,
    pub q: Vec<f64>,
    pub constant: f64,
    pub a: Vec<Triplet>,
    pub b: Vec<f64>,
    pub n_eq: usize,
    pub n_ineq: usize,
}

impl ConvexProgram {
    pub fn new(n_vars: usize) -> Self {
        Self {
            n_vars,
            q: vec![0.0; n_vars],
            ..Default::default()
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_eq + self.n_ineq
    }

    pub fn is_linear(&self) -> bool {
        self.p_upper.iter().all(|&(_, _, v)| v == 0.0)
    }

    /// Adds `coeffs . x = rhs`. All equality rows must precede inequality rows.
    pub fn push_eq(&mut self, coeffs: &[(usize, f64)], rhs: f64) {
        assert_eq!(self.n_ineq, 0, "equality rows must be added before inequalities");
        self.push_row(coeffs, rhs);
        self.n_eq += 1;
    }

    /// Adds `coeffs . x <= rhs`.
    pub fn push_le(&mut self, coeffs: &[(usize, f64)], rhs: f64) {
        self.push_row(coeffs, rhs);
        self.n_ineq += 1;
    }

    fn push_row(&mut self, coeffs: &[(usize, f64)], rhs: f64) {
        let row = self.b.len();
        self.a
            .extend(coeffs.iter().filter(|(_, v)| *v != 0.0).map(|&(col, v)| (row, col, v)));
        self.b.push(rhs);
    }

    /// Adds `value` to `P[i, j]` (and implicitly `P[j, i]`).
    pub fn add_hessian(&mut self, i: usize, j: usize, value: f64) {
        if value != 0.0 {
            let (r, c) = if i <= j { (i, j) } else { (j, i) };
            self.p_upper.push((r, c, value));
        }
    }

    /// Same constraints, zero objective.
    pub fn feasibility_version(&self) -> Self {
        Self {
            p_upper: Vec::new(),
            q: vec![0.0; self.n_vars],
            constant: 0.0,
            ..self.clone()
        }
    }

    pub fn objective_at(&self, x: &[f64]) -> f64 {
        let px = self.p_times(x);
        0.5 * dot(x, &px) + dot(&self.q, x) + self.constant
    }

    fn p_times(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_vars];
        for &(i, j, v) in &self.p_upper {
            out[i] += v * x[j];
            if i != j {
                out[j] += v * x[i];
            }
        }
        out
    }

    fn a_times(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_rows()];
        for &(i, j, v) in &self.a {
            out[i] += v * x[j];
        }
        out
    }

    fn at_times(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_vars];
        for &(i, j, v) in &self.a {
            out[j] += v * z[i];
        }
        out
    }

    /// Worst scaled violation of the constraints at `x`, zero when feasible.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let ax = self.a_times(x);
        ax.iter()
            .zip(&self.b)
            .enumerate()
            .map(|(row, (lhs, rhs))| {
                let excess = lhs - rhs;
                let scale = 1.0 + rhs.abs().max(lhs.abs());
                if row < self.n_eq {
                    excess.abs() / scale
                } else {
                    excess.max(0.0) / scale
                }
            })
            .fold(0.0, f64::max)
    }

    /// Scaled KKT residuals of a primal-dual point.
    pub fn kkt_report(&self, x: &[f64], s: &[f64], z: &[f64]) -> KktReport {
        let ax = self.a_times(x);
        let px = self.p_times(x);
        let atz = self.at_times(z);

        let primal_abs = ax
            .iter()
            .zip(s)
            .zip(&self.b)
            .map(|((ax, s), b)| (ax + s - b).abs())
            .fold(0.0, f64::max);
        let primal_scale = 1.0 + norm_inf(&self.b).max(norm_inf(&ax)).max(norm_inf(s));

        let dual_abs = px
            .iter()
            .zip(&self.q)
            .zip(&atz)
            .map(|((p, q), a)| (p + q + a).abs())
            .fold(0.0, f64::max);
        let dual_scale = 1.0 + norm_inf(&px).max(norm_inf(&self.q)).max(norm_inf(&atz));

        let xpx = dot(x, &px);
        let primal_obj = 0.5 * xpx + dot(&self.q, x);
        let dual_obj = -0.5 * xpx - dot(&self.b, z);
        let gap_abs = (primal_obj - dual_obj).abs();
        let gap_rel = gap_abs / primal_obj.abs().min(dual_obj.abs()).max(1.0);

        KktReport {
            primal_residual: primal_abs / primal_scale,
            dual_residual: dual_abs / dual_scale,
            gap_relative: gap_rel,
        }
    }

    /// Write the program in the line-oriented dump format documented in the
    /// README. Floats use Rust's shortest round-trip representation, so a
    /// dump parses back to an identical program.
    pub fn write_dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut text = String::new();
        let _ = writeln!(text, "convex-program v1");
        let _ = writeln!(text, "vars {}", self.n_vars);
        let _ = writeln!(text, "rows {} {}", self.n_eq, self.n_ineq);
        let _ = writeln!(text, "constant {}", self.constant);
        let _ = writeln!(text, "P {}", self.p_upper.len());
        for (i, j, v) in &self.p_upper {
            let _ = writeln!(text, "{i} {j} {v}");
        }
        let _ = writeln!(text, "q");
        for v in &self.q {
            let _ = writeln!(text, "{v}");
        }
        let _ = writeln!(text, "A {}", self.a.len());
        for (i, j, v) in &self.a {
            let _ = writeln!(text, "{i} {j} {v}");
        }
        let _ = writeln!(text, "b");
        for v in &self.b {
            let _ = writeln!(text, "{v}");
        }
        let _ = writeln!(text, "end");
        out.write_all(text.as_bytes())
    }

    pub fn read_dump<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = || -> Result<(usize, String)> {
            match lines.next() {
                Some((n, Ok(line))) => Ok((n, line)),
                Some((n, Err(e))) => Err(Error::ProgramFormat {
                    line: n,
                    message: e.to_string(),
                }),
                None => Err(Error::ProgramFormat {
                    line: 0,
                    message: "unexpected end of input".into(),
                }),
            }
        };

        let (n, header) = next()?;
        if header.trim() != "convex-program v1" {
            return Err(format_err(n, "missing header"));
        }
        let n_vars = keyed(&next()?, "vars")?[0] as usize;
        let rows = keyed(&next()?, "rows")?;
        if rows.len() != 2 {
            return Err(format_err(0, "rows needs two counts"));
        }
        let constant = keyed(&next()?, "constant")?[0];

        let p_count = keyed(&next()?, "P")?[0] as usize;
        let mut p_upper = Vec::with_capacity(p_count);
        for _ in 0..p_count {
            p_upper.push(triplet(&next()?)?);
        }
        expect_tag(&next()?, "q")?;
        let mut q = Vec::with_capacity(n_vars);
        for _ in 0..n_vars {
            q.push(scalar(&next()?)?);
        }
        let a_count = keyed(&next()?, "A")?[0] as usize;
        let mut a = Vec::with_capacity(a_count);
        for _ in 0..a_count {
            a.push(triplet(&next()?)?);
        }
        expect_tag(&next()?, "b")?;
        let n_rows = (rows[0] + rows[1]) as usize;
        let mut b = Vec::with_capacity(n_rows);
        for _ in 0..n_rows {
            b.push(scalar(&next()?)?);
        }
        expect_tag(&next()?, "end")?;

        let program = Self {
            n_vars,
            p_upper,
            q,
            constant,
            a,
            b,
            n_eq: rows[0] as usize,
            n_ineq: rows[1] as usize,
        };
        let in_range = program.p_upper.iter().all(|&(i, j, _)| i <= j && j < n_vars)
            && program.a.iter().all(|&(i, j, _)| i < n_rows && j < n_vars);
        if !in_range {
            return Err(format_err(0, "triplet index out of range"));
        }
        Ok(program)
    }
}

fn format_err(line: usize, message: &str) -> Error {
    Error::ProgramFormat {
        line,
        message: message.into(),
    }
}

fn parse_f64(line: usize, token: &str) -> Result<f64> {
    token
        .parse()
        .map_err(|_| format_err(line, &format!("bad number {token:?}")))
}

fn keyed((line, text): &(usize, String), key: &str) -> Result<Vec<f64>> {
    let mut tokens = text.split_whitespace();
    if tokens.next() != Some(key) {
        return Err(format_err(*line, &format!("expected {key}")));
    }
    let values = tokens.map(|t| parse_f64(*line, t)).collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        return Err(format_err(*line, &format!("{key} needs a value")));
    }
    Ok(values)
}

fn expect_tag((line, text): &(usize, String), tag: &str) -> Result<()> {
    if text.trim() == tag {
        Ok(())
    } else {
        Err(format_err(*line, &format!("expected {tag}")))
    }
}

fn scalar((line, text): &(usize, String)) -> Result<f64> {
    parse_f64(*line, text.trim())
}

fn triplet((line, text): &(usize, String)) -> Result<Triplet> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.len() != 3 {
        return Err(format_err(*line, "expected `row col value`"));
    }
    let index = |t: &str| {
        t.parse::<usize>()
            .map_err(|_| format_err(*line, &format!("bad index {t:?}")))
    };
    Ok((index(tokens[0])?, index(tokens[1])?, parse_f64(*line, tokens[2])?))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    SolverFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktReport {
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap_relative: f64,
}

impl KktReport {
    pub fn max_residual(&self) -> f64 {
        self.primal_residual.max(self.dual_residual)
    }

    pub fn within(&self, tol: &ContractTolerances) -> bool {
        self.max_residual() <= tol.kkt && self.gap_relative <= tol.gap
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub s: Vec<f64>,
    pub z: Vec<f64>,
    /// Includes the program's constant term.
    pub objective: f64,
    pub kkt: KktReport,
    pub iterations: u32,
}

impl SolveOutcome {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// Tolerances an Optimal answer must satisfy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractTolerances {
    pub kkt: f64,
    pub gap: f64,
}

impl Default for ContractTolerances {
    fn default() -> Self {
        Self { kkt: 1e-6, gap: 1e-6 }
    }
}

/// A convex QP/LP engine. Implementations must allow concurrent, independent
/// calls to `solve`.
pub trait ConvexSolver: Send + Sync {
    /// `warm_start` is an optional primal hint; engines may ignore it.
    fn solve(&self, program: &ConvexProgram, warm_start: Option<&[f64]>) -> SolveOutcome;
}

/// Running tally of contract checks across every solve routed through a
/// solver instance.
#[derive(Debug, Default)]
pub struct SolveLedger {
    solves: AtomicU64,
    optimal: AtomicU64,
    infeasible: AtomicU64,
    failures: AtomicU64,
    contract_violations: AtomicU64,
    worst_residual_bits: AtomicU64,
    worst_gap_bits: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LedgerSnapshot {
    pub solves: u64,
    pub optimal: u64,
    pub infeasible: u64,
    pub failures: u64,
    pub contract_violations: u64,
    pub worst_residual: f64,
    pub worst_gap: f64,
}

impl SolveLedger {
    fn record(&self, outcome: &SolveOutcome, tol: &ContractTolerances) {
        self.solves.fetch_add(1, Ordering::Relaxed);
        match outcome.status {
            SolveStatus::Optimal => {
                self.optimal.fetch_add(1, Ordering::Relaxed);
                if !outcome.kkt.within(tol) {
                    self.contract_violations.fetch_add(1, Ordering::Relaxed);
                }
                // non-negative floats order like their bit patterns
                self.worst_residual_bits
                    .fetch_max(outcome.kkt.max_residual().to_bits(), Ordering::Relaxed);
                self.worst_gap_bits
                    .fetch_max(outcome.kkt.gap_relative.to_bits(), Ordering::Relaxed);
            }
            SolveStatus::Infeasible => {
                self.infeasible.fetch_add(1, Ordering::Relaxed);
            }
            SolveStatus::SolverFailure => {
                self.failures.fetch_add(1, Ordering::Relaxed);
            }
        }
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        LedgerSnapshot {
            solves: self.solves.load(Ordering::Relaxed),
            optimal: self.optimal.load(Ordering::Relaxed),
            infeasible: self.infeasible.load(Ordering::Relaxed),
            failures: self.failures.load(Ordering::Relaxed),
            contract_violations: self.contract_violations.load(Ordering::Relaxed),
            worst_residual: f64::from_bits(self.worst_residual_bits.load(Ordering::Relaxed)),
            worst_gap: f64::from_bits(self.worst_gap_bits.load(Ordering::Relaxed)),
        }
    }
}

/// Interior-point backend built on Clarabel.
#[derive(Debug, Clone)]
pub struct ClarabelSolver {
    pub feasibility_tol: f64,
    pub gap_tol: f64,
    pub max_iter: u32,
    pub contract: ContractTolerances,
    /// Static regularization constants tried in turn after a numerical
    /// failure; the first attempt uses the backend default.
    pub retry_regularization: Vec<f64>,
    ledger: Arc<SolveLedger>,
}

impl Default for ClarabelSolver {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-8,
            gap_tol: 1e-8,
            max_iter: 200,
            contract: ContractTolerances::default(),
            retry_regularization: vec![1e-7, 1e-6],
            ledger: Arc::new(SolveLedger::default()),
        }
    }
}

impl ClarabelSolver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn ledger(&self) -> &SolveLedger {
        &self.ledger
    }
}

fn to_csc(nrows: usize, ncols: usize, triplets: &[Triplet]) -> CscMatrix<f64> {
    let (mut rows, mut cols, mut vals) = (
        Vec::with_capacity(triplets.len()),
        Vec::with_capacity(triplets.len()),
        Vec::with_capacity(triplets.len()),
    );
    for &(i, j, v) in triplets {
        rows.push(i);
        cols.push(j);
        vals.push(v);
    }
    CscMatrix::new_from_triplets(nrows, ncols, rows, cols, vals)
}

impl ClarabelSolver {
    fn attempt(&self, program: &ConvexProgram, regularization: Option<f64>) -> SolveOutcome {
        let n = program.n_vars;
        let m = program.n_rows();
        let p = to_csc(n, n, &program.p_upper);
        let a = to_csc(m, n, &program.a);

        let mut cones = Vec::with_capacity(2);
        if program.n_eq > 0 {
            cones.push(SupportedConeT::ZeroConeT(program.n_eq));
        }
        if program.n_ineq > 0 {
            cones.push(SupportedConeT::NonnegativeConeT(program.n_ineq));
        }

        let mut settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .max_iter(self.max_iter)
            .tol_feas(self.feasibility_tol)
            .tol_gap_abs(self.gap_tol)
            .tol_gap_rel(self.gap_tol)
            .tol_infeas_abs(self.feasibility_tol)
            .tol_infeas_rel(self.feasibility_tol)
            .max_threads(1)
            .build()
            .expect("static solver settings are valid");
        if let Some(eps) = regularization {
            settings.static_regularization_constant = eps;
        }

        let failure = |iterations| SolveOutcome {
            status: SolveStatus::SolverFailure,
            x: vec![0.0; n],
            s: vec![0.0; m],
            z: vec![0.0; m],
            objective: f64::NAN,
            kkt: KktReport::default(),
            iterations,
        };

        let mut solver = match DefaultSolver::new(&p, &program.q, &a, &program.b, &cones, settings) {
            Ok(solver) => solver,
            Err(e) => {
                debug!("solver setup failed: {e}");
                return failure(0);
            }
        };
        solver.solve();
        let solution = &solver.solution;

        match solution.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => {
                let kkt = program.kkt_report(&solution.x, &solution.s, &solution.z);
                let status = if solution.status == SolverStatus::Solved || kkt.within(&self.contract) {
                    SolveStatus::Optimal
                } else {
                    debug!("reduced-accuracy solve outside contract: {kkt:?}");
                    SolveStatus::SolverFailure
                };
                SolveOutcome {
                    status,
                    x: solution.x.clone(),
                    s: solution.s.clone(),
                    z: solution.z.clone(),
                    objective: program.objective_at(&solution.x),
                    kkt,
                    iterations: solution.iterations,
                }
            }
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveOutcome {
                status: SolveStatus::Infeasible,
                objective: f64::INFINITY,
                ..failure(solution.iterations)
            },
            other => {
                debug!("solver terminated with {other:?} (regularization {regularization:?})");
                failure(solution.iterations)
            }
        }
    }
}

impl ConvexSolver for ClarabelSolver {
    fn solve(&self, program: &ConvexProgram, _warm_start: Option<&[f64]>) -> SolveOutcome {
        let mut outcome = self.attempt(program, None);
        for &eps in &self.retry_regularization {
            if outcome.status != SolveStatus::SolverFailure {
                break;
            }
            outcome = self.attempt(program, Some(eps));
        }
        self.ledger.record(&outcome, &self.contract);
        outcome
    }
}
