//! Consensus-horizon optimal control problem.
//!
//! For every active mode the program carries a state trajectory
//! `x_1..x_H`. Controls `u_0..u_{h-1}` are shared by all modes (one
//! variable block each), later controls are per-mode. Each mode's
//! trajectory obeys its own dynamics and the discrete CBF rows of every
//! barrier at every step, and all control blocks obey the box bounds.
//!
//! The objective is the belief-weighted tracking cost
//! `sum_i mu(i) * sum_{k<H} (|x_k^i - x_ref|_Q^2 + |u_k^i|_R^2)` plus an
//! optional terminal term on `x_H`. The feasibility variant keeps the
//! constraints and drops the objective.

use nalgebra::{DMatrix, DVector};

use crate::barrier::BarrierSet;
use crate::error::{Error, Result};
use crate::jmls::{ensure_finite, JumpLinearModel, ModeBelief};
use crate::solver::{ConvexProgram, ConvexSolver, KktReport, SolveStatus};

/// Everything about the control problem that does not change between
/// planning steps.
#[derive(Debug, Clone, PartialEq)]
pub struct OcpSpec {
    model: JumpLinearModel,
    barriers: BarrierSet,
    horizon: usize,
    state_weight: DMatrix<f64>,
    control_weight: DMatrix<f64>,
    x_ref: DVector<f64>,
    terminal_weight: DMatrix<f64>,
}

impl OcpSpec {
    pub fn new(
        model: JumpLinearModel,
        barriers: BarrierSet,
        horizon: usize,
        state_weight: DMatrix<f64>,
        control_weight: DMatrix<f64>,
        x_ref: DVector<f64>,
    ) -> Result<Self> {
        let n = model.n_states();
        let terminal_weight = DMatrix::zeros(n, n);
        Self::with_terminal_weight(
            model,
            barriers,
            horizon,
            state_weight,
            control_weight,
            x_ref,
            terminal_weight,
        )
    }

    pub fn with_terminal_weight(
        model: JumpLinearModel,
        barriers: BarrierSet,
        horizon: usize,
        state_weight: DMatrix<f64>,
        control_weight: DMatrix<f64>,
        x_ref: DVector<f64>,
        terminal_weight: DMatrix<f64>,
    ) -> Result<Self> {
        let (n, m) = (model.n_states(), model.n_controls());
        if horizon == 0 {
            return Err(Error::InvalidOcp("horizon must be at least one step".into()));
        }
        if let Some(b) = barriers.barriers().first() {
            if b.dim() != n {
                return Err(Error::dim("barrier gradient", n, b.dim()));
            }
        }
        check_square(&state_weight, n, "Q")?;
        check_square(&control_weight, m, "R")?;
        check_square(&terminal_weight, n, "terminal weight")?;
        if x_ref.len() != n {
            return Err(Error::dim("x_ref", n, x_ref.len()));
        }
        ensure_finite(x_ref.iter(), "x_ref")?;
        ensure_positive_definite(&state_weight, "Q")?;
        ensure_positive_definite(&control_weight, "R")?;
        if !is_symmetric(&terminal_weight) {
            return Err(Error::InvalidOcp("terminal weight must be symmetric".into()));
        }
        Ok(Self {
            model,
            barriers,
            horizon,
            state_weight,
            control_weight,
            x_ref,
            terminal_weight,
        })
    }

    pub fn model(&self) -> &JumpLinearModel {
        &self.model
    }

    pub fn barriers(&self) -> &BarrierSet {
        &self.barriers
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn state_weight(&self) -> &DMatrix<f64> {
        &self.state_weight
    }

    pub fn control_weight(&self) -> &DMatrix<f64> {
        &self.control_weight
    }

    pub fn x_ref(&self) -> &DVector<f64> {
        &self.x_ref
    }

    pub fn terminal_weight(&self) -> &DMatrix<f64> {
        &self.terminal_weight
    }

    /// Copy with a different CBF decay rate.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Ok(Self {
            barriers: self.barriers.with_gamma(gamma)?,
            ..self.clone()
        })
    }

    /// Copy with every weight matrix multiplied by `factor`.
    pub fn scaled_weights(&self, factor: f64) -> Result<Self> {
        Self::with_terminal_weight(
            self.model.clone(),
            self.barriers.clone(),
            self.horizon,
            &self.state_weight * factor,
            &self.control_weight * factor,
            self.x_ref.clone(),
            &self.terminal_weight * factor,
        )
    }

    /// Stage cost `|x - x_ref|_Q^2 + |u|_R^2`.
    pub fn stage_cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let e = x - &self.x_ref;
        (e.transpose() * &self.state_weight * &e)[(0, 0)] + (u.transpose() * &self.control_weight * u)[(0, 0)]
    }
}

fn check_square(m: &DMatrix<f64>, n: usize, what: &'static str) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::dim(
            what,
            format!("{n}x{n}"),
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    ensure_finite(m.iter(), what)
}

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    (m - m.transpose()).amax() <= 1e-12 * (1.0 + m.amax())
}

fn ensure_positive_definite(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if !is_symmetric(m) || m.clone().cholesky().is_none() {
        return Err(Error::InvalidOcp(format!("{what} must be symmetric positive definite")));
    }
    Ok(())
}

/// How the consensus requirement is written into the program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConsensusEncoding {
    /// One control block shared by all modes for `k < h`.
    #[default]
    SharedVariables,
    /// Separate per-mode controls tied together by equality rows.
    EqualityRows,
}

/// One planning problem: an `OcpSpec` anchored at a measured state and belief.
#[derive(Debug, Clone)]
pub struct OcpInstance<'a> {
    spec: &'a OcpSpec,
    x0: DVector<f64>,
    mu_hat: ModeBelief,
    consensus_h: usize,
    modes: Vec<usize>,
    weights: Vec<f64>,
    barriers_enabled: bool,
    encoding: ConsensusEncoding,
}

impl<'a> OcpInstance<'a> {
    /// All modes, weighted by `mu_hat`, with `consensus_h` shared controls.
    pub fn new(spec: &'a OcpSpec, x0: DVector<f64>, mu_hat: ModeBelief, consensus_h: usize) -> Result<Self> {
        let model = spec.model();
        if x0.len() != model.n_states() {
            return Err(Error::dim("x0", model.n_states(), x0.len()));
        }
        ensure_finite(x0.iter(), "x0")?;
        if mu_hat.n_modes() != model.n_modes() {
            return Err(Error::dim("belief", model.n_modes(), mu_hat.n_modes()));
        }
        if consensus_h >= spec.horizon() {
            return Err(Error::InvalidOcp(format!(
                "consensus horizon {consensus_h} outside 0..={}",
                spec.horizon() - 1
            )));
        }
        let modes: Vec<usize> = (0..model.n_modes()).collect();
        let weights = modes.iter().map(|&i| mu_hat.prob(i)).collect();
        Ok(Self {
            spec,
            x0,
            mu_hat,
            consensus_h,
            modes,
            weights,
            barriers_enabled: true,
            encoding: ConsensusEncoding::default(),
        })
    }

    /// A single-mode problem for `mode` with unit cost weight.
    pub fn single_mode(spec: &'a OcpSpec, x0: DVector<f64>, mu_hat: ModeBelief, mode: usize) -> Result<Self> {
        if mode >= spec.model().n_modes() {
            return Err(Error::InvalidOcp(format!("mode {mode} out of range")));
        }
        let mut instance = Self::new(spec, x0, mu_hat, 0)?;
        instance.modes = vec![mode];
        instance.weights = vec![1.0];
        Ok(instance)
    }

    /// Drop modes whose belief is strictly below `threshold`. A threshold
    /// of zero keeps every mode.
    pub fn pruned(mut self, threshold: f64) -> Self {
        if threshold > 0.0 {
            let keep: Vec<usize> = self
                .modes
                .iter()
                .copied()
                .filter(|&i| self.mu_hat.prob(i) >= threshold)
                .collect();
            if !keep.is_empty() {
                self.weights = keep.iter().map(|&i| self.mu_hat.prob(i)).collect();
                self.modes = keep;
            }
        }
        self
    }

    pub fn without_barriers(mut self) -> Self {
        self.barriers_enabled = false;
        self
    }

    pub fn with_encoding(mut self, encoding: ConsensusEncoding) -> Self {
        self.encoding = encoding;
        self
    }

    pub fn with_consensus(&self, consensus_h: usize) -> Result<Self> {
        if consensus_h >= self.spec.horizon() {
            return Err(Error::InvalidOcp(format!(
                "consensus horizon {consensus_h} outside 0..={}",
                self.spec.horizon() - 1
            )));
        }
        Ok(Self {
            consensus_h,
            ..self.clone()
        })
    }

    pub fn spec(&self) -> &OcpSpec {
        self.spec
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }

    pub fn mu_hat(&self) -> &ModeBelief {
        &self.mu_hat
    }

    pub fn consensus_h(&self) -> usize {
        self.consensus_h
    }

    pub fn modes(&self) -> &[usize] {
        &self.modes
    }
}

/// Variable indexing for an assembled program.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub n_states: usize,
    pub n_controls: usize,
    pub horizon: usize,
    pub consensus_h: usize,
    pub modes: Vec<usize>,
    pub encoding: ConsensusEncoding,
}

impl Layout {
    fn n_slots(&self) -> usize {
        self.modes.len()
    }

    fn control_base(&self) -> usize {
        self.n_slots() * self.horizon * self.n_states
    }

    pub fn n_state_vars(&self) -> usize {
        self.control_base()
    }

    /// Number of distinct control variables.
    pub fn n_control_vars(&self) -> usize {
        let (h, hz, m) = (self.consensus_h, self.horizon, self.n_controls);
        match self.encoding {
            ConsensusEncoding::SharedVariables => (h + self.n_slots() * (hz - h)) * m,
            ConsensusEncoding::EqualityRows => self.n_slots() * hz * m,
        }
    }

    pub fn n_vars(&self) -> usize {
        self.n_state_vars() + self.n_control_vars()
    }

    /// Index of component `j` of `x_k` for mode slot `slot`, `1 <= k <= H`.
    pub fn state_var(&self, slot: usize, k: usize, j: usize) -> usize {
        debug_assert!(k >= 1 && k <= self.horizon);
        slot * self.horizon * self.n_states + (k - 1) * self.n_states + j
    }

    /// Index of component `j` of `u_k` as seen by mode slot `slot`.
    pub fn control_var(&self, slot: usize, k: usize, j: usize) -> usize {
        let (h, hz, m) = (self.consensus_h, self.horizon, self.n_controls);
        let base = self.control_base();
        match self.encoding {
            ConsensusEncoding::SharedVariables if k < h => base + k * m + j,
            ConsensusEncoding::SharedVariables => base + h * m + slot * (hz - h) * m + (k - h) * m + j,
            ConsensusEncoding::EqualityRows => base + slot * hz * m + k * m + j,
        }
    }

    /// True when `(slot, k)` owns its control block, i.e. it is not an alias
    /// of another mode's variables.
    fn owns_control(&self, slot: usize, k: usize) -> bool {
        match self.encoding {
            ConsensusEncoding::SharedVariables => k >= self.consensus_h || slot == 0,
            ConsensusEncoding::EqualityRows => true,
        }
    }
}

/// A built program together with its layout.
#[derive(Debug, Clone)]
pub struct OcpProgram {
    pub program: ConvexProgram,
    pub layout: Layout,
    weights: Vec<f64>,
}

fn layout_for(instance: &OcpInstance<'_>) -> Layout {
    let model = instance.spec.model();
    Layout {
        n_states: model.n_states(),
        n_controls: model.n_controls(),
        horizon: instance.spec.horizon(),
        consensus_h: instance.consensus_h,
        modes: instance.modes.clone(),
        encoding: instance.encoding,
    }
}

fn add_constraints(instance: &OcpInstance<'_>, layout: &Layout, program: &mut ConvexProgram) {
    let spec = instance.spec;
    let model = spec.model();
    let (n, m, hz) = (layout.n_states, layout.n_controls, layout.horizon);
    let x0 = &instance.x0;

    // dynamics: x_{k+1} - A x_k - B u_k = 0, with A x0 moved to the right at k = 0
    let mut coeffs = Vec::with_capacity(2 * n + m);
    for (slot, &mode) in layout.modes.iter().enumerate() {
        let dynamics = model.mode(mode);
        let drift0 = &dynamics.a * x0;
        for k in 0..hz {
            for row in 0..n {
                coeffs.clear();
                coeffs.push((layout.state_var(slot, k + 1, row), 1.0));
                if k > 0 {
                    for col in 0..n {
                        coeffs.push((layout.state_var(slot, k, col), -dynamics.a[(row, col)]));
                    }
                }
                for col in 0..m {
                    coeffs.push((layout.control_var(slot, k, col), -dynamics.b[(row, col)]));
                }
                program.push_eq(&coeffs, if k == 0 { drift0[row] } else { 0.0 });
            }
        }
    }

    if layout.encoding == ConsensusEncoding::EqualityRows {
        for slot in 1..layout.n_slots() {
            for k in 0..layout.consensus_h {
                for j in 0..m {
                    program.push_eq(
                        &[
                            (layout.control_var(slot, k, j), 1.0),
                            (layout.control_var(0, k, j), -1.0),
                        ],
                        0.0,
                    );
                }
            }
        }
    }

    // CBF rows: -a'x_{k+1} + decay a'x_k <= b - decay b
    if instance.barriers_enabled {
        let rows = spec.barriers().cbf_rows();
        for slot in 0..layout.n_slots() {
            for row in &rows {
                for k in 0..hz {
                    coeffs.clear();
                    for (j, &aj) in row.next_coeffs().iter().enumerate() {
                        coeffs.push((layout.state_var(slot, k + 1, j), -aj));
                    }
                    let rhs = if k == 0 {
                        row.b - row.min_next_value(x0)
                    } else {
                        for (j, &aj) in row.next_coeffs().iter().enumerate() {
                            coeffs.push((layout.state_var(slot, k, j), row.decay * aj));
                        }
                        row.constant()
                    };
                    program.push_le(&coeffs, rhs);
                }
            }
        }
    }

    // box bounds on every distinct control block
    let (u_min, u_max) = (model.u_min(), model.u_max());
    for slot in 0..layout.n_slots() {
        for k in 0..hz {
            if !layout.owns_control(slot, k) {
                continue;
            }
            for j in 0..m {
                let var = layout.control_var(slot, k, j);
                if u_max[j].is_finite() {
                    program.push_le(&[(var, 1.0)], u_max[j]);
                }
                if u_min[j].is_finite() {
                    program.push_le(&[(var, -1.0)], -u_min[j]);
                }
            }
        }
    }
}

fn add_objective(instance: &OcpInstance<'_>, layout: &Layout, program: &mut ConvexProgram) {
    let spec = instance.spec;
    let (n, m, hz) = (layout.n_states, layout.n_controls, layout.horizon);
    let q = spec.state_weight();
    let r = spec.control_weight();
    let p_term = spec.terminal_weight();
    let x_ref = spec.x_ref();

    let mut constant = 0.0;
    for (slot, &weight) in instance.weights.iter().enumerate() {
        if weight == 0.0 {
            continue;
        }
        // k = 0 stage: x_0 is data
        let e0 = &instance.x0 - x_ref;
        constant += weight * (e0.transpose() * q * &e0)[(0, 0)];

        for k in 1..=hz {
            let w = if k < hz { q } else { p_term };
            let qr = w * x_ref;
            for i in 0..n {
                let vi = layout.state_var(slot, k, i);
                program.q[vi] -= 2.0 * weight * qr[i];
                for j in i..n {
                    program.add_hessian(vi, layout.state_var(slot, k, j), 2.0 * weight * w[(i, j)]);
                }
            }
            constant += weight * (x_ref.transpose() * &qr)[(0, 0)];
        }

        // aliased shared controls accumulate one term per mode
        for k in 0..hz {
            for i in 0..m {
                for j in i..m {
                    program.add_hessian(
                        layout.control_var(slot, k, i),
                        layout.control_var(slot, k, j),
                        2.0 * weight * r[(i, j)],
                    );
                }
            }
        }
    }
    program.constant = constant;
}

/// Consensus OCP as a QP.
pub fn build_qp(instance: &OcpInstance<'_>) -> OcpProgram {
    let layout = layout_for(instance);
    let mut program = ConvexProgram::new(layout.n_vars());
    add_constraints(instance, &layout, &mut program);
    add_objective(instance, &layout, &mut program);
    OcpProgram {
        program,
        layout,
        weights: instance.weights.clone(),
    }
}

/// Same constraint set as [`build_qp`] with a constant zero objective.
pub fn build_feasibility_lp(instance: &OcpInstance<'_>) -> OcpProgram {
    let layout = layout_for(instance);
    let mut program = ConvexProgram::new(layout.n_vars());
    add_constraints(instance, &layout, &mut program);
    OcpProgram {
        program,
        layout,
        weights: instance.weights.clone(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSolution {
    pub status: SolveStatus,
    /// Model mode index for each trajectory slot.
    pub modes: Vec<usize>,
    /// `controls[slot][k]` is `u_k` for that mode, `k = 0..H-1`.
    pub controls: Vec<Vec<DVector<f64>>>,
    /// `states[slot][k-1]` is `x_k`, `k = 1..H`.
    pub states: Vec<Vec<DVector<f64>>>,
    pub objective: f64,
    /// `u_0` of the highest-weight mode (lowest index on ties); this is the
    /// shared block whenever `h >= 1`.
    pub first_input: Option<DVector<f64>>,
    pub kkt: KktReport,
}

impl OcpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    /// Slot of the given model mode, if it was part of the program.
    pub fn slot_of(&self, mode: usize) -> Option<usize> {
        self.modes.iter().position(|&m| m == mode)
    }

    /// Largest dynamics residual over all modes and steps.
    pub fn dynamics_residual(&self, model: &JumpLinearModel, x0: &DVector<f64>) -> f64 {
        let mut worst: f64 = 0.0;
        for (slot, &mode) in self.modes.iter().enumerate() {
            let mut prev = x0.clone();
            for (u, x) in self.controls[slot].iter().zip(&self.states[slot]) {
                let predicted = model.mode(mode).step(&prev, u);
                worst = worst.max((predicted - x).amax());
                prev = x.clone();
            }
        }
        worst
    }
}

impl OcpProgram {
    pub fn solve(&self, solver: &dyn ConvexSolver) -> OcpSolution {
        let outcome = solver.solve(&self.program, None);
        let layout = &self.layout;
        if outcome.status != SolveStatus::Optimal {
            return OcpSolution {
                status: outcome.status,
                modes: layout.modes.clone(),
                controls: Vec::new(),
                states: Vec::new(),
                objective: outcome.objective,
                first_input: None,
                kkt: outcome.kkt,
            };
        }

        let x = &outcome.x;
        let (n, m, hz) = (layout.n_states, layout.n_controls, layout.horizon);
        let controls: Vec<Vec<DVector<f64>>> = (0..layout.n_slots())
            .map(|slot| {
                (0..hz)
                    .map(|k| DVector::from_fn(m, |j, _| x[layout.control_var(slot, k, j)]))
                    .collect()
            })
            .collect();
        let states: Vec<Vec<DVector<f64>>> = (0..layout.n_slots())
            .map(|slot| {
                (1..=hz)
                    .map(|k| DVector::from_fn(n, |j, _| x[layout.state_var(slot, k, j)]))
                    .collect()
            })
            .collect();

        let mut lead = 0;
        for (slot, &w) in self.weights.iter().enumerate() {
            if w > self.weights[lead] {
                lead = slot;
            }
        }
        let first_input = Some(controls[lead][0].clone());

        OcpSolution {
            status: outcome.status,
            modes: layout.modes.clone(),
            controls,
            states,
            objective: outcome.objective,
            first_input,
            kkt: outcome.kkt,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::AffineBarrier;
    use crate::jmls::ModeDynamics;
    use crate::solver::ClarabelSolver;
    use nalgebra::{dmatrix, dvector};

    fn cwh_like(n_modes: usize, horizon: usize) -> OcpSpec {
        let modes = (0..n_modes)
            .map(|i| {
                let a = DMatrix::<f64>::identity(6, 6) * (1.0 + 0.01 * i as f64);
                let b = DMatrix::<f64>::from_fn(6, 3, |r, c| if r == c + 3 { 1.0 } else { 0.0 });
                ModeDynamics::new(a, b).unwrap()
            })
            .collect();
        let model = JumpLinearModel::new(
            modes,
            DMatrix::identity(n_modes, n_modes),
            DVector::from_element(3, -1.0),
            DVector::from_element(3, 1.0),
        )
        .unwrap();
        let barriers = BarrierSet::new(vec![AffineBarrier::upper(6, 1, 4.0, "y").unwrap()], 0.05).unwrap();
        OcpSpec::new(
            model,
            barriers,
            horizon,
            DMatrix::identity(6, 6),
            DMatrix::identity(3, 3),
            DVector::zeros(6),
        )
        .unwrap()
    }

    #[test]
    fn variable_count_follows_construction_rule() {
        let spec = cwh_like(2, 30);
        let inst = OcpInstance::new(&spec, DVector::zeros(6), ModeBelief::uniform(2).unwrap(), 10).unwrap();
        let prog = build_qp(&inst);
        assert_eq!(prog.layout.n_state_vars(), 360);
        assert_eq!(prog.layout.n_control_vars(), 150);
        assert_eq!(prog.program.n_vars, 510);
    }

    #[test]
    fn consensus_must_be_below_horizon() {
        let spec = cwh_like(2, 3);
        let mu = ModeBelief::uniform(2).unwrap();
        assert!(OcpInstance::new(&spec, DVector::zeros(6), mu.clone(), 3).is_err());
        assert!(OcpInstance::new(&spec, DVector::zeros(6), mu, 2).is_ok());
    }

    #[test]
    fn consensus_is_vacuous_for_one_mode() {
        let spec = cwh_like(1, 5);
        let mu = ModeBelief::one_hot(1, 0).unwrap();
        let x0 = dvector![0.5, 1.0, 0.0, 0.1, 0.0, 0.0];
        let p0 = build_qp(&OcpInstance::new(&spec, x0.clone(), mu.clone(), 0).unwrap());
        let p3 = build_qp(&OcpInstance::new(&spec, x0, mu, 3).unwrap());
        assert_eq!(p0.program, p3.program);
    }

    #[test]
    fn rejects_bad_dimensions() {
        let spec = cwh_like(2, 3);
        assert!(OcpInstance::new(&spec, DVector::zeros(5), ModeBelief::uniform(2).unwrap(), 0).is_err());
        assert!(OcpInstance::new(&spec, DVector::zeros(6), ModeBelief::uniform(3).unwrap(), 0).is_err());
    }

    #[test]
    fn rejects_indefinite_weights() {
        let base = cwh_like(1, 2);
        let bad_q = -DMatrix::<f64>::identity(6, 6);
        assert!(OcpSpec::new(
            base.model().clone(),
            base.barriers().clone(),
            2,
            bad_q,
            DMatrix::identity(3, 3),
            DVector::zeros(6)
        )
        .is_err());
        assert!(OcpSpec::new(
            base.model().clone(),
            base.barriers().clone(),
            0,
            DMatrix::identity(6, 6),
            DMatrix::identity(3, 3),
            DVector::zeros(6)
        )
        .is_err());
    }

    #[test]
    fn shared_controls_are_identical_and_dynamics_hold() {
        let spec = cwh_like(3, 6);
        let mu = ModeBelief::new(dvector![0.5, 0.3, 0.2]).unwrap();
        let x0 = dvector![0.3, 2.0, -0.4, 0.0, 0.2, 0.0];
        let inst = OcpInstance::new(&spec, x0.clone(), mu, 4).unwrap();
        let sol = build_qp(&inst).solve(&ClarabelSolver::new());
        assert!(sol.is_optimal());
        for k in 0..4 {
            for slot in 1..3 {
                assert_eq!(sol.controls[slot][k], sol.controls[0][k]);
            }
        }
        assert!(sol.dynamics_residual(spec.model(), &x0) < 1e-7);
        assert!(sol.objective >= 0.0);
    }

    #[test]
    fn unstable_mode_with_frozen_input_is_infeasible() {
        // x+ = 2x, x <= 1, x0 = 0.9, u pinned to zero: x_1 = 1.8 breaks the set
        let model = JumpLinearModel::new(
            vec![ModeDynamics::new(dmatrix![2.0], dmatrix![1.0]).unwrap()],
            dmatrix![1.0],
            dvector![0.0],
            dvector![0.0],
        )
        .unwrap();
        let barriers = BarrierSet::new(vec![AffineBarrier::upper(1, 0, 1.0, "x").unwrap()], 0.5).unwrap();
        let spec = OcpSpec::new(model, barriers, 3, dmatrix![1.0], dmatrix![1.0], dvector![0.0]).unwrap();
        let inst = OcpInstance::new(&spec, dvector![0.9], ModeBelief::one_hot(1, 0).unwrap(), 0).unwrap();
        let solver = ClarabelSolver::new();
        assert_eq!(build_qp(&inst).solve(&solver).status, SolveStatus::Infeasible);
        assert_eq!(
            build_feasibility_lp(&inst).solve(&solver).status,
            SolveStatus::Infeasible
        );
    }

    #[test]
    fn feasibility_lp_shares_constraints() {
        let spec = cwh_like(2, 4);
        let inst = OcpInstance::new(&spec, DVector::zeros(6), ModeBelief::uniform(2).unwrap(), 2).unwrap();
        let qp = build_qp(&inst);
        let lp = build_feasibility_lp(&inst);
        assert_eq!(qp.program.a, lp.program.a);
        assert_eq!(qp.program.b, lp.program.b);
        assert!(lp.program.is_linear());
        assert_eq!(lp.solve(&ClarabelSolver::new()).status, SolveStatus::Optimal);
    }

    #[test]
    fn pruning_and_single_mode() {
        let spec = cwh_like(3, 4);
        let mu = ModeBelief::new(dvector![0.0, 1.0, 0.0]).unwrap();
        let inst = OcpInstance::new(&spec, DVector::zeros(6), mu.clone(), 1).unwrap();
        assert_eq!(inst.clone().pruned(0.0).modes(), &[0, 1, 2]);
        assert_eq!(inst.pruned(1e-3).modes(), &[1]);
        let single = OcpInstance::single_mode(&spec, DVector::zeros(6), mu, 2).unwrap();
        assert_eq!(single.modes(), &[2]);
    }
}
