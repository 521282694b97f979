//! Jump Markov linear system dynamics.
//!
//! A [`JumpLinearModel`] holds one discrete-time `(A, B)` pair per mode, the
//! mode transition matrix and the box control bounds. Modes are indexed from
//! zero in the Rust API; every external file format numbers them from one.
//!
//! The transition matrix is column-stochastic: column `i` is the distribution
//! of the next mode given the current mode `i`, so a belief propagates as
//! `mu' = Omega * mu`.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const STOCHASTIC_TOL: f64 = 1e-12;

/// Discrete-time dynamics of a single mode: `x' = A x + B u`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeDynamics {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl ModeDynamics {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::dim("mode A", "square", format!("{}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != a.nrows() {
            return Err(Error::dim("mode B rows", a.nrows(), b.nrows()));
        }
        ensure_finite(a.iter(), "mode A")?;
        ensure_finite(b.iter(), "mode B")?;
        Ok(Self { a, b })
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_controls(&self) -> usize {
        self.b.ncols()
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }
}

/// Continuous-time linear dynamics `dx/dt = A x + B u`, prior to sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl ContinuousModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::dim(
                "continuous A",
                "square",
                format!("{}x{}", a.nrows(), a.ncols()),
            ));
        }
        if b.nrows() != a.nrows() {
            return Err(Error::dim("continuous B rows", a.nrows(), b.nrows()));
        }
        Ok(Self { a, b })
    }

    /// Exact zero-order-hold discretization.
    ///
    /// Exponentiates the augmented matrix `[[A, B], [0, 0]] * dt`; the top row
    /// of blocks of the result is `[A_d, B_d]`.
    pub fn discretize(&self, dt: f64) -> Result<ModeDynamics> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidModel(format!("sampling time must be positive, got {dt}")));
        }
        ensure_finite(self.a.iter(), "continuous A")?;
        ensure_finite(self.b.iter(), "continuous B")?;

        let n = self.a.nrows();
        let m = self.b.ncols();
        let mut augmented = DMatrix::zeros(n + m, n + m);
        augmented.view_mut((0, 0), (n, n)).copy_from(&self.a);
        augmented.view_mut((0, n), (n, m)).copy_from(&self.b);
        let phi = (augmented * dt).exp();

        ModeDynamics::new(
            phi.view((0, 0), (n, n)).into_owned(),
            phi.view((0, n), (n, m)).into_owned(),
        )
    }
}

/// Categorical mode probability on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeBelief {
    probs: DVector<f64>,
}

impl ModeBelief {
    pub fn new(probs: DVector<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidBelief("belief over zero modes".into()));
        }
        ensure_finite(probs.iter(), "belief")?;
        if probs.iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidBelief(format!(
                "negative probability in {:?}",
                probs.as_slice()
            )));
        }
        let total = probs.sum();
        if (total - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidBelief(format!("probabilities sum to {total}")));
        }
        Ok(Self { probs })
    }

    pub fn one_hot(n_modes: usize, mode: usize) -> Result<Self> {
        if mode >= n_modes {
            return Err(Error::InvalidBelief(format!(
                "mode {mode} out of range for {n_modes} modes"
            )));
        }
        let mut probs = DVector::zeros(n_modes);
        probs[mode] = 1.0;
        Ok(Self { probs })
    }

    pub fn uniform(n_modes: usize) -> Result<Self> {
        if n_modes == 0 {
            return Err(Error::InvalidBelief("belief over zero modes".into()));
        }
        Ok(Self {
            probs: DVector::from_element(n_modes, 1.0 / n_modes as f64),
        })
    }

    pub fn probs(&self) -> &DVector<f64> {
        &self.probs
    }

    pub fn n_modes(&self) -> usize {
        self.probs.len()
    }

    pub fn prob(&self, mode: usize) -> f64 {
        self.probs[mode]
    }

    /// Most likely mode; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate().skip(1) {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// True when exactly one entry is 1 and the rest are 0.
    pub fn is_one_hot(&self) -> bool {
        self.probs.iter().filter(|&&p| p == 1.0).count() == 1 && self.probs.iter().all(|&p| p == 0.0 || p == 1.0)
    }
}

/// A discrete-time jump Markov linear system with box control constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct JumpLinearModel {
    modes: Vec<ModeDynamics>,
    transition: DMatrix<f64>,
    u_min: DVector<f64>,
    u_max: DVector<f64>,
}

impl JumpLinearModel {
    pub fn new(
        modes: Vec<ModeDynamics>,
        transition: DMatrix<f64>,
        u_min: DVector<f64>,
        u_max: DVector<f64>,
    ) -> Result<Self> {
        let first = modes
            .first()
            .ok_or_else(|| Error::InvalidModel("model needs at least one mode".into()))?;
        let (n, m) = (first.n_states(), first.n_controls());
        if n == 0 || m == 0 {
            return Err(Error::InvalidModel(format!("degenerate dimensions n={n}, m={m}")));
        }
        for (i, mode) in modes.iter().enumerate() {
            if mode.n_states() != n || mode.n_controls() != m {
                return Err(Error::InvalidModel(format!(
                    "mode {} is {}x{} / {}x{}, expected {n}x{n} / {n}x{m}",
                    i + 1,
                    mode.a.nrows(),
                    mode.a.ncols(),
                    mode.b.nrows(),
                    mode.b.ncols()
                )));
            }
        }

        let n_modes = modes.len();
        if transition.nrows() != n_modes || transition.ncols() != n_modes {
            return Err(Error::dim(
                "transition matrix",
                format!("{n_modes}x{n_modes}"),
                format!("{}x{}", transition.nrows(), transition.ncols()),
            ));
        }
        ensure_finite(transition.iter(), "transition matrix")?;
        if transition.iter().any(|&w| !(0.0..=1.0).contains(&w)) {
            return Err(Error::InvalidModel("transition entries must lie in [0, 1]".into()));
        }
        for (j, column) in transition.column_iter().enumerate() {
            let total = column.sum();
            if (total - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidModel(format!(
                    "transition column {} sums to {total}",
                    j + 1
                )));
            }
        }

        if u_min.len() != m {
            return Err(Error::dim("u_min", m, u_min.len()));
        }
        if u_max.len() != m {
            return Err(Error::dim("u_max", m, u_max.len()));
        }
        if u_min.iter().chain(u_max.iter()).any(|v| v.is_nan()) {
            return Err(Error::NonFinite("control bounds"));
        }
        if u_min.iter().zip(u_max.iter()).any(|(lo, hi)| lo > hi) {
            return Err(Error::InvalidModel("u_min must not exceed u_max".into()));
        }

        Ok(Self {
            modes,
            transition,
            u_min,
            u_max,
        })
    }

    pub fn n_states(&self) -> usize {
        self.modes[0].n_states()
    }

    pub fn n_controls(&self) -> usize {
        self.modes[0].n_controls()
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[ModeDynamics] {
        &self.modes
    }

    pub fn mode(&self, index: usize) -> &ModeDynamics {
        &self.modes[index]
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn u_min(&self) -> &DVector<f64> {
        &self.u_min
    }

    pub fn u_max(&self) -> &DVector<f64> {
        &self.u_max
    }

    /// Clamp a control vector into the box bounds.
    pub fn saturate(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            u.len(),
            u.iter()
                .zip(self.u_min.iter().zip(self.u_max.iter()))
                .map(|(&v, (&lo, &hi))| v.clamp(lo, hi)),
        )
    }

    /// Advance the true system one step in the given (zero-based) mode.
    ///
    /// Controls outside the box only trigger a warning: fallback inputs may
    /// sit marginally outside the bounds after a solver returns.
    pub fn step_truth(&self, x: &DVector<f64>, mode: usize, u: &DVector<f64>) -> Result<DVector<f64>> {
        if mode >= self.n_modes() {
            return Err(Error::InvalidModel(format!(
                "mode index {mode} out of range for {} modes",
                self.n_modes()
            )));
        }
        if x.len() != self.n_states() {
            return Err(Error::dim("state", self.n_states(), x.len()));
        }
        if u.len() != self.n_controls() {
            return Err(Error::dim("control", self.n_controls(), u.len()));
        }
        let out_of_box = u
            .iter()
            .zip(self.u_min.iter().zip(self.u_max.iter()))
            .any(|(&v, (&lo, &hi))| v < lo - 1e-9 || v > hi + 1e-9);
        if out_of_box {
            warn!("control {:?} outside bounds", u.as_slice());
        }
        Ok(self.modes[mode].step(x, u))
    }

    pub fn propagate_belief(&self, mu: &ModeBelief) -> Result<ModeBelief> {
        if mu.n_modes() != self.n_modes() {
            return Err(Error::dim("belief", self.n_modes(), mu.n_modes()));
        }
        let mut next = &self.transition * mu.probs();
        next.iter_mut().for_each(|p| *p = p.max(0.0));
        ModeBelief::new(next)
    }
}

/// On-disk layout of a [`JumpLinearModel`]; matrices are row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "M")]
    pub n_modes: usize,
    pub modes: Vec<ModeFile>,
    pub omega: Vec<Vec<f64>>,
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeFile {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
}

impl TryFrom<ModelFile> for JumpLinearModel {
    type Error = Error;

    fn try_from(file: ModelFile) -> Result<Self> {
        if file.modes.len() != file.n_modes {
            return Err(Error::dim("modes", file.n_modes, file.modes.len()));
        }
        let modes = file
            .modes
            .iter()
            .map(|mode| {
                let a = matrix_from_rows(&mode.a, file.n, file.n, "A")?;
                let b = matrix_from_rows(&mode.b, file.n, file.m, "B")?;
                ModeDynamics::new(a, b)
            })
            .collect::<Result<Vec<_>>>()?;
        let omega = matrix_from_rows(&file.omega, file.n_modes, file.n_modes, "omega")?;
        JumpLinearModel::new(
            modes,
            omega,
            DVector::from_vec(file.u_min),
            DVector::from_vec(file.u_max),
        )
    }
}

impl From<JumpLinearModel> for ModelFile {
    fn from(model: JumpLinearModel) -> Self {
        ModelFile {
            n: model.n_states(),
            m: model.n_controls(),
            n_modes: model.n_modes(),
            modes: model
                .modes
                .iter()
                .map(|mode| ModeFile {
                    a: matrix_to_rows(&mode.a),
                    b: matrix_to_rows(&mode.b),
                })
                .collect(),
            omega: matrix_to_rows(&model.transition),
            u_min: model.u_min.as_slice().to_vec(),
            u_max: model.u_max.as_slice().to_vec(),
        }
    }
}

pub(crate) fn matrix_from_rows(
    rows: &[Vec<f64>],
    nrows: usize,
    ncols: usize,
    context: &'static str,
) -> Result<DMatrix<f64>> {
    if rows.len() != nrows {
        return Err(Error::dim(context, format!("{nrows} rows"), rows.len()));
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::dim(context, format!("{ncols} columns"), bad.len()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub(crate) fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn ensure_finite<'a>(values: impl IntoIterator<Item = &'a f64>, what: &'static str) -> Result<()> {
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
