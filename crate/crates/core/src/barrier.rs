//! Affine control barrier functions.
//!
//! A barrier `beta(x) = a'x + b` marks the safe halfspace `beta(x) >= 0`. The
//! discrete CBF condition used by the planner is
//! `beta(x_{k+1}) >= (1 - gamma) * beta(x_k)`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::{ClarabelSolver, ConvexProgram, ConvexSolver, SolveStatus};

/// Absolute slack allowed when checking set membership.
pub const SAFETY_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BarrierFile", into = "BarrierFile")]
pub struct AffineBarrier {
    a: DVector<f64>,
    b: f64,
    label: String,
}

impl AffineBarrier {
    pub fn new(a: DVector<f64>, b: f64, label: impl Into<String>) -> Result<Self> {
        if a.iter().any(|v| !v.is_finite()) || !b.is_finite() {
            return Err(Error::NonFinite("barrier coefficients"));
        }
        if a.iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidBarrier("barrier gradient must be nonzero".into()));
        }
        Ok(Self {
            a,
            b,
            label: label.into(),
        })
    }

    /// `lo <= x[coord]` as a barrier on an `n`-dimensional state.
    pub fn lower(n: usize, coord: usize, lo: f64, label: impl Into<String>) -> Result<Self> {
        let mut a = DVector::zeros(n);
        a[coord] = 1.0;
        Self::new(a, -lo, label)
    }

    /// `x[coord] <= hi` as a barrier on an `n`-dimensional state.
    pub fn upper(n: usize, coord: usize, hi: f64, label: impl Into<String>) -> Result<Self> {
        let mut a = DVector::zeros(n);
        a[coord] = -1.0;
        Self::new(a, hi, label)
    }

    pub fn gradient(&self) -> &DVector<f64> {
        &self.a
    }

    pub fn offset(&self) -> f64 {
        self.b
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        self.a.dot(x) + self.b
    }

    pub fn cbf_row(&self, gamma: f64) -> CbfRow {
        CbfRow {
            a: self.a.clone(),
            b: self.b,
            decay: 1.0 - gamma,
        }
    }
}

/// Linear constraint tying consecutive states `(x_k, x_{k+1})`:
/// `a'x_{k+1} + b - decay * (a'x_k + b) >= 0` with `decay = 1 - gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct CbfRow {
    pub a: DVector<f64>,
    pub b: f64,
    pub decay: f64,
}

impl CbfRow {
    /// Coefficients on `x_{k+1}`.
    pub fn next_coeffs(&self) -> &DVector<f64> {
        &self.a
    }

    /// Coefficients on `x_k`.
    pub fn prev_coeffs(&self) -> DVector<f64> {
        &self.a * -self.decay
    }

    /// Constant term when both states are decision variables.
    pub fn constant(&self) -> f64 {
        self.b - self.decay * self.b
    }

    /// Lower bound on `beta(x_{k+1})` once `x_k` is fixed.
    pub fn min_next_value(&self, x_prev: &DVector<f64>) -> f64 {
        self.decay * (self.a.dot(x_prev) + self.b)
    }

    /// Signed slack of the row; non-negative when satisfied.
    pub fn slack(&self, x_prev: &DVector<f64>, x_next: &DVector<f64>) -> f64 {
        self.a.dot(x_next) + self.b - self.min_next_value(x_prev)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BarrierSetFile", into = "BarrierSetFile")]
pub struct BarrierSet {
    barriers: Vec<AffineBarrier>,
    gamma: f64,
}

impl BarrierSet {
    pub fn new(barriers: Vec<AffineBarrier>, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidBarrier(format!("gamma must lie in (0, 1], got {gamma}")));
        }
        if let Some(first) = barriers.first() {
            if let Some(bad) = barriers.iter().find(|b| b.dim() != first.dim()) {
                return Err(Error::dim("barrier gradient", first.dim(), bad.dim()));
            }
        }
        let set = Self { barriers, gamma };
        if !set.has_nonempty_interior_or_boundary() {
            return Err(Error::EmptySafeSet);
        }
        Ok(set)
    }

    /// Feasibility LP over the halfspace intersection.
    fn has_nonempty_interior_or_boundary(&self) -> bool {
        let Some(first) = self.barriers.first() else {
            return true;
        };
        let n = first.dim();
        let mut lp = ConvexProgram::new(n);
        for barrier in &self.barriers {
            // -a'x <= b
            let coeffs: Vec<(usize, f64)> = barrier.a.iter().enumerate().map(|(j, &v)| (j, -v)).collect();
            lp.push_le(&coeffs, barrier.b);
        }
        ClarabelSolver::new().solve(&lp, None).status == SolveStatus::Optimal
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(self.barriers.clone(), gamma)
    }

    pub fn barriers(&self) -> &[AffineBarrier] {
        &self.barriers
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn len(&self) -> usize {
        self.barriers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.barriers.is_empty()
    }

    pub fn values(&self, x: &DVector<f64>) -> Vec<f64> {
        self.barriers.iter().map(|b| b.value(x)).collect()
    }

    pub fn min_value(&self, x: &DVector<f64>) -> f64 {
        self.barriers.iter().map(|b| b.value(x)).fold(f64::INFINITY, f64::min)
    }

    pub fn is_safe(&self, x: &DVector<f64>) -> bool {
        self.barriers.iter().all(|b| b.value(x) >= -SAFETY_TOL)
    }

    pub fn cbf_rows(&self) -> Vec<CbfRow> {
        self.barriers.iter().map(|b| b.cbf_row(self.gamma)).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BarrierFile {
    pub a: Vec<f64>,
    pub b: f64,
    pub label: String,
}

impl TryFrom<BarrierFile> for AffineBarrier {
    type Error = Error;
    fn try_from(f: BarrierFile) -> Result<Self> {
        AffineBarrier::new(DVector::from_vec(f.a), f.b, f.label)
    }
}

impl From<AffineBarrier> for BarrierFile {
    fn from(b: AffineBarrier) -> Self {
        BarrierFile {
            a: b.a.as_slice().to_vec(),
            b: b.b,
            label: b.label,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BarrierSetFile {
    pub gamma: f64,
    pub barriers: Vec<AffineBarrier>,
}

impl TryFrom<BarrierSetFile> for BarrierSet {
    type Error = Error;
    fn try_from(f: BarrierSetFile) -> Result<Self> {
        BarrierSet::new(f.barriers, f.gamma)
    }
}

impl From<BarrierSet> for BarrierSetFile {
    fn from(s: BarrierSet) -> Self {
        BarrierSetFile {
            gamma: s.gamma,
            barriers: s.barriers,
        }
    }
}
