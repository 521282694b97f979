//! The two benchmark scenarios and their sweep grids.
//!
//! * Rendezvous: Clohessy-Wiltshire-Hill relative motion, two modes that
//!   differ in the target's mean motion.
//! * Mineshaft: hexacopter linearized about hover, three modes (nominal and
//!   two single-rotor failures).
//!
//! Mode 1 is always the nominal mode. Hexacopter physical constants are not
//! part of the published setup; [`HexacopterParams::default`] pins them.

use std::fs;
use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::barrier::{AffineBarrier, BarrierSet};
use crate::error::{Error, Result};
use crate::jmls::{matrix_from_rows, matrix_to_rows, ContinuousModel, JumpLinearModel};
use crate::ocp::OcpSpec;

pub const NOMINAL_MEAN_MOTION: f64 = 0.061;
pub const RENDEZVOUS_DT: f64 = 10.0;
pub const MINESHAFT_DT: f64 = 0.05;

/// Everything needed to run closed-loop episodes of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScenarioFile", into = "ScenarioFile")]
pub struct ScenarioBundle {
    pub name: String,
    pub ocp: OcpSpec,
    pub x0: DVector<f64>,
    pub dt: f64,
    pub duration_s: f64,
    pub episode_steps: usize,
    /// Radius around the reference position counted as arrival.
    pub success_tolerance: f64,
    /// State coordinates that make up the position.
    pub position_coords: Vec<usize>,
}

impl ScenarioBundle {
    pub fn model(&self) -> &JumpLinearModel {
        self.ocp.model()
    }

    pub fn barriers(&self) -> &BarrierSet {
        self.ocp.barriers()
    }

    pub fn x_ref(&self) -> &DVector<f64> {
        self.ocp.x_ref()
    }

    fn validate(&self) -> Result<()> {
        let n = self.model().n_states();
        if self.x0.len() != n {
            return Err(Error::dim("x0", n, self.x0.len()));
        }
        if self.dt.is_nan() || self.dt <= 0.0 {
            return Err(Error::InvalidModel("dt must be positive".into()));
        }
        let expected = self.episode_steps as f64 * self.dt;
        if (expected - self.duration_s).abs() > 1e-9 * self.duration_s.abs().max(1.0) {
            return Err(Error::InvalidModel(format!(
                "{} steps of {} s do not make {} s",
                self.episode_steps, self.dt, self.duration_s
            )));
        }
        if self.position_coords.iter().any(|&c| c >= n) {
            return Err(Error::InvalidModel("position coordinate out of range".into()));
        }
        if self.success_tolerance.is_nan() || self.success_tolerance <= 0.0 {
            return Err(Error::InvalidModel("success tolerance must be positive".into()));
        }
        if self.barriers().min_value(&self.x0) <= 0.0 {
            return Err(Error::InvalidModel("x0 must lie strictly inside the safe set".into()));
        }
        Ok(())
    }

    /// Copy with a different starting state.
    pub fn with_x0(&self, x0: DVector<f64>) -> Result<Self> {
        let bundle = Self { x0, ..self.clone() };
        bundle.validate()?;
        Ok(bundle)
    }

    /// Euclidean distance between the position part of `x` and the reference.
    pub fn position_error(&self, x: &DVector<f64>) -> f64 {
        self.position_coords
            .iter()
            .map(|&c| (x[c] - self.x_ref()[c]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.to_json()?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// On-disk scenario layout. Matrices are row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    pub dt: f64,
    pub duration_s: f64,
    pub episode_steps: usize,
    pub success_tolerance: f64,
    pub position_coords: Vec<usize>,
    pub horizon: usize,
    pub x0: Vec<f64>,
    pub x_ref: Vec<f64>,
    #[serde(rename = "Q")]
    pub state_weight: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub control_weight: Vec<Vec<f64>>,
    pub terminal_weight: Vec<Vec<f64>>,
    pub model: JumpLinearModel,
    pub barriers: BarrierSet,
}

impl TryFrom<ScenarioFile> for ScenarioBundle {
    type Error = Error;
    fn try_from(f: ScenarioFile) -> Result<Self> {
        let (n, m) = (f.model.n_states(), f.model.n_controls());
        let ocp = OcpSpec::with_terminal_weight(
            f.model,
            f.barriers,
            f.horizon,
            matrix_from_rows(&f.state_weight, n, n, "Q")?,
            matrix_from_rows(&f.control_weight, m, m, "R")?,
            DVector::from_vec(f.x_ref),
            matrix_from_rows(&f.terminal_weight, n, n, "terminal_weight")?,
        )?;
        let bundle = ScenarioBundle {
            name: f.name,
            ocp,
            x0: DVector::from_vec(f.x0),
            dt: f.dt,
            duration_s: f.duration_s,
            episode_steps: f.episode_steps,
            success_tolerance: f.success_tolerance,
            position_coords: f.position_coords,
        };
        bundle.validate()?;
        Ok(bundle)
    }
}

impl From<ScenarioBundle> for ScenarioFile {
    fn from(b: ScenarioBundle) -> Self {
        ScenarioFile {
            name: b.name,
            dt: b.dt,
            duration_s: b.duration_s,
            episode_steps: b.episode_steps,
            success_tolerance: b.success_tolerance,
            position_coords: b.position_coords,
            horizon: b.ocp.horizon(),
            x0: b.x0.as_slice().to_vec(),
            x_ref: b.ocp.x_ref().as_slice().to_vec(),
            state_weight: matrix_to_rows(b.ocp.state_weight()),
            control_weight: matrix_to_rows(b.ocp.control_weight()),
            terminal_weight: matrix_to_rows(b.ocp.terminal_weight()),
            model: b.ocp.model().clone(),
            barriers: b.ocp.barriers().clone(),
        }
    }
}

/// Continuous CWH dynamics for mean motion `n` (rad/s); state is relative
/// position then velocity, input is acceleration.
pub fn cwh_continuous(mean_motion: f64) -> ContinuousModel {
    let n = mean_motion;
    let mut a = DMatrix::zeros(6, 6);
    for i in 0..3 {
        a[(i, i + 3)] = 1.0;
    }
    a[(3, 0)] = 3.0 * n * n;
    a[(3, 4)] = 2.0 * n;
    a[(4, 3)] = -2.0 * n;
    a[(5, 2)] = -n * n;
    let mut b = DMatrix::zeros(6, 3);
    for i in 0..3 {
        b[(i + 3, i)] = 1.0;
    }
    ContinuousModel { a, b }
}

fn diag(values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_row_slice(values))
}

fn box_barriers(n: usize, bounds: &[(usize, Option<f64>, Option<f64>)], names: &[&str]) -> Result<Vec<AffineBarrier>> {
    let mut out = Vec::new();
    for (&(coord, lo, hi), name) in bounds.iter().zip(names) {
        if let Some(lo) = lo {
            out.push(AffineBarrier::lower(n, coord, lo, format!("{name}_min"))?);
        }
        if let Some(hi) = hi {
            out.push(AffineBarrier::upper(n, coord, hi, format!("{name}_max"))?);
        }
    }
    Ok(out)
}

/// Two-mode rendezvous: nominal mean motion and `off_nominal`.
pub fn build_rendezvous(off_nominal: f64) -> Result<ScenarioBundle> {
    if !(off_nominal > 0.0 && off_nominal.is_finite()) {
        return Err(Error::InvalidModel(format!(
            "mean motion must be positive, got {off_nominal}"
        )));
    }
    let modes = vec![
        cwh_continuous(NOMINAL_MEAN_MOTION).discretize(RENDEZVOUS_DT)?,
        cwh_continuous(off_nominal).discretize(RENDEZVOUS_DT)?,
    ];
    let model = JumpLinearModel::new(
        modes,
        DMatrix::identity(2, 2),
        DVector::from_element(3, -0.1),
        DVector::from_element(3, 0.1),
    )?;
    let barriers = BarrierSet::new(
        box_barriers(
            6,
            &[
                (0, Some(-6.0), Some(6.0)),
                (1, Some(0.0), Some(4.0)),
                (2, Some(-10.0), Some(10.0)),
            ],
            &["x", "y", "z"],
        )?,
        0.05,
    )?;
    let ocp = OcpSpec::new(
        model,
        barriers,
        30,
        diag(&[50.0, 50.0, 50.0, 0.1, 0.1, 0.1]),
        DMatrix::identity(3, 3) * 0.01,
        DVector::from_row_slice(&[1.0, 1.0, 0.0, 0.0, 0.0, 0.0]),
    )?;
    let bundle = ScenarioBundle {
        name: "rendezvous".into(),
        ocp,
        x0: DVector::from_row_slice(&[0.01, 3.8, 0.0, 0.0, 0.0, 0.0]),
        dt: RENDEZVOUS_DT,
        duration_s: 280.0,
        episode_steps: 28,
        success_tolerance: 0.1,
        position_coords: vec![0, 1, 2],
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Physical constants of the linearized hexacopter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HexacopterParams {
    pub mass: f64,
    pub inertia: [f64; 3],
    pub arm_length: f64,
    /// Yaw torque per unit thrust (m).
    pub torque_ratio: f64,
    pub gravity: f64,
    /// Absolute per-rotor thrust limits (N).
    pub thrust_min: f64,
    pub thrust_max: f64,
    /// Zero-based rotors that may fail; one extra mode each.
    pub failing_rotors: Vec<usize>,
}

impl Default for HexacopterParams {
    fn default() -> Self {
        Self {
            mass: 1.5,
            inertia: [0.03, 0.03, 0.06],
            arm_length: 0.25,
            torque_ratio: 0.016,
            gravity: 9.81,
            thrust_min: 0.1,
            thrust_max: 20.0,
            failing_rotors: vec![0, 1],
        }
    }
}

impl HexacopterParams {
    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity / 6.0
    }

    /// Continuous hover linearization. State: position, velocity,
    /// roll/pitch/yaw, body rates (z up). Input: per-rotor thrust deviation
    /// from hover; rotor `j` sits at 60j degrees, spins alternate.
    pub fn continuous(&self) -> ContinuousModel {
        let g = self.gravity;
        let mut a = DMatrix::zeros(12, 12);
        for i in 0..3 {
            a[(i, i + 3)] = 1.0;
            a[(i + 6, i + 9)] = 1.0;
        }
        a[(3, 7)] = g;
        a[(4, 6)] = -g;

        let mut b = DMatrix::zeros(12, 6);
        for j in 0..6 {
            let angle = (60.0 * j as f64).to_radians();
            let spin = if j % 2 == 0 { 1.0 } else { -1.0 };
            b[(5, j)] = 1.0 / self.mass;
            b[(9, j)] = self.arm_length * angle.sin() / self.inertia[0];
            b[(10, j)] = -self.arm_length * angle.cos() / self.inertia[1];
            b[(11, j)] = spin * self.torque_ratio / self.inertia[2];
        }
        ContinuousModel { a, b }
    }
}

/// Three-mode hexacopter descending a mineshaft from `(x, y, 0)`.
pub fn build_mineshaft(params: &HexacopterParams, initial_xy: [f64; 2]) -> Result<ScenarioBundle> {
    let hover = params.hover_thrust();
    if !(params.thrust_min < hover && hover < params.thrust_max) {
        return Err(Error::InvalidModel(format!(
            "hover thrust {hover} N outside [{}, {}]",
            params.thrust_min, params.thrust_max
        )));
    }
    let nominal = params.continuous().discretize(MINESHAFT_DT)?;
    let mut modes = vec![nominal.clone()];
    for &rotor in &params.failing_rotors {
        if rotor >= 6 {
            return Err(Error::InvalidModel(format!("rotor {rotor} out of range")));
        }
        let mut failed = nominal.clone();
        failed.b.column_mut(rotor).fill(0.0);
        modes.push(failed);
    }
    let n_modes = modes.len();
    let model = JumpLinearModel::new(
        modes,
        DMatrix::identity(n_modes, n_modes),
        DVector::from_element(6, params.thrust_min - hover),
        DVector::from_element(6, params.thrust_max - hover),
    )?;
    let barriers = BarrierSet::new(
        box_barriers(
            12,
            &[
                (0, Some(-1.0), Some(1.0)),
                (1, Some(-1.0), Some(1.0)),
                (2, Some(-6.0), None),
            ],
            &["x", "y", "z"],
        )?,
        0.05,
    )?;
    let mut q = vec![0.1; 12];
    q[..3].fill(50.0);
    let mut x_ref = DVector::zeros(12);
    x_ref[0] = -0.7;
    x_ref[1] = 0.7;
    x_ref[2] = -5.0;
    let ocp = OcpSpec::new(model, barriers, 10, diag(&q), DMatrix::identity(6, 6) * 0.01, x_ref)?;
    let mut x0 = DVector::zeros(12);
    x0[0] = initial_xy[0];
    x0[1] = initial_xy[1];
    let bundle = ScenarioBundle {
        name: "mineshaft".into(),
        ocp,
        x0,
        dt: MINESHAFT_DT,
        duration_s: 4.0,
        episode_steps: 80,
        success_tolerance: 0.25,
        position_coords: vec![0, 1, 2],
    };
    bundle.validate()?;
    Ok(bundle)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioName {
    Rendezvous,
    Mineshaft,
}

impl ScenarioName {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioName::Rendezvous => "rendezvous",
            ScenarioName::Mineshaft => "mineshaft",
        }
    }

    pub fn dt(self) -> f64 {
        match self {
            ScenarioName::Rendezvous => RENDEZVOUS_DT,
            ScenarioName::Mineshaft => MINESHAFT_DT,
        }
    }
}

impl std::str::FromStr for ScenarioName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rendezvous" => Ok(ScenarioName::Rendezvous),
            "mineshaft" => Ok(ScenarioName::Mineshaft),
            other => Err(Error::InvalidGrid(format!("unknown scenario {other:?}"))),
        }
    }
}

/// The scenario parameter a grid sweeps over.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioVariant {
    OffNominalMeanMotion(f64),
    InitialXy([f64; 2]),
}

impl ScenarioVariant {
    pub fn label(&self) -> String {
        match self {
            ScenarioVariant::OffNominalMeanMotion(n) => format!("n_p={n}"),
            ScenarioVariant::InitialXy([x, y]) => format!("xy=({x},{y})"),
        }
    }

    pub fn build(&self, scenario: ScenarioName) -> Result<ScenarioBundle> {
        match (scenario, self) {
            (ScenarioName::Rendezvous, ScenarioVariant::OffNominalMeanMotion(n)) => build_rendezvous(*n),
            (ScenarioName::Mineshaft, ScenarioVariant::InitialXy(xy)) => {
                build_mineshaft(&HexacopterParams::default(), *xy)
            }
            _ => Err(Error::InvalidGrid(format!(
                "variant {} does not apply to {}",
                self.label(),
                scenario.as_str()
            ))),
        }
    }
}

/// Cartesian grid of scenario variant x switch step x detection delay.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub scenario: ScenarioName,
    pub variants: Vec<ScenarioVariant>,
    pub switch_steps: Vec<usize>,
    pub delays: Vec<usize>,
    /// One-based mode the system switches into.
    pub switched_mode: usize,
}

/// One grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub variant_index: usize,
    pub variant: ScenarioVariant,
    pub switch_step: usize,
    pub delay: usize,
}

fn stepped(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    // round to kill accumulated binary noise (0.041 + 3 * 0.01 etc.)
    (0..count)
        .map(|i| ((lo + i as f64 * step) * 1e9).round() / 1e9)
        .collect()
}

impl SweepGrid {
    /// n_p in 0.041..=0.101 step 0.01, switch 1..=40 step 5, delay 0..=5.
    pub fn rendezvous_default() -> Self {
        Self {
            scenario: ScenarioName::Rendezvous,
            variants: stepped(0.041, 0.101, 0.01)
                .into_iter()
                .map(ScenarioVariant::OffNominalMeanMotion)
                .collect(),
            switch_steps: (1..=40).step_by(5).collect(),
            delays: (0..=5).collect(),
            switched_mode: 2,
        }
    }

    /// 3x3 grid of starting positions, switch in {1, 14, 27, 40}, delay in
    /// {0, 2, 4}; rotor 1 fails.
    pub fn mineshaft_default() -> Self {
        let offsets = [-0.5, 0.0, 0.5];
        let variants = offsets
            .iter()
            .flat_map(|&x| offsets.iter().map(move |&y| ScenarioVariant::InitialXy([x, y])))
            .collect();
        Self {
            scenario: ScenarioName::Mineshaft,
            variants,
            switch_steps: (1..=40).step_by(13).collect(),
            delays: (0..=4).step_by(2).collect(),
            switched_mode: 2,
        }
    }

    pub fn default_for(scenario: ScenarioName) -> Self {
        match scenario {
            ScenarioName::Rendezvous => Self::rendezvous_default(),
            ScenarioName::Mineshaft => Self::mineshaft_default(),
        }
    }

    pub fn len(&self) -> usize {
        self.variants.len() * self.switch_steps.len() * self.delays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cells in canonical order: variant, then switch step, then delay.
    pub fn cells(&self) -> Vec<GridCell> {
        let mut out = Vec::with_capacity(self.len());
        for (variant_index, &variant) in self.variants.iter().enumerate() {
            for &switch_step in &self.switch_steps {
                for &delay in &self.delays {
                    out.push(GridCell {
                        variant_index,
                        variant,
                        switch_step,
                        delay,
                    });
                }
            }
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: GridFile = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        file.into_grid()
    }
}

/// Grid file: either step counts or times in seconds for switches and
/// delays. Seconds are rounded to the nearest control step.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    pub scenario: ScenarioName,
    pub variants: Vec<ScenarioVariant>,
    #[serde(default)]
    pub switch_steps: Option<Vec<usize>>,
    #[serde(default)]
    pub switch_times_s: Option<Vec<f64>>,
    #[serde(default)]
    pub delays: Option<Vec<usize>>,
    #[serde(default)]
    pub delay_times_s: Option<Vec<f64>>,
    #[serde(default)]
    pub switched_mode: Option<usize>,
}

fn seconds_to_steps(times: &[f64], dt: f64, what: &str) -> Result<Vec<usize>> {
    times
        .iter()
        .map(|&t| {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::InvalidGrid(format!("{what} time {t} must be non-negative")));
            }
            let steps = (t / dt).round();
            if (steps * dt - t).abs() > 1e-9 {
                warn!("{what} time {t} s is not a multiple of dt={dt} s; using {steps} steps");
            }
            Ok(steps as usize)
        })
        .collect()
}

impl GridFile {
    pub fn into_grid(self) -> Result<SweepGrid> {
        let dt = self.scenario.dt();
        let switch_steps = match (self.switch_steps, self.switch_times_s) {
            (Some(steps), None) => steps,
            (None, Some(times)) => seconds_to_steps(&times, dt, "switch")?,
            _ => {
                return Err(Error::InvalidGrid(
                    "give exactly one of switch_steps / switch_times_s".into(),
                ))
            }
        };
        let delays = match (self.delays, self.delay_times_s) {
            (Some(steps), None) => steps,
            (None, Some(times)) => seconds_to_steps(&times, dt, "delay")?,
            _ => return Err(Error::InvalidGrid("give exactly one of delays / delay_times_s".into())),
        };
        if switch_steps.contains(&0) {
            return Err(Error::InvalidGrid("switch steps start at 1".into()));
        }
        let grid = SweepGrid {
            scenario: self.scenario,
            variants: self.variants,
            switch_steps,
            delays,
            switched_mode: self.switched_mode.unwrap_or(2),
        };
        if grid.is_empty() {
            return Err(Error::InvalidGrid("grid has no cells".into()));
        }
        for v in &grid.variants {
            v.build(grid.scenario)?;
        }
        Ok(grid)
    }
}
