//! Oracle hybrid estimator.
//!
//! The true mode switches once, at `switch_step`. The estimator reports the
//! true continuous state and a one-hot belief that keeps pointing at the
//! initial mode for `detection_delay` further steps. All times are control
//! steps; a switch at step `s` governs the transition from `x_s` to
//! `x_{s+1}`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jmls::ModeBelief;

/// Scripted switch. Mode indices are zero-based here and one-based on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "ScheduleFile", into = "ScheduleFile")]
pub struct OracleSchedule {
    initial_mode: usize,
    switched_mode: usize,
    switch_step: usize,
    detection_delay: usize,
}

impl OracleSchedule {
    pub fn new(initial_mode: usize, switched_mode: usize, switch_step: usize, detection_delay: usize) -> Result<Self> {
        if initial_mode == switched_mode {
            return Err(Error::InvalidSchedule("initial and switched mode must differ".into()));
        }
        if switch_step == 0 {
            return Err(Error::InvalidSchedule("switch step must be at least 1".into()));
        }
        Ok(Self {
            initial_mode,
            switched_mode,
            switch_step,
            detection_delay,
        })
    }

    pub fn validate_for(&self, n_modes: usize) -> Result<()> {
        if self.initial_mode >= n_modes || self.switched_mode >= n_modes {
            return Err(Error::InvalidSchedule(format!(
                "modes {} and {} must lie in 1..={n_modes}",
                self.initial_mode + 1,
                self.switched_mode + 1
            )));
        }
        Ok(())
    }

    pub fn initial_mode(&self) -> usize {
        self.initial_mode
    }

    pub fn switched_mode(&self) -> usize {
        self.switched_mode
    }

    pub fn switch_step(&self) -> usize {
        self.switch_step
    }

    pub fn detection_delay(&self) -> usize {
        self.detection_delay
    }

    /// First step at which the belief reflects the switch.
    pub fn detection_step(&self) -> usize {
        self.switch_step + self.detection_delay
    }

    pub fn true_mode(&self, t: usize) -> usize {
        if t < self.switch_step {
            self.initial_mode
        } else {
            self.switched_mode
        }
    }

    pub fn believed_mode(&self, t: usize) -> usize {
        if t < self.detection_step() {
            self.initial_mode
        } else {
            self.switched_mode
        }
    }

    pub fn estimate(&self, n_modes: usize, t: usize, x_true: &DVector<f64>) -> Result<HybridEstimate> {
        self.validate_for(n_modes)?;
        Ok(HybridEstimate {
            x_hat: x_true.clone(),
            mu_hat: ModeBelief::one_hot(n_modes, self.believed_mode(t))?,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleFile {
    pub initial_mode: usize,
    pub switched_mode: usize,
    pub switch_step: usize,
    pub detection_delay: usize,
}

impl TryFrom<ScheduleFile> for OracleSchedule {
    type Error = Error;
    fn try_from(f: ScheduleFile) -> Result<Self> {
        if f.initial_mode == 0 || f.switched_mode == 0 {
            return Err(Error::InvalidSchedule("mode indices are 1-based".into()));
        }
        OracleSchedule::new(
            f.initial_mode - 1,
            f.switched_mode - 1,
            f.switch_step,
            f.detection_delay,
        )
    }
}

impl From<OracleSchedule> for ScheduleFile {
    fn from(s: OracleSchedule) -> Self {
        ScheduleFile {
            initial_mode: s.initial_mode + 1,
            switched_mode: s.switched_mode + 1,
            switch_step: s.switch_step,
            detection_delay: s.detection_delay,
        }
    }
}

/// Mean continuous state and categorical mode belief.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridEstimate {
    pub x_hat: DVector<f64>,
    pub mu_hat: ModeBelief,
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;
    use proptest::prelude::*;

    #[test]
    fn switch_boundary() {
        let s = OracleSchedule::new(0, 1, 9, 3).unwrap();
        assert_eq!(s.true_mode(8), 0);
        assert_eq!(s.true_mode(9), 1);
    }

    #[test]
    fn undetected_window() {
        let s = OracleSchedule::new(0, 1, 9, 3).unwrap();
        let x = dvector![1.0, 2.0];
        let est = s.estimate(2, 10, &x).unwrap();
        assert_eq!(s.true_mode(10), 1);
        assert_eq!(est.mu_hat.argmax(), 0);
        assert_eq!(est.x_hat, x);
        assert_eq!(s.estimate(2, 11, &x).unwrap().mu_hat.argmax(), 0);
        assert_eq!(s.estimate(2, 12, &x).unwrap().mu_hat.argmax(), 1);
        assert_eq!(s.estimate(2, 3, &x).unwrap().mu_hat.argmax(), 0);
    }

    #[test]
    fn zero_delay_tracks_truth() {
        let s = OracleSchedule::new(1, 0, 4, 0).unwrap();
        for t in 0..20 {
            assert_eq!(s.believed_mode(t), s.true_mode(t));
        }
    }

    #[test]
    fn invalid_schedules() {
        assert!(OracleSchedule::new(0, 0, 3, 0).is_err());
        assert!(OracleSchedule::new(0, 1, 0, 0).is_err());
        let s = OracleSchedule::new(0, 2, 3, 0).unwrap();
        assert!(s.validate_for(2).is_err());
        assert!(s.estimate(2, 0, &dvector![0.0]).is_err());
    }

    #[test]
    fn file_form_is_one_based() {
        let s = OracleSchedule::new(0, 1, 4, 1).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(
            json,
            r#"{"initial_mode":1,"switched_mode":2,"switch_step":4,"detection_delay":1}"#
        );
        assert_eq!(serde_json::from_str::<OracleSchedule>(&json).unwrap(), s);
        assert!(serde_json::from_str::<OracleSchedule>(
            r#"{"initial_mode":0,"switched_mode":2,"switch_step":4,"detection_delay":1}"#
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn window_length_equals_delay(switch in 1usize..60, delay in 0usize..12, m in 2usize..5) {
            let s = OracleSchedule::new(0, m - 1, switch, delay).unwrap();
            let x = dvector![0.0];
            let mut window = 0;
            for t in 0..(switch + delay + 10) {
                let est = s.estimate(m, t, &x).unwrap();
                prop_assert!(est.mu_hat.is_one_hot());
                prop_assert_eq!(&est.x_hat, &x);
                if est.mu_hat.argmax() != s.true_mode(t) {
                    window += 1;
                }
            }
            prop_assert_eq!(window, delay);
        }
    }
}
