//! Waveplate and Pockels-cell polarization optics as Bloch rotations.
//!
//! A retarder with fast axis at physical angle `t` (degrees from horizontal)
//! rotates the Bloch vector about `(sin 2t, 0, −cos 2t)`, the linear
//! polarization at angle `t`, by its retardance: 180° for a half-wave plate and
//! 90° for a quarter-wave plate. The sense is right-handed for light travelling
//! forward and left-handed for light traced backward from a detector. The
//! Pockels cell is a variable retarder about the `|D⟩/|A⟩` axis whose phase is
//! `0`, `+θ` or `−θ` for settings 1, 2 and 3.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::{BlochVector, Rotation};
use crate::error::{Error, Result};

/// Default Pockels-cell phase in degrees.
pub const DEFAULT_POCKELS_PHASE_DEG: f64 = 120.0;

/// Waveplate angles (HWP, QWP, QWP, HWP) of Bob's switchable measurement,
/// source side first; the Pockels cell sits between the two quarter-wave plates.
pub const BOB_QUOTED_ANGLES_DEG: [f64; 4] = [-24.94, 62.62, -27.38, -24.94];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageKind {
    HalfWave,
    QuarterWave,
    Pockels,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// Light travels from the source toward the detector.
    Forward,
    /// A detector eigenstate is traced back toward the source.
    Backward,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpticalStage {
    pub kind: StageKind,
    /// Fast-axis angle in degrees for waveplates, phase magnitude θ for the
    /// Pockels cell.
    pub angle_deg: f64,
    /// Retardance error in waves (waveplates only).
    #[serde(default)]
    pub retardance_error_waves: f64,
}

impl OpticalStage {
    pub fn half_wave(angle_deg: f64) -> Self {
        OpticalStage { kind: StageKind::HalfWave, angle_deg, retardance_error_waves: 0.0 }
    }

    pub fn quarter_wave(angle_deg: f64) -> Self {
        OpticalStage { kind: StageKind::QuarterWave, angle_deg, retardance_error_waves: 0.0 }
    }

    pub fn pockels(phase_deg: f64) -> Self {
        OpticalStage { kind: StageKind::Pockels, angle_deg: phase_deg, retardance_error_waves: 0.0 }
    }

    pub fn with_retardance_error(mut self, waves: f64) -> Self {
        self.retardance_error_waves = waves;
        self
    }

    /// Rotation applied by this stage to forward-travelling light.
    fn forward_rotation(&self, setting: usize, pockels_axis: BlochVector) -> Result<Rotation> {
        match self.kind {
            StageKind::HalfWave | StageKind::QuarterWave => {
                let waves = if self.kind == StageKind::HalfWave { 0.5 } else { 0.25 };
                let retardance = TAU * (waves + self.retardance_error_waves);
                Rotation::about(waveplate_axis(self.angle_deg), retardance)
            }
            StageKind::Pockels => {
                let phase = match setting {
                    1 => 0.0,
                    2 => self.angle_deg,
                    3 => -self.angle_deg,
                    s => return Err(Error::invalid(format!("setting must be 1..=3, got {s}"))),
                };
                Rotation::about(pockels_axis, phase.to_radians())
            }
        }
    }
}

/// Bloch axis of a linear retarder whose fast axis sits at `angle_deg`.
pub fn waveplate_axis(angle_deg: f64) -> BlochVector {
    let (s, c) = (2.0 * angle_deg.to_radians()).sin_cos();
    BlochVector::new(s, 0.0, -c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpticalPipeline {
    /// Stages in the order forward-travelling light meets them.
    pub stages: Vec<OpticalStage>,
    pub direction: Direction,
    /// Rotation axis of the Pockels cell (nominally `|A⟩ = (−1,0,0)`).
    pub pockels_axis: BlochVector,
}

/// Result of fixing the Pockels-cell axis reference from target mappings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PockelsCalibration {
    pub axis: BlochVector,
    /// Angle between the calibrated axis and the nominal `|A⟩` axis, degrees.
    pub tilt_deg: f64,
    /// Worst mapping error before calibration.
    pub residual_before: f64,
    /// Worst mapping error after calibration.
    pub residual_after: f64,
}

impl OpticalPipeline {
    pub fn new(stages: Vec<OpticalStage>, direction: Direction) -> Self {
        OpticalPipeline { stages, direction, pockels_axis: -BlochVector::X }
    }

    /// Bob's switchable measurement with the waveplate angles as quoted to
    /// two decimals: HWP −24.94°, QWP 62.62°, Pockels cell, QWP −27.38°,
    /// HWP −24.94° (source side first), traced backward from the `+` detector.
    pub fn bob_measurement() -> Self {
        let [h1, q1, q2, h2] = BOB_QUOTED_ANGLES_DEG;
        Self::bob_with_angles(h1, q1, q2, h2)
    }

    /// Same layout with the closed-form angles that make the three mappings
    /// exact for the nominal Pockels axis: the quarter-wave plate sits at
    /// `−½·atan√2` and the half-wave plate at half of that minus 11.25°.
    pub fn bob_measurement_exact() -> Self {
        let q = -0.5 * 2f64.sqrt().atan().to_degrees();
        let h = 0.5 * q - 11.25;
        Self::bob_with_angles(h, q + 90.0, q, h)
    }

    fn bob_with_angles(h_source: f64, q_source: f64, q_detector: f64, h_detector: f64) -> Self {
        OpticalPipeline::new(
            vec![
                OpticalStage::half_wave(h_source),
                OpticalStage::quarter_wave(q_source),
                OpticalStage::pockels(DEFAULT_POCKELS_PHASE_DEG),
                OpticalStage::quarter_wave(q_detector),
                OpticalStage::half_wave(h_detector),
            ],
            Direction::Backward,
        )
    }

    pub fn with_direction(mut self, direction: Direction) -> Self {
        self.direction = direction;
        self
    }

    /// Net rotation for a Pockels setting in `1..=3`.
    pub fn rotation(&self, setting: usize) -> Result<Rotation> {
        if !(1..=3).contains(&setting) {
            return Err(Error::invalid(format!("setting must be 1..=3, got {setting}")));
        }
        let mut total = Rotation::IDENTITY;
        match self.direction {
            Direction::Forward => {
                for stage in &self.stages {
                    total = stage.forward_rotation(setting, self.pockels_axis)?.after(&total);
                }
            }
            Direction::Backward => {
                for stage in self.stages.iter().rev() {
                    let r = stage.forward_rotation(setting, self.pockels_axis)?.inverse();
                    total = r.after(&total);
                }
            }
        }
        Ok(total)
    }

    pub fn propagate(&self, state: BlochVector, setting: usize) -> Result<BlochVector> {
        if !state.is_state() {
            return Err(Error::invalid(format!("state {state} lies outside the Bloch ball")));
        }
        Ok(self.rotation(setting)?.apply(state))
    }

    /// Worst distance between `propagate(input, s)` and `targets[s-1]`.
    pub fn mapping_residual(&self, input: BlochVector, targets: [BlochVector; 3]) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (i, target) in targets.iter().enumerate() {
            worst = worst.max(self.propagate(input, i + 1)?.distance(*target));
        }
        Ok(worst)
    }

    /// Chooses the Pockels-cell axis reference so that backward propagation
    /// of `input` reproduces `targets` for settings 1, 2, 3.
    ///
    /// The waveplates around the cell are left untouched, so setting 1 must
    /// already map correctly. The axis is the normal of the plane through
    /// the three pre-images of the targets at the cell.
    pub fn calibrate_pockels_axis(
        &mut self,
        input: BlochVector,
        targets: [BlochVector; 3],
    ) -> Result<PockelsCalibration> {
        if self.direction != Direction::Backward {
            return Err(Error::invalid("calibration is defined for backward propagation"));
        }
        let cells: Vec<usize> = self
            .stages
            .iter()
            .enumerate()
            .filter(|(_, s)| s.kind == StageKind::Pockels)
            .map(|(i, _)| i)
            .collect();
        let &[cell] = cells.as_slice() else {
            return Err(Error::invalid("calibration needs exactly one Pockels cell"));
        };
        let residual_before = self.mapping_residual(input, targets)?;

        // Backward: detector-side stages act on `input` first, then the cell,
        // then the source-side stages. Undo the source side on each target.
        let detector_side = OpticalPipeline {
            stages: self.stages[cell + 1..].to_vec(),
            ..self.clone()
        };
        let source_side = OpticalPipeline {
            stages: self.stages[..cell].to_vec(),
            direction: Direction::Forward,
            ..self.clone()
        };
        let at_cell = detector_side.propagate(input, 1)?;
        let pre: Vec<BlochVector> = targets
            .iter()
            .map(|t| source_side.propagate(*t, 1))
            .collect::<Result<_>>()?;
        if at_cell.distance(pre[0]) > 1e-9 {
            return Err(Error::DegenerateGeometry(
                "setting 1 does not map onto its target; the cell axis cannot fix this".into(),
            ));
        }
        let normal = (pre[1] - pre[0]).cross(pre[2] - pre[0]).normalized().ok_or_else(|| {
            Error::DegenerateGeometry("target pre-images are collinear".into())
        })?;

        let mut best: Option<(f64, BlochVector)> = None;
        for candidate in [normal, -normal] {
            let trial = OpticalPipeline { pockels_axis: candidate, ..self.clone() };
            let r = trial.mapping_residual(input, targets)?;
            if best.is_none_or(|(b, _)| r < b) {
                best = Some((r, candidate));
            }
        }
        let (residual_after, axis) = best.expect("two candidates evaluated");
        self.pockels_axis = axis;
        Ok(PockelsCalibration {
            axis,
            tilt_deg: axis.angle_to(-BlochVector::X).to_degrees(),
            residual_before,
            residual_after,
        })
    }
}

/// Polarizer output used for probe-state preparation: `|H⟩`.
pub const POLARIZER_OUTPUT: BlochVector = BlochVector::new(0.0, 0.0, -1.0);

/// Half-wave then quarter-wave plate after a horizontal polarizer.
pub fn preparation_pipeline(hwp_deg: f64, qwp_deg: f64) -> OpticalPipeline {
    OpticalPipeline::new(
        vec![OpticalStage::half_wave(hwp_deg), OpticalStage::quarter_wave(qwp_deg)],
        Direction::Forward,
    )
}

/// Target Bloch vectors of settings 1, 2, 3: `|V⟩`, `|D⟩`, `|L⟩`.
pub const BOB_TARGETS: [BlochVector; 3] = [BlochVector::Z, BlochVector::X, BlochVector::Y];
