//! Bob's trusted measurement settings.

use serde::{Deserialize, Serialize};

use crate::bloch::BlochVector;
use crate::error::{Error, Result};

/// Angular uncertainty reported for every tomographically estimated setting.
pub const MEASURED_SIGMA: f64 = 0.0114;

/// Best-estimate Bloch vectors of Bob's three settings (rows are settings).
pub const MEASURED_AXES: [[f64; 3]; 3] = [
    [-0.0502, 0.0419, 0.9978],
    [0.9984, 0.0559, -0.0089],
    [0.1019, 0.9944, -0.0276],
];

/// Worst-case axes for the no-message bound (setting 1 is sign-flipped).
pub const WORST_NO_MESSAGE_AXES: [[f64; 3]; 3] = [
    [0.0913, -0.0024, -0.9958],
    [0.9942, 0.0943, -0.0508],
    [0.1424, 0.9875, -0.0671],
];

/// Worst-case axes for the one-bit bound; setting 1 keeps its best estimate.
pub const WORST_ONE_BIT_AXES: [[f64; 3]; 3] = [
    [-0.0502, 0.0419, 0.9978],
    [0.9936, 0.1127, -0.0104],
    [0.1584, 0.9869, -0.0278],
];

/// `n` unit measurement axes with per-axis angular uncertainties in radians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    axes: Vec<BlochVector>,
    sigmas: Vec<f64>,
}

impl MeasurementSet {
    pub fn new(axes: Vec<BlochVector>, sigmas: Vec<f64>) -> Result<Self> {
        if axes.len() < 2 {
            return Err(Error::invalid(format!("need at least 2 settings, got {}", axes.len())));
        }
        if axes.len() != sigmas.len() {
            return Err(Error::invalid(format!(
                "{} axes but {} uncertainties",
                axes.len(),
                sigmas.len()
            )));
        }
        for (j, a) in axes.iter().enumerate() {
            a.require_unit(&format!("axis {}", j + 1))?;
        }
        if let Some(s) = sigmas.iter().find(|s| !(**s >= 0.0)) {
            return Err(Error::invalid(format!("angular uncertainty must be >= 0, got {s}")));
        }
        Ok(MeasurementSet { axes, sigmas })
    }

    /// Builds a set from rounded (not exactly unit) vectors by normalizing them.
    pub fn from_raw(raw: &[[f64; 3]], sigmas: Vec<f64>) -> Result<Self> {
        let axes = raw
            .iter()
            .map(|v| {
                BlochVector::from_array(*v)
                    .normalized()
                    .ok_or_else(|| Error::invalid("zero-length measurement axis"))
            })
            .collect::<Result<Vec<_>>>()?;
        MeasurementSet::new(axes, sigmas)
    }

    /// Same uncertainty on each axis.
    pub fn uniform(axes: Vec<BlochVector>, sigma: f64) -> Result<Self> {
        let n = axes.len();
        MeasurementSet::new(axes, vec![sigma; n])
    }

    /// Ideal mutually unbiased settings σ_z, σ_x, σ_y.
    pub fn octahedral() -> Self {
        MeasurementSet::uniform(vec![BlochVector::Z, BlochVector::X, BlochVector::Y], 0.0)
            .expect("octahedral axes are valid")
    }

    pub fn measured() -> Self {
        Self::from_raw(&MEASURED_AXES, vec![MEASURED_SIGMA; 3]).expect("tabulated axes are valid")
    }

    pub fn worst_no_message() -> Self {
        Self::from_raw(&WORST_NO_MESSAGE_AXES, vec![MEASURED_SIGMA; 3])
            .expect("tabulated axes are valid")
    }

    pub fn worst_one_bit() -> Self {
        Self::from_raw(&WORST_ONE_BIT_AXES, vec![MEASURED_SIGMA; 3]).expect("tabulated axes are valid")
    }

    /// Named preset: `octahedral`, `measured`, `worst-no-message`, `worst-one-bit`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "octahedral" => Ok(Self::octahedral()),
            "measured" => Ok(Self::measured()),
            "worst-no-message" => Ok(Self::worst_no_message()),
            "worst-one-bit" => Ok(Self::worst_one_bit()),
            other => Err(Error::invalid(format!("unknown measurement preset '{other}'"))),
        }
    }

    pub fn len(&self) -> usize {
        self.axes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.axes.is_empty()
    }

    pub fn axes(&self) -> &[BlochVector] {
        &self.axes
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn with_sigmas(mut self, sigma: f64) -> Self {
        self.sigmas = vec![sigma; self.axes.len()];
        self
    }

    /// Largest deviation of `|b_i·b_j|` from the mutually unbiased value 0.
    pub fn unbiasedness_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.axes.len() {
            for j in i + 1..self.axes.len() {
                worst = worst.max(self.axes[i].dot(self.axes[j]).abs());
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_unit() {
        for name in ["octahedral", "measured", "worst-no-message", "worst-one-bit"] {
            let m = MeasurementSet::preset(name).unwrap();
            assert_eq!(m.len(), 3);
            assert!(m.axes().iter().all(|a| a.is_unit()));
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(MeasurementSet::uniform(vec![BlochVector::Z], 0.0).is_err());
        assert!(MeasurementSet::uniform(vec![BlochVector::Z, BlochVector::X * 0.5], 0.0).is_err());
        assert!(MeasurementSet::new(vec![BlochVector::Z, BlochVector::X], vec![0.0, -1.0]).is_err());
        assert!(MeasurementSet::new(vec![BlochVector::Z, BlochVector::X], vec![0.0]).is_err());
        assert!(MeasurementSet::preset("cube").is_err());
    }

    #[test]
    fn octahedral_is_unbiased() {
        assert_eq!(MeasurementSet::octahedral().unbiasedness_defect(), 0.0);
        assert!(MeasurementSet::measured().unbiasedness_defect() < 0.2);
    }
}
