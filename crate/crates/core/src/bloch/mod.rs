//! Bloch-sphere geometry.
//!
//! States and ±1 projective measurements of a qubit are both represented by
//! real 3-vectors. Under the polarization mapping used throughout the crate,
//! `|V⟩ = (0,0,1)`, `|D⟩ = (1,0,0)` and `|L⟩ = (0,1,0)`.

pub mod optics;

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Allowed norm excess for a state vector.
pub const STATE_NORM_TOL: f64 = 1e-12;
/// Allowed deviation from unit norm for a measurement axis.
pub const AXIS_NORM_TOL: f64 = 1e-9;
/// Sums shorter than this have no defined direction.
pub const ZERO_NORM: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BlochVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl BlochVector {
    pub const X: BlochVector = BlochVector::new(1.0, 0.0, 0.0);
    pub const Y: BlochVector = BlochVector::new(0.0, 1.0, 0.0);
    pub const Z: BlochVector = BlochVector::new(0.0, 0.0, 1.0);
    pub const ZERO: BlochVector = BlochVector::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        BlochVector { x, y, z }
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        BlochVector::new(v[0], v[1], v[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, other: BlochVector) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, other: BlochVector) -> BlochVector {
        BlochVector::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Unit vector along `self`, or `None` for a (numerically) zero vector.
    pub fn normalized(self) -> Option<BlochVector> {
        let n = self.norm();
        (n >= ZERO_NORM).then(|| self * (1.0 / n))
    }

    pub fn is_unit(self) -> bool {
        (self.norm() - 1.0).abs() <= AXIS_NORM_TOL
    }

    pub fn is_state(self) -> bool {
        self.norm() <= 1.0 + STATE_NORM_TOL
    }

    /// Angle in radians between two non-zero vectors, in `[0, π]`.
    pub fn angle_to(self, other: BlochVector) -> f64 {
        self.cross(other).norm().atan2(self.dot(other))
    }

    pub fn distance(self, other: BlochVector) -> f64 {
        (self - other).norm()
    }

    pub(crate) fn require_unit(self, what: &str) -> Result<()> {
        if self.is_unit() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "{what} must be a unit vector (norm {})",
                self.norm()
            )))
        }
    }
}

impl fmt::Display for BlochVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.6}, {:.6}, {:.6})", self.x, self.y, self.z)
    }
}

impl Add for BlochVector {
    type Output = BlochVector;
    fn add(self, o: BlochVector) -> BlochVector {
        BlochVector::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for BlochVector {
    fn add_assign(&mut self, o: BlochVector) {
        *self = *self + o;
    }
}

impl Sub for BlochVector {
    type Output = BlochVector;
    fn sub(self, o: BlochVector) -> BlochVector {
        BlochVector::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for BlochVector {
    type Output = BlochVector;
    fn neg(self) -> BlochVector {
        BlochVector::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for BlochVector {
    type Output = BlochVector;
    fn mul(self, s: f64) -> BlochVector {
        BlochVector::new(self.x * s, self.y * s, self.z * s)
    }
}

impl std::iter::Sum for BlochVector {
    fn sum<I: Iterator<Item = BlochVector>>(iter: I) -> Self {
        iter.fold(BlochVector::ZERO, Add::add)
    }
}

/// Proper rotation of the Bloch sphere stored as a row-major 3×3 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation {
    m: [[f64; 3]; 3],
}

impl Rotation {
    pub const IDENTITY: Rotation = Rotation {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    /// Right-handed rotation by `angle` radians about the unit vector `axis`.
    pub fn about(axis: BlochVector, angle: f64) -> Result<Rotation> {
        axis.require_unit("rotation axis")?;
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        let BlochVector { x, y, z } = axis;
        Ok(Rotation {
            m: [
                [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
                [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
                [z * x * t - y * s, z * y * t + x * s, c + z * z * t],
            ],
        })
    }

    pub fn apply(&self, v: BlochVector) -> BlochVector {
        let m = &self.m;
        BlochVector::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    /// `self ∘ first`: applies `first`, then `self`.
    pub fn after(&self, first: &Rotation) -> Rotation {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.m[i][k] * first.m[k][j]).sum();
            }
        }
        Rotation { m: out }
    }

    pub fn inverse(&self) -> Rotation {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = self.m[j][i];
            }
        }
        Rotation { m: out }
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Largest entry of `|RᵀR − I|`.
    pub fn orthogonality_defect(&self) -> f64 {
        let p = self.inverse().after(self);
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((p.m[i][j] - target).abs());
            }
        }
        worst
    }

    pub fn matrix(&self) -> [[f64; 3]; 3] {
        self.m
    }
}

/// Rotates `v` about the unit `axis` by `angle` radians (right-hand rule).
pub fn rodrigues_rotate(v: BlochVector, axis: BlochVector, angle: f64) -> Result<BlochVector> {
    axis.require_unit("rotation axis")?;
    let (s, c) = angle.sin_cos();
    Ok(v * c + axis.cross(v) * s + axis * (axis.dot(v) * (1.0 - c)))
}

/// Rotates unit `v` toward unit `target` in their common plane by `angle`,
/// stopping at `target` rather than overshooting it.
pub fn rotate_toward(v: BlochVector, target: BlochVector, angle: f64) -> Result<BlochVector> {
    v.require_unit("rotated vector")?;
    target.require_unit("rotation target")?;
    if !(angle >= 0.0) {
        return Err(Error::invalid(format!("rotation angle must be >= 0, got {angle}")));
    }
    let separation = v.angle_to(target);
    if separation == 0.0 {
        return Ok(v);
    }
    if angle >= separation {
        return Ok(target);
    }
    let axis = v.cross(target).normalized().ok_or_else(|| {
        Error::DegenerateGeometry(format!(
            "vector {v} is antiparallel to target {target}; rotation plane undefined"
        ))
    })?;
    rodrigues_rotate(v, axis, angle)
}

/// Largest eigenvalue of `Σ c_j b_j·σ` and its eigenvector's Bloch direction.
///
/// For traceless qubit observables the spectrum is `±|Σ c_j b_j|`, so this is
/// the length of the weighted vector sum. The direction is `None` when the sum
/// vanishes.
pub fn max_eigen_sum<I>(terms: I) -> (f64, Option<BlochVector>)
where
    I: IntoIterator<Item = (f64, BlochVector)>,
{
    let sum: BlochVector = terms.into_iter().map(|(c, b)| b * c).sum();
    let value = sum.norm();
    if value < ZERO_NORM {
        (value, None)
    } else {
        (value, Some(sum * (1.0 / value)))
    }
}
