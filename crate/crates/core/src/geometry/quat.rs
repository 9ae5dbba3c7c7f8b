use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat3 = [[f64; 3]; 3];
pub type Vec3 = [f64; 3];

/// Rotation matrix of `q = (w, x, y, z)` using the polynomial form, which is
/// exact for unit quaternions.
pub fn quat_to_matrix(q: [f64; 4]) -> Mat3 {
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn mat_vec(a: &Mat3, v: &Vec3) -> Vec3 {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

pub fn transpose(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

pub fn determinant(a: &Mat3) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

pub fn rot_x(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

pub fn rot_y(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

/// Unit quaternion `(w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitQuaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn normalized(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !(n.is_finite() && n > 1e-12) {
            return Err(Error::invalid(format!("cannot normalize quaternion ({w}, {x}, {y}, {z})")));
        }
        Ok(Self {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        })
    }

    pub fn from_array(q: [f64; 4]) -> Result<Self> {
        Self::normalized(q[0], q[1], q[2], q[3])
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Result<Self> {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if n < 1e-12 {
            return Err(Error::invalid("zero rotation axis"));
        }
        let (s, c) = (angle / 2.0).sin_cos();
        Self::normalized(c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n)
    }

    /// Quaternion of a proper rotation matrix (Shepperd's method).
    pub fn from_matrix(r: &Mat3) -> Result<Self> {
        let trace = r[0][0] + r[1][1] + r[2][2];
        let (w, x, y, z) = if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            (0.25 * s, (r[2][1] - r[1][2]) / s, (r[0][2] - r[2][0]) / s, (r[1][0] - r[0][1]) / s)
        } else if r[0][0] > r[1][1] && r[0][0] > r[2][2] {
            let s = (1.0 + r[0][0] - r[1][1] - r[2][2]).sqrt() * 2.0;
            ((r[2][1] - r[1][2]) / s, 0.25 * s, (r[0][1] + r[1][0]) / s, (r[0][2] + r[2][0]) / s)
        } else if r[1][1] > r[2][2] {
            let s = (1.0 + r[1][1] - r[0][0] - r[2][2]).sqrt() * 2.0;
            ((r[0][2] - r[2][0]) / s, (r[0][1] + r[1][0]) / s, 0.25 * s, (r[1][2] + r[2][1]) / s)
        } else {
            let s = (1.0 + r[2][2] - r[0][0] - r[1][1]).sqrt() * 2.0;
            ((r[1][0] - r[0][1]) / s, (r[0][2] + r[2][0]) / s, (r[1][2] + r[2][1]) / s, 0.25 * s)
        };
        Ok(Self::normalized(w, x, y, z)?.canonical())
    }

    /// Uniformly distributed rotation (Shoemake's method).
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let u1: f64 = rng.gen();
        let u2: f64 = rng.gen::<f64>() * std::f64::consts::TAU;
        let u3: f64 = rng.gen::<f64>() * std::f64::consts::TAU;
        let a = (1.0 - u1).sqrt();
        let b = u1.sqrt();
        Self {
            w: a * u2.sin(),
            x: a * u2.cos(),
            y: b * u3.sin(),
            z: b * u3.cos(),
        }
        .canonical()
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(&self) -> f64 {
        self.as_array().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Same rotation with `w >= 0`.
    pub fn canonical(self) -> Self {
        if self.w < 0.0 {
            Self {
                w: -self.w,
                x: -self.x,
                y: -self.y,
                z: -self.z,
            }
        } else {
            self
        }
    }

    pub fn to_matrix(&self) -> Mat3 {
        quat_to_matrix(self.as_array())
    }

    /// Hamilton product `self * other` (apply `other` first).
    pub fn compose(&self, other: &UnitQuaternion) -> UnitQuaternion {
        let (a, b) = (self, other);
        UnitQuaternion {
            w: a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            x: a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            y: a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            z: a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        }
    }

    pub fn rotate(&self, p: &Vec3) -> Vec3 {
        mat_vec(&self.to_matrix(), p)
    }
}

/// Rigid placement of a part in camera space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartPose {
    pub rotation: UnitQuaternion,
    pub translation: Vec3,
}

impl PartPose {
    pub const IDENTITY: PartPose = PartPose {
        rotation: UnitQuaternion::IDENTITY,
        translation: [0.0; 3],
    };

    pub fn new(rotation: UnitQuaternion, translation: Vec3) -> Self {
        Self { rotation, translation }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn half_turn_about_z_flips_x() {
        let q = UnitQuaternion::from_array([0.0, 0.0, 0.0, 1.0]).unwrap();
        let p = q.rotate(&[1.0, 0.0, 0.0]);
        assert!((p[0] + 1.0).abs() < 1e-15 && p[1].abs() < 1e-15 && p[2].abs() < 1e-15);
    }

    #[test]
    fn matrix_round_trip_for_random_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let q = UnitQuaternion::random(&mut rng);
            assert!((q.norm() - 1.0).abs() < 1e-12);
            assert!(q.w >= 0.0);
            let r = q.to_matrix();
            assert!((determinant(&r) - 1.0).abs() < 1e-12);
            let back = UnitQuaternion::from_matrix(&r).unwrap();
            for (a, b) in q.as_array().iter().zip(back.as_array()) {
                assert!((a - b).abs() < 1e-9, "{q:?} vs {back:?}");
            }
        }
    }

    #[test]
    fn compose_matches_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = UnitQuaternion::random(&mut rng);
        let b = UnitQuaternion::random(&mut rng);
        let ab = a.compose(&b).to_matrix();
        let prod = mat_mul(&a.to_matrix(), &b.to_matrix());
        for i in 0..3 {
            for j in 0..3 {
                assert!((ab[i][j] - prod[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_quaternion_rejected() {
        assert!(UnitQuaternion::normalized(0.0, 0.0, 0.0, 0.0).is_err());
        assert!(UnitQuaternion::from_axis_angle([0.0; 3], 1.0).is_err());
    }
}
