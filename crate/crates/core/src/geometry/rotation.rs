use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Element of SO(3).
///
/// The minimal parameterization used by the optimizer is a left (world-side)
/// tangent perturbation: `R <- exp(delta) * R`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rotation(Rotation3<f64>);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Rotation3::identity())
    }

    /// Builds a rotation from a matrix that is assumed orthonormal with det +1.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(Rotation3::from_matrix_unchecked(m))
    }

    /// Projects an arbitrary 3x3 matrix onto the closest rotation.
    pub fn from_matrix(m: &Matrix3<f64>) -> Result<Self> {
        let svd = m.svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(Error::degenerate("rotation projection: SVD failed")),
        };
        let mut d = Matrix3::identity();
        if (u * v_t).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        Ok(Rotation::from_matrix_unchecked(u * d * v_t))
    }

    /// Rotation about the z axis by `angle` radians (counterclockwise seen from +z).
    pub fn about_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        #[rustfmt::skip]
        let m = Matrix3::new(
            c, -s, 0.0,
            s,  c, 0.0,
            0.0, 0.0, 1.0,
        );
        Rotation::from_matrix_unchecked(m)
    }

    pub fn about_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        #[rustfmt::skip]
        let m = Matrix3::new(
            1.0, 0.0, 0.0,
            0.0, c, -s,
            0.0, s,  c,
        );
        Rotation::from_matrix_unchecked(m)
    }

    pub fn about_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        #[rustfmt::skip]
        let m = Matrix3::new(
             c, 0.0, s,
            0.0, 1.0, 0.0,
            -s, 0.0, c,
        );
        Rotation::from_matrix_unchecked(m)
    }

    /// Exponential map from a rotation vector (axis * angle).
    pub fn exp(v: &Vector3<f64>) -> Self {
        Rotation(Rotation3::new(*v))
    }

    /// Logarithm map; returns the rotation vector with angle in [0, pi].
    pub fn log(&self) -> Vector3<f64> {
        let q = UnitQuaternion::from_rotation_matrix(&self.0);
        let (w, xyz) = (q.w, q.imag());
        let (w, xyz) = if w < 0.0 { (-w, -xyz) } else { (w, xyz) };
        let s = xyz.norm();
        if s < 1e-300 {
            return Vector3::zeros();
        }
        let angle = 2.0 * s.atan2(w);
        xyz * (angle / s)
    }

    pub fn angle(&self) -> f64 {
        self.log().norm()
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        self.0.matrix()
    }

    pub fn transpose_matrix(&self) -> Matrix3<f64> {
        self.0.matrix().transpose()
    }

    /// `self * other`.
    pub fn compose(&self, other: &Rotation) -> Rotation {
        Rotation(self.0 * other.0)
    }

    pub fn inverse(&self) -> Rotation {
        Rotation(self.0.inverse())
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    pub fn inverse_rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0.inverse_transform_vector(v)
    }

    /// Applies a world-side tangent increment: `exp(delta) * self`.
    pub fn perturb_left(&self, delta: &Vector3<f64>) -> Rotation {
        Rotation::exp(delta).compose(self)
    }

    /// Re-projects onto SO(3) to remove drift accumulated by long composition chains.
    ///
    /// Nearest rotation in the Frobenius norm.
    pub fn renormalized(&self) -> Rotation {
        Rotation::from_matrix(self.matrix()).unwrap_or(*self)
    }

    pub fn orthonormality_error(&self) -> f64 {
        let m = self.matrix();
        (m.transpose() * m - Matrix3::identity()).norm()
    }

    /// Unit quaternion as `[w, x, y, z]`.
    pub fn to_quaternion_wxyz(&self) -> [f64; 4] {
        let q = UnitQuaternion::from_rotation_matrix(&self.0);
        let q = if q.w < 0.0 {
            UnitQuaternion::new_unchecked(-q.into_inner())
        } else {
            q
        };
        [q.w, q.i, q.j, q.k]
    }

    /// Builds a rotation from a `[w, x, y, z]` quaternion, normalizing it.
    pub fn from_quaternion_wxyz(q: [f64; 4]) -> Result<Rotation> {
        let quat = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
        let n = quat.norm();
        if !(n >= 1e-6) || !n.is_finite() {
            return Err(Error::validation(format!(
                "quaternion norm {n} cannot be normalized"
            )));
        }
        Ok(Rotation(
            UnitQuaternion::from_quaternion(quat).to_rotation_matrix(),
        ))
    }

    /// Geodesic angle between two rotations in radians.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        self.inverse().compose(other).angle()
    }
}

/// Skew-symmetric cross-product matrix `[v]x`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    #[rustfmt::skip]
    let m = Matrix3::new(
        0.0, -v.z, v.y,
        v.z, 0.0, -v.x,
        -v.y, v.x, 0.0,
    );
    m
}
