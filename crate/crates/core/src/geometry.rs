//! Rigid-body primitives: rotations, SE(3) transforms and the alignment
//! error measures used to score a grasp.
//!
//! Rotations are stored as 3x3 matrices. Quaternions only appear at the
//! serialization boundary ([`UnitQuaternion`], [`PoseRepr`]).

use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// Orthonormality drift above which a composed rotation is re-projected
/// onto SO(3).
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-9;

/// A proper rotation (orthonormal, det = +1).
#[derive(Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl fmt::Debug for Rotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = &self.0;
        f.debug_struct("Rotation")
            .field("rows", &[
                [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
                [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
                [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
            ])
            .finish()
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Wraps a matrix without checking it. Callers guarantee it is a rotation.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    /// Accepts `m` if it is orthonormal with det +1 to within 1e-9.
    pub fn try_from_matrix(m: Matrix3<f64>) -> Option<Self> {
        let r = Self(m);
        if r.orthonormality_error() <= ORTHONORMAL_TOLERANCE
            && (m.determinant() - 1.0).abs() <= ORTHONORMAL_TOLERANCE
        {
            Some(r)
        } else {
            None
        }
    }

    /// Rotation of `angle` radians about `axis`. The axis need not be unit
    /// length; a zero axis yields the identity.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        Self::exp(&(axis / n * angle))
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::x(), angle)
    }

    pub fn rot_y(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::y(), angle)
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::z(), angle)
    }

    /// Rodrigues' formula for a rotation vector.
    pub fn exp(v: &Vector3<f64>) -> Self {
        let theta = v.norm();
        let k = skew(v);
        if theta < 1e-8 {
            // second-order Taylor expansion; exact to machine precision here
            return Self(Matrix3::identity() + k + k * k * 0.5);
        }
        let a = theta.sin() / theta;
        let b = (1.0 - theta.cos()) / (theta * theta);
        Self(Matrix3::identity() + k * a + k * k * b)
    }

    /// Rotation vector (axis * angle) with angle in [0, pi].
    pub fn log(&self) -> Vector3<f64> {
        let m = &self.0;
        let w = Vector3::new(
            m[(2, 1)] - m[(1, 2)],
            m[(0, 2)] - m[(2, 0)],
            m[(1, 0)] - m[(0, 1)],
        ) * 0.5;
        let sin_theta = w.norm();
        let cos_theta = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        let theta = sin_theta.atan2(cos_theta);
        if theta < 1e-8 {
            return w;
        }
        if cos_theta > -0.99 {
            return w * (theta / sin_theta);
        }
        // Near pi the skew part vanishes; recover the axis from the
        // symmetric part instead: (R + R^T)/2 = cos I + (1 - cos) a a^T.
        let sym = (m + m.transpose()) * 0.5 - Matrix3::identity() * cos_theta;
        let sym = sym / (1.0 - cos_theta);
        let mut best = 0;
        for i in 1..3 {
            if sym[(i, i)] > sym[(best, best)] {
                best = i;
            }
        }
        let mut axis: Vector3<f64> = sym.column(best).into_owned();
        axis /= axis.norm();
        if axis.dot(&w) < 0.0 {
            axis = -axis;
        }
        axis * theta
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    /// max |(R^T R - I)_ij|
    pub fn orthonormality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).amax()
    }

    /// Nearest rotation in the Frobenius sense (polar factor via SVD).
    pub fn orthonormalized(&self) -> Self {
        let svd = self.0.svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return *self,
        };
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * v_t;
        }
        Self(r)
    }

    pub fn to_quaternion(&self) -> UnitQuaternion {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(self.0);
        let q = nalgebra::UnitQuaternion::from_rotation_matrix(&rot);
        UnitQuaternion::new(q.w, q.i, q.j, q.k)
    }

    pub fn from_quaternion(q: &UnitQuaternion) -> Self {
        let (w, x, y, z) = (q.w, q.x, q.y, q.z);
        Self(Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ))
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vector3<f64>> for Rotation {
    type Output = Vector3<f64>;
    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

impl Mul<&Vector3<f64>> for &Rotation {
    type Output = Vector3<f64>;
    fn mul(self, rhs: &Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Unit quaternion in (w, x, y, z) order, sign-canonicalized so that w >= 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitQuaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl UnitQuaternion {
    /// Normalizes and canonicalizes the sign. A zero quaternion maps to identity.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if n == 0.0 || !n.is_finite() {
            return Self::identity();
        }
        let s = if w < 0.0 { -1.0 / n } else { 1.0 / n };
        Self { w: w * s, x: x * s, y: y * s, z: z * s }
    }

    pub fn identity() -> Self {
        Self { w: 1.0, x: 0.0, y: 0.0, z: 0.0 }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

/// SE(3) element: `p_parent = rotation * p_child + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "PoseRepr", into = "PoseRepr")]
pub struct RigidTransform {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { rotation: Rotation::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Rotation::identity(), Vector3::new(x, y, z))
    }

    pub fn from_rotation(rotation: Rotation) -> Self {
        Self::new(rotation, Vector3::zeros())
    }

    /// `self * other`, re-orthonormalizing the rotation if it has drifted.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let mut rotation = self.rotation * other.rotation;
        if rotation.orthonormality_error() > ORTHONORMAL_TOLERANCE {
            rotation = rotation.orthonormalized();
        }
        RigidTransform {
            rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform { rotation: rt, translation: -(rt * self.translation) }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * *p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * *v
    }

    /// Straight line in translation, shortest-arc slerp in rotation.
    pub fn interpolate(&self, other: &RigidTransform, s: f64) -> RigidTransform {
        if s <= 0.0 {
            return *self;
        }
        if s >= 1.0 {
            return *other;
        }
        let rel = (self.rotation.transpose() * other.rotation).log();
        RigidTransform {
            rotation: self.rotation * Rotation::exp(&(rel * s)),
            translation: self.translation + (other.translation - self.translation) * s,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|v| v.is_finite())
            && self.rotation.matrix().iter().all(|v| v.is_finite())
    }
}

impl Mul for RigidTransform {
    type Output = RigidTransform;
    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.compose(&rhs)
    }
}

impl Mul<&RigidTransform> for &RigidTransform {
    type Output = RigidTransform;
    fn mul(self, rhs: &RigidTransform) -> RigidTransform {
        self.compose(rhs)
    }
}

/// Euclidean distance between desired and achieved positions.
pub fn position_error(p_d: &Vector3<f64>, p_ee: &Vector3<f64>) -> f64 {
    (p_ee - p_d).norm()
}

/// Geodesic angle between two rotations, in [0, pi].
///
/// This is `acos((tr(R_d^T R_ee) - 1) / 2)`, evaluated as
/// `atan2(|sin|, cos)` so that tiny angles keep full precision and the
/// result can never be NaN.
pub fn orientation_error(r_d: &Rotation, r_ee: &Rotation) -> f64 {
    let m = r_d.matrix().transpose() * r_ee.matrix();
    let cos_theta = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let sin_theta = Vector3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    )
    .norm()
        * 0.5;
    sin_theta.atan2(cos_theta)
}

/// Translation (meters) plus unit quaternion (w, x, y, z), w >= 0.
///
/// The one pose encoding used in configuration files, logs and on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRepr {
    #[serde(default)]
    pub translation: [f64; 3],
    #[serde(default = "identity_quaternion_array")]
    pub rotation: [f64; 4],
}

fn identity_quaternion_array() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

impl Default for PoseRepr {
    fn default() -> Self {
        Self { translation: [0.0; 3], rotation: identity_quaternion_array() }
    }
}

impl From<&RigidTransform> for PoseRepr {
    fn from(t: &RigidTransform) -> Self {
        Self {
            translation: [t.translation.x, t.translation.y, t.translation.z],
            rotation: t.rotation.to_quaternion().to_array(),
        }
    }
}

impl From<RigidTransform> for PoseRepr {
    fn from(t: RigidTransform) -> Self {
        (&t).into()
    }
}

impl From<&PoseRepr> for RigidTransform {
    fn from(p: &PoseRepr) -> Self {
        RigidTransform::new(
            Rotation::from_quaternion(&UnitQuaternion::from_array(p.rotation)),
            Vector3::from(p.translation),
        )
    }
}

impl From<PoseRepr> for RigidTransform {
    fn from(p: PoseRepr) -> Self {
        (&p).into()
    }
}
