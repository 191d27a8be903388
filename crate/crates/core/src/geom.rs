//! Rotation/pose algebra and the error-state conventions shared by every
//! other module.
//!
//! Conventions, fixed project-wide:
//!
//! * Quaternions are Hamilton quaternions stored in [`nalgebra::UnitQuaternion`]
//!   and constructed scalar-first (`w, x, y, z`). A rotation maps body-frame
//!   (odometer) vectors into the parent/global frame.
//! * The attitude error `δθ` is multiplicative on the right:
//!   `R = R̂ (I + ⌊δθ⌋)`, i.e. the perturbation lives in the body frame.
//!   All Jacobians in the crate follow this convention.
//! * Compositions re-normalize through the quaternion, never Gram-Schmidt,
//!   so results are deterministic.
//!
//! `apply_attitude_error` / `attitude_error` form an exact inverse pair: the
//! error is applied as the unit quaternion `[1, δθ/2]/‖·‖` and recovered as
//! `2·vec(q)/w`, which agrees with `R̂·exp(⌊δθ⌋)` to second order.

use nalgebra::{Matrix3, Quaternion, SVector, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// Attitude error angle vector `δθ` (radians), body frame, right-multiplicative.
pub type AttitudeError = Vector3<f64>;

/// 6-vector tangent of a pose: `[δθ (3); δp (3)]`.
pub type PoseTangent = SVector<f64, 6>;

/// Skew-symmetric matrix of `v`, so that `skew(v) * w == v × w`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// A 3D rotation held as a unit quaternion, normalized after every operation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(UnitQuaternion<f64>);

impl Default for Rotation {
    fn default() -> Self {
        Rotation::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation(UnitQuaternion::identity())
    }

    /// From scalar-first quaternion components; renormalizes.
    pub fn from_quaternion_wxyz(w: f64, x: f64, y: f64, z: f64) -> Self {
        Rotation(UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)))
    }

    /// Rotation about `axis` by `angle` radians.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let axis = nalgebra::Unit::new_normalize(*axis);
        Rotation(UnitQuaternion::from_axis_angle(&axis, angle))
    }

    /// Exponential of a rotation vector (axis * angle).
    pub fn from_scaled_axis(v: Vector3<f64>) -> Self {
        Rotation(UnitQuaternion::from_scaled_axis(v))
    }

    /// Planar rotation about +z.
    pub fn from_yaw(yaw: f64) -> Self {
        Rotation::from_scaled_axis(Vector3::new(0.0, 0.0, yaw))
    }

    pub fn unit_quaternion(&self) -> UnitQuaternion<f64> {
        self.0
    }

    /// Scalar-first components `[w, x, y, z]`.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.0.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        self.0.to_rotation_matrix().into_inner()
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

    /// Composition `self ∘ rhs`; renormalized.
    pub fn compose(&self, rhs: &Rotation) -> Rotation {
        Rotation(UnitQuaternion::new_normalize((self.0 * rhs.0).into_inner()))
    }

    /// Rotation vector of `self` (logarithm, axis * angle).
    pub fn scaled_axis(&self) -> Vector3<f64> {
        self.0.scaled_axis()
    }

    /// Rotation angle in radians.
    pub fn angle(&self) -> f64 {
        self.0.angle()
    }

    /// Applies a right-multiplicative attitude error: the rotation closest to
    /// `R̂ (I + ⌊δθ⌋)`, realized as `q̂ ⊗ [1, δθ/2]/‖·‖`.
    pub fn apply_attitude_error(&self, delta: &AttitudeError) -> Rotation {
        let dq = Quaternion::new(1.0, 0.5 * delta.x, 0.5 * delta.y, 0.5 * delta.z);
        Rotation(UnitQuaternion::new_normalize(self.0.into_inner() * dq))
    }

    /// Recovers `δθ` such that `reference.apply_attitude_error(δθ) == self`,
    /// exactly inverting [`Rotation::apply_attitude_error`].
    pub fn attitude_error(&self, reference: &Rotation) -> AttitudeError {
        let mut q = (reference.0.inverse() * self.0).into_inner();
        if q.w < 0.0 {
            q = -q;
        }
        2.0 * q.imag() / q.w
    }

    /// Frobenius distance between the rotation matrices.
    pub fn frobenius_distance(&self, other: &Rotation) -> f64 {
        (self.matrix() - other.matrix()).norm()
    }
}

/// Free-function form of [`Rotation::apply_attitude_error`].
pub fn apply_attitude_error(r_hat: &Rotation, delta: &AttitudeError) -> Rotation {
    r_hat.apply_attitude_error(delta)
}

/// Free-function form of [`Rotation::attitude_error`].
pub fn extract_attitude_error(r_hat: &Rotation, r: &Rotation) -> AttitudeError {
    r.attitude_error(r_hat)
}

/// Right Jacobian of SO(3): `exp((φ + δ)) ≈ exp(φ) exp(J_r(φ) δ)`.
pub fn so3_right_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let s = skew(phi);
    if theta2 < 1e-14 {
        return Matrix3::identity() - 0.5 * s + s * s / 6.0;
    }
    let theta = theta2.sqrt();
    Matrix3::identity() - (1.0 - theta.cos()) / theta2 * s
        + (theta - theta.sin()) / (theta2 * theta) * (s * s)
}

/// Jacobians of the quaternion attitude error `e(q) = 2·vec(q_e)/w(q_e)`.
///
/// With `q_e = q_b⁻¹ ⊗ q_a` these give the exact first-order sensitivities of
/// `attitude_error(a, b)` to right perturbations of `a` and `b`, used by the
/// factor linearizations so that analytic Jacobians match finite differences
/// of the implemented (not idealized) residuals.
pub struct AttitudeErrorJacobians {
    pub wrt_a: Matrix3<f64>,
    pub wrt_b: Matrix3<f64>,
}

/// Sensitivity of `e = 2 v/w` of `q_e` to a right body-frame perturbation of
/// the operand indicated, given the current `q_e`.
pub fn attitude_error_jacobians(a: &Rotation, b: &Rotation) -> AttitudeErrorJacobians {
    let mut q = (b.0.inverse() * a.0).into_inner();
    if q.w < 0.0 {
        q = -q;
    }
    let w = q.w;
    let v = q.imag();
    let sv = skew(&v);
    // d e / d u for q_e ⊗ [1, u/2]  (perturbation on a)
    let wrt_a = ((w * Matrix3::identity() + sv) * w + v * v.transpose()) / (w * w);
    // For a perturbation u on b the error quaternion becomes [1,-u/2] ⊗ q_e
    // conjugated into place; the closed form is:
    let r_e = Rotation(UnitQuaternion::from_quaternion(q)).matrix();
    // q_e' = [1, -u/2] applied on the left of q_e, then expressed as a right
    // perturbation: q_e ⊗ [1, -(R_eᵀ u)/2].
    let wrt_b = -wrt_a * r_e.transpose();
    AttitudeErrorJacobians { wrt_a, wrt_b }
}

/// Rigid pose of the odometer frame in the global frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub rotation: Rotation,
    pub position: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose::default()
    }

    pub fn new(rotation: Rotation, position: Vector3<f64>) -> Self {
        Pose { rotation, position }
    }

    /// `self ∘ rhs`: first apply `rhs` in the local frame, then `self`.
    pub fn compose(&self, rhs: &Pose) -> Pose {
        Pose {
            rotation: self.rotation.compose(&rhs.rotation),
            position: self.position + self.rotation.rotate(&rhs.position),
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv_rot = self.rotation.inverse();
        Pose {
            rotation: inv_rot,
            position: -inv_rot.rotate(&self.position),
        }
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) + self.position
    }
}

/// `a ⊟ b = [attitude error of a w.r.t. b; position difference]`.
pub fn boxminus(a: &Pose, b: &Pose) -> PoseTangent {
    let dtheta = a.rotation.attitude_error(&b.rotation);
    let dp = a.position - b.position;
    let mut out = PoseTangent::zeros();
    out.fixed_rows_mut::<3>(0).copy_from(&dtheta);
    out.fixed_rows_mut::<3>(3).copy_from(&dp);
    out
}

/// `b ⊞ delta`, the exact inverse of [`boxminus`] in its first argument.
pub fn boxplus(b: &Pose, delta: &PoseTangent) -> Pose {
    let dtheta = Vector3::new(delta[0], delta[1], delta[2]);
    let dp = Vector3::new(delta[3], delta[4], delta[5]);
    Pose {
        rotation: b.rotation.apply_attitude_error(&dtheta),
        position: b.position + dp,
    }
}

/// Serializable pose: scalar-first quaternion plus position.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PoseRecord {
    pub quat_wxyz: [f64; 4],
    pub position: [f64; 3],
}

impl From<&Pose> for PoseRecord {
    fn from(p: &Pose) -> Self {
        PoseRecord {
            quat_wxyz: p.rotation.wxyz(),
            position: [p.position.x, p.position.y, p.position.z],
        }
    }
}

impl From<&PoseRecord> for Pose {
    fn from(r: &PoseRecord) -> Self {
        let [w, x, y, z] = r.quat_wxyz;
        Pose {
            rotation: Rotation::from_quaternion_wxyz(w, x, y, z),
            position: Vector3::new(r.position[0], r.position[1], r.position[2]),
        }
    }
}
