//! Rigid transforms parameterized by an axis-angle vector and a translation.

use nalgebra::{Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector3};

/// `x ↦ R(r)·x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub r: Vector3<f64>,
    pub t: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            r: Vector3::zeros(),
            t: Vector3::zeros(),
        }
    }

    pub fn new(r: Vector3<f64>, t: Vector3<f64>) -> Self {
        Self { r, t }.normalized()
    }

    pub fn from_rotation(rot: &Rotation3<f64>, t: Vector3<f64>) -> Self {
        Self {
            r: log_rotation(rot),
            t,
        }
    }

    /// Re-expresses the rotation with `‖r‖ ∈ [0, π]`.
    pub fn normalized(self) -> Self {
        Self::from_rotation(&self.rotation(), self.t)
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_scaled_axis(self.r)
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation().matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.t);
        m
    }

    pub fn transform(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * x + self.t
    }

    pub fn is_finite(&self) -> bool {
        self.r.iter().chain(self.t.iter()).all(|v| v.is_finite())
    }

    /// `M(self ⋆ other) = M(self)·M(other)`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let ra = self.rotation();
        Pose::from_rotation(&(ra * other.rotation()), ra * other.t + self.t)
    }

    pub fn inverse(&self) -> Pose {
        let rinv = self.rotation().inverse();
        Pose::from_rotation(&rinv, -(rinv * self.t))
    }

    /// Center of the frame this pose maps into, expressed in the source frame,
    /// i.e. the camera center for a world-to-camera pose.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation().inverse() * self.t)
    }
}

/// Transform from camera `i` to camera `j` given board-to-camera poses of
/// both cameras at the same capture: `Θ_jk ⋆ Θ_ik⁻¹`.
pub fn relative_pose(theta_jk: &Pose, theta_ik: &Pose) -> Pose {
    theta_jk.compose(&theta_ik.inverse())
}

/// Axis-angle vector of a rotation, accurate near the identity and near π.
pub fn log_rotation(rot: &Rotation3<f64>) -> Vector3<f64> {
    let q = UnitQuaternion::from_rotation_matrix(rot);
    let (w, v) = if q.w < 0.0 { (-q.w, -q.imag()) } else { (q.w, q.imag()) };
    let s = v.norm();
    if s == 0.0 {
        return Vector3::zeros();
    }
    v * (2.0 * s.atan2(w) / s)
}

pub(crate) fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// `∂(R(r)·x)/∂r`.
pub(crate) fn rotate_jacobian(r: &Vector3<f64>, x: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = r.norm_squared();
    let rot = Rotation3::from_scaled_axis(*r);
    if theta2 < 1e-16 {
        // First-order: R x ≈ x + r × x.
        return -skew(&(rot * x));
    }
    let rm = rot.matrix();
    -rm * skew(x) * (r * r.transpose() + (rm.transpose() - Matrix3::identity()) * skew(r)) / theta2
}

/// Chordal L2 mean of rotations, projected back onto SO(3).
pub(crate) fn mean_rotation<'a>(rotations: impl IntoIterator<Item = &'a Rotation3<f64>>) -> Rotation3<f64> {
    let mut sum = Matrix3::zeros();
    for r in rotations {
        sum += r.matrix();
    }
    let svd = sum.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut m = u * v_t;
    if m.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        m = u * v_t;
    }
    Rotation3::from_matrix_unchecked(m)
}
