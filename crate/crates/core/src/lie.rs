//! SO(3) and SE₂(3) operations in matrix form.
//!
//! An extended pose bundles rotation, velocity and position and embeds as
//!
//! ```text
//! | R  v  p |
//! | 0  1  0 |
//! | 0  0  1 |
//! ```
//!
//! Tangent vectors are stacked `[ξ_R, ξ_v, ξ_p]`. The exponential is the exact
//! closed form (left Jacobian of SO(3) applied to the translational parts); the
//! first-order `I + ξ^∧` form only appears in the filter linearization.
//!
//! `so3_log` sign convention at an angle of exactly π: the axis is extracted
//! from the largest diagonal entry of `(R + I)/2` and oriented so that its
//! largest-magnitude component is positive, e.g. a half turn about z maps to
//! `(0, 0, π)`.

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix5, SMatrix, SVector, Vector3};
use thiserror::Error;

pub type Vector9 = SVector<f64, 9>;
pub type Matrix9 = SMatrix<f64, 9, 9>;

/// Below this angle exp/log/Jacobians switch to Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-8;
/// Tolerance used when validating rotation matrices.
pub const ORTHONORMAL_TOL: f64 = 1e-9;
const NEAR_PI: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LieError {
    #[error("matrix is not orthonormal (max |RᵀR - I| = {0:e})")]
    NotOrthonormal(f64),
    #[error("matrix has determinant {0}, expected +1")]
    NotProperRotation(f64),
    #[error("5x5 matrix is not an SE2(3) embedding")]
    InvalidEmbedding,
    #[error("non-finite input")]
    NonFinite,
}

/// Cross-product matrix: `skew(v) * w == v.cross(&w)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`skew`]; reads the antisymmetric part only.
pub fn unskew(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Rodrigues exponential.
pub fn so3_exp(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < SMALL_ANGLE {
        return Matrix3::identity() + k + 0.5 * k * k;
    }
    let a = theta.sin() / theta;
    Matrix3::identity() + a * k + one_minus_cos_over_sq(theta) * k * k
}

/// `(1 - cos θ) / θ²` via the half-angle form, free of cancellation.
fn one_minus_cos_over_sq(theta: f64) -> f64 {
    let s = (0.5 * theta).sin() / theta;
    2.0 * s * s
}

/// Below this angle the cubic Jacobian coefficients use their series.
const SERIES_ANGLE: f64 = 1e-2;

/// Principal logarithm, `‖result‖ ≤ π`. Rejects matrices that are not rotations.
pub fn so3_log(m: &Matrix3<f64>) -> Result<Vector3<f64>, LieError> {
    check_rotation(m)?;
    Ok(so3_log_unchecked(m))
}

fn check_rotation(m: &Matrix3<f64>) -> Result<(), LieError> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(LieError::NonFinite);
    }
    let dev = (m.transpose() * m - Matrix3::identity()).amax();
    if dev > ORTHONORMAL_TOL {
        return Err(LieError::NotOrthonormal(dev));
    }
    let det = m.determinant();
    if (det - 1.0).abs() > ORTHONORMAL_TOL {
        return Err(LieError::NotProperRotation(det));
    }
    Ok(())
}

fn so3_log_unchecked(m: &Matrix3<f64>) -> Vector3<f64> {
    // w = 2 sin(θ) a
    let w = Vector3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    );
    let cos = (0.5 * (m.trace() - 1.0)).clamp(-1.0, 1.0);
    let sin = 0.5 * w.norm();
    let theta = sin.atan2(cos);
    if theta < SMALL_ANGLE {
        return 0.5 * w;
    }
    if PI - theta < NEAR_PI {
        let s = 0.5 * (m + m.transpose());
        let aat = (s - Matrix3::identity() * cos) / (1.0 - cos);
        let k = (0..3)
            .max_by(|&i, &j| aat[(i, i)].total_cmp(&aat[(j, j)]))
            .unwrap_or(0);
        let mut axis: Vector3<f64> = aat.column(k).into_owned();
        axis /= axis.norm();
        let along = w.dot(&axis);
        if along.abs() > 1e-12 {
            if along < 0.0 {
                axis = -axis;
            }
        } else {
            let big = axis.iamax();
            if axis[big] < 0.0 {
                axis = -axis;
            }
        }
        return theta * axis;
    }
    (theta / (2.0 * sin)) * w
}

/// Left Jacobian of SO(3).
pub fn so3_left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < SMALL_ANGLE {
        return Matrix3::identity() + 0.5 * k + k * k / 6.0;
    }
    let t2 = theta * theta;
    let c = if theta < SERIES_ANGLE {
        1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    } else {
        (theta - theta.sin()) / (t2 * theta)
    };
    Matrix3::identity() + one_minus_cos_over_sq(theta) * k + c * k * k
}

pub fn so3_left_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    if theta < SMALL_ANGLE {
        return Matrix3::identity() - 0.5 * k + k * k / 12.0;
    }
    let t2 = theta * theta;
    let c = if theta < SERIES_ANGLE {
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    } else {
        let half = 0.5 * theta;
        1.0 / t2 - (half.cos() / half.sin()) / (2.0 * theta)
    };
    Matrix3::identity() - 0.5 * k + c * k * k
}

/// A validated rotation matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, LieError> {
        check_rotation(&m)?;
        Ok(Rotation(m))
    }

    /// Caller guarantees orthonormality (products of rotations, closed forms).
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    pub fn exp(phi: &Vector3<f64>) -> Self {
        Rotation(so3_exp(phi))
    }

    pub fn log(&self) -> Vector3<f64> {
        so3_log_unchecked(&self.0)
    }

    /// Intrinsic Z-Y-X (yaw, pitch, roll) composition.
    pub fn from_euler(roll: f64, pitch: f64, yaw: f64) -> Self {
        let rz = so3_exp(&Vector3::new(0.0, 0.0, yaw));
        let ry = so3_exp(&Vector3::new(0.0, pitch, 0.0));
        let rx = so3_exp(&Vector3::new(roll, 0.0, 0.0));
        Rotation(rz * ry * rx)
    }

    /// `(roll, pitch, yaw)` for the Z-Y-X convention of [`Rotation::from_euler`].
    pub fn euler(&self) -> (f64, f64, f64) {
        let m = &self.0;
        let pitch = (-m[(2, 0)]).clamp(-1.0, 1.0).asin();
        let roll = m[(2, 1)].atan2(m[(2, 2)]);
        let yaw = m[(1, 0)].atan2(m[(0, 0)]);
        (roll, pitch, yaw)
    }

    pub fn yaw(&self) -> f64 {
        self.0[(1, 0)].atan2(self.0[(0, 0)])
    }

    /// Geodesic angle to the identity, in radians.
    pub fn angle(&self) -> f64 {
        self.log().norm()
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn transform(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    pub fn inverse_transform(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0.tr_mul(v)
    }

    /// Projects back onto SO(3) via SVD to remove accumulated round-off.
    pub fn renormalized(&self) -> Self {
        let svd = self.0.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut r = u * vt;
        if r.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * vt;
        }
        Rotation(r)
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

/// Element of the tangent space of SE₂(3), stacked `[ξ_R, ξ_v, ξ_p]`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct TangentXi {
    pub rot: Vector3<f64>,
    pub vel: Vector3<f64>,
    pub pos: Vector3<f64>,
}

impl TangentXi {
    pub fn zeros() -> Self {
        Self::default()
    }

    pub fn from_vector(v: &Vector9) -> Self {
        TangentXi {
            rot: v.fixed_rows::<3>(0).into_owned(),
            vel: v.fixed_rows::<3>(3).into_owned(),
            pos: v.fixed_rows::<3>(6).into_owned(),
        }
    }

    pub fn to_vector(&self) -> Vector9 {
        let mut out = Vector9::zeros();
        out.fixed_rows_mut::<3>(0).copy_from(&self.rot);
        out.fixed_rows_mut::<3>(3).copy_from(&self.vel);
        out.fixed_rows_mut::<3>(6).copy_from(&self.pos);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|x| x.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }

    /// Lie-algebra matrix `ξ^∧`.
    pub fn hat(&self) -> Matrix5<f64> {
        let mut m = Matrix5::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&self.rot));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.vel);
        m.fixed_view_mut::<3, 1>(0, 4).copy_from(&self.pos);
        m
    }

    /// Inverse of [`TangentXi::hat`]; ignores the bottom two rows.
    pub fn vee(m: &Matrix5<f64>) -> Self {
        TangentXi {
            rot: unskew(&m.fixed_view::<3, 3>(0, 0).into_owned()),
            vel: m.fixed_view::<3, 1>(0, 3).into_owned(),
            pos: m.fixed_view::<3, 1>(0, 4).into_owned(),
        }
    }
}

/// Rotation, world-frame velocity and position of the body.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct ExtendedPose {
    pub rotation: Rotation,
    pub velocity: Vector3<f64>,
    pub position: Vector3<f64>,
}

impl ExtendedPose {
    pub fn new(rotation: Rotation, velocity: Vector3<f64>, position: Vector3<f64>) -> Self {
        ExtendedPose { rotation, velocity, position }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn to_matrix(&self) -> Matrix5<f64> {
        let mut m = Matrix5::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.velocity);
        m.fixed_view_mut::<3, 1>(0, 4).copy_from(&self.position);
        m
    }

    pub fn from_matrix(m: &Matrix5<f64>) -> Result<Self, LieError> {
        let bottom = m.fixed_view::<2, 5>(3, 0);
        let expected = Matrix5::<f64>::identity().fixed_view::<2, 5>(3, 0).into_owned();
        if (bottom - expected).amax() > ORTHONORMAL_TOL {
            return Err(LieError::InvalidEmbedding);
        }
        let rotation = Rotation::from_matrix(m.fixed_view::<3, 3>(0, 0).into_owned())?;
        Ok(ExtendedPose {
            rotation,
            velocity: m.fixed_view::<3, 1>(0, 3).into_owned(),
            position: m.fixed_view::<3, 1>(0, 4).into_owned(),
        })
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.inverse();
        ExtendedPose {
            rotation: rt,
            velocity: -rt.transform(&self.velocity),
            position: -rt.transform(&self.position),
        }
    }

    pub fn compose(&self, rhs: &ExtendedPose) -> ExtendedPose {
        ExtendedPose {
            rotation: self.rotation * rhs.rotation,
            velocity: self.rotation.transform(&rhs.velocity) + self.velocity,
            position: self.rotation.transform(&rhs.position) + self.position,
        }
    }

    pub fn adjoint(&self) -> Matrix9 {
        adjoint_se23(self)
    }
}

impl Mul for ExtendedPose {
    type Output = ExtendedPose;
    fn mul(self, rhs: ExtendedPose) -> ExtendedPose {
        self.compose(&rhs)
    }
}

/// Exact SE₂(3) exponential.
pub fn se23_exp(xi: &TangentXi) -> ExtendedPose {
    let jl = so3_left_jacobian(&xi.rot);
    ExtendedPose {
        rotation: Rotation::exp(&xi.rot),
        velocity: jl * xi.vel,
        position: jl * xi.pos,
    }
}

/// Exact SE₂(3) logarithm (principal branch of the rotation part).
pub fn se23_log(x: &ExtendedPose) -> TangentXi {
    let rot = x.rotation.log();
    let jinv = so3_left_jacobian_inv(&rot);
    TangentXi {
        rot,
        vel: jinv * x.velocity,
        pos: jinv * x.position,
    }
}

/// `[[R,0,0],[v×R,R,0],[p×R,0,R]]`
pub fn adjoint_se23(x: &ExtendedPose) -> Matrix9 {
    let r = x.rotation.matrix();
    let mut ad = Matrix9::zeros();
    for k in 0..3 {
        ad.fixed_view_mut::<3, 3>(3 * k, 3 * k).copy_from(r);
    }
    ad.fixed_view_mut::<3, 3>(3, 0).copy_from(&(skew(&x.velocity) * r));
    ad.fixed_view_mut::<3, 3>(6, 0).copy_from(&(skew(&x.position) * r));
    ad
}

/// Right-invariant error `η = X̂ X⁻¹`, returned as its exact logarithm.
pub fn right_invariant_error(estimate: &ExtendedPose, truth: &ExtendedPose) -> TangentXi {
    se23_log(&error_group(estimate, truth))
}

/// `η = X̂ X⁻¹` on the group.
pub fn error_group(estimate: &ExtendedPose, truth: &ExtendedPose) -> ExtendedPose {
    let rr = estimate.rotation.matrix() * truth.rotation.matrix().transpose();
    ExtendedPose {
        rotation: Rotation::from_matrix_unchecked(rr),
        velocity: estimate.velocity - rr * truth.velocity,
        position: estimate.position - rr * truth.position,
    }
}
