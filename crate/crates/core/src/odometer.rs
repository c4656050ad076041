//! Wheel-odometer velocity measurements.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::filter::{idx, invariant_update, ErrorCovariance, FilterError, FilterState};
use crate::lie::{skew, Rotation};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdomSample {
    /// Velocity in the odometer frame, m/s.
    pub velocity: Vector3<f64>,
    pub timestamp: f64,
}

/// Odometer-to-IMU extrinsics and measurement noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdomExtrinsics {
    pub rotation: Rotation,
    pub lever_arm: Vector3<f64>,
    pub noise: Matrix3<f64>,
}

impl OdomExtrinsics {
    pub fn identity(sigma: f64) -> Self {
        OdomExtrinsics {
            rotation: Rotation::identity(),
            lever_arm: Vector3::zeros(),
            noise: Matrix3::identity() * sigma * sigma,
        }
    }
}

/// Body-frame velocity and covariance of an odometer reading.
///
/// `gyro_noise` and `gyro_bias_noise` enter only through the lever arm.
pub fn transform_odom(
    sample: &OdomSample,
    ext: &OdomExtrinsics,
    gyro: &Vector3<f64>,
    bias_gyro: &Vector3<f64>,
    gyro_noise: &Matrix3<f64>,
    gyro_bias_noise: &Matrix3<f64>,
) -> (Vector3<f64>, Matrix3<f64>) {
    let r = ext.rotation.matrix();
    let t = skew(&ext.lever_arm);
    let velocity = r * sample.velocity + t * (gyro - bias_gyro);
    let cov = r * ext.noise * r.transpose() + t * (gyro_noise + gyro_bias_noise) * t.transpose();
    (velocity, cov)
}

/// Velocity observation `ᵇṽ = R̂ᵀ v̂`, applied in the world frame:
/// `z = R̂ ᵇṽ - v̂ ≈ -ξ_v`, `H = [0 I 0 0 0]`, `N = R̂ Σ_o R̂ᵀ`.
pub fn apply_odom_update(
    state: &FilterState,
    cov: &ErrorCovariance,
    velocity_b: &Vector3<f64>,
    noise_b: &Matrix3<f64>,
) -> Result<(FilterState, ErrorCovariance), FilterError> {
    let r = state.pose.rotation.matrix();
    let z = r * velocity_b - state.pose.velocity;
    let n = r * noise_b * r.transpose();
    let mut h = DMatrix::zeros(3, 15);
    h.view_mut((0, idx::VEL), (3, 3)).fill_with_identity();
    invariant_update(
        state,
        cov,
        &h,
        &DVector::from_column_slice(z.as_slice()),
        &DMatrix::from_column_slice(3, 3, n.as_slice()),
    )
}
