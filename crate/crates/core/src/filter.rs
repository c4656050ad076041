//! Right-invariant EKF on SE₂(3) with additive IMU biases.
//!
//! The error state is `[ξ_R, ξ_v, ξ_p, ζ_ω, ζ_a]` where `exp(ξ) = X̂ X⁻¹` and
//! `ζ = b̂ - b`. Measurements are linearized as `z = -H [ξ; ζ] + n`; the
//! correction `δ = K z` therefore estimates `-[ξ; ζ]` and is applied as
//! `X⁺ = exp(δ_ξ) X̂`, `b⁺ = b̂ + δ_ζ`.

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, SVector, Vector3};
use thiserror::Error;

use crate::lie::{adjoint_se23, se23_exp, skew, ExtendedPose, Rotation, TangentXi, Vector9};
use crate::linalg::{eigen_range, expm, min_eigenvalue, symmetrize};

pub type Vector15 = SVector<f64, 15>;
pub type Matrix15 = SMatrix<f64, 15, 15>;

/// Offsets of the error-state blocks.
pub mod idx {
    pub const ROT: usize = 0;
    pub const VEL: usize = 3;
    pub const POS: usize = 6;
    pub const BIAS_GYRO: usize = 9;
    pub const BIAS_ACCEL: usize = 12;
}

pub const MAX_DT: f64 = 0.1;
pub const MAX_CONDITION: f64 = 1e12;
const SYMMETRY_TOL: f64 = 1e-9;
const PSD_TOL: f64 = -1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("time step must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("time step {0} s exceeds the {MAX_DT} s sanity bound")]
    DtTooLarge(f64),
    #[error("IMU sample contains non-finite values")]
    NonFiniteImu,
    #[error("measurement contains non-finite values")]
    NonFiniteMeasurement,
    #[error("measurement dimensions disagree: H is {h_rows}x{h_cols}, z has {z_len}, N is {n_rows}x{n_cols}")]
    DimensionMismatch { h_rows: usize, h_cols: usize, z_len: usize, n_rows: usize, n_cols: usize },
    #[error("innovation covariance is singular (condition number {0:e})")]
    SingularInnovation(f64),
    #[error("covariance is not symmetric positive semi-definite")]
    InvalidCovariance,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterState {
    pub pose: ExtendedPose,
    pub bias_gyro: Vector3<f64>,
    pub bias_accel: Vector3<f64>,
    pub timestamp: f64,
}

impl FilterState {
    pub fn new(pose: ExtendedPose, timestamp: f64) -> Self {
        FilterState {
            pose,
            bias_gyro: Vector3::zeros(),
            bias_accel: Vector3::zeros(),
            timestamp,
        }
    }

    pub fn rotation(&self) -> &Rotation {
        &self.pose.rotation
    }

    pub fn position(&self) -> &Vector3<f64> {
        &self.pose.position
    }

    pub fn velocity(&self) -> &Vector3<f64> {
        &self.pose.velocity
    }
}

/// Symmetric PSD covariance of the 15-dimensional error state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorCovariance(Matrix15);

impl ErrorCovariance {
    pub fn new(m: Matrix15) -> Result<Self, FilterError> {
        if m.iter().any(|x| !x.is_finite()) || (m - m.transpose()).amax() > SYMMETRY_TOL {
            return Err(FilterError::InvalidCovariance);
        }
        let m = symmetrize(&m);
        if min_eigenvalue(&m) < PSD_TOL {
            return Err(FilterError::InvalidCovariance);
        }
        Ok(ErrorCovariance(m))
    }

    /// Block-diagonal covariance from per-block standard deviations.
    pub fn from_std(rot: f64, vel: f64, pos: f64, bias_gyro: f64, bias_accel: f64) -> Self {
        let mut d = Vector15::zeros();
        for (block, s) in [rot, vel, pos, bias_gyro, bias_accel].into_iter().enumerate() {
            d.fixed_rows_mut::<3>(3 * block).fill(s * s);
        }
        ErrorCovariance(Matrix15::from_diagonal(&d))
    }

    pub fn from_diagonal(d: &Vector15) -> Self {
        ErrorCovariance(Matrix15::from_diagonal(d))
    }

    pub(crate) fn from_matrix_unchecked(m: Matrix15) -> Self {
        ErrorCovariance(symmetrize(&m))
    }

    pub fn matrix(&self) -> &Matrix15 {
        &self.0
    }

    pub fn block3(&self, row: usize, col: usize) -> Matrix3<f64> {
        self.0.fixed_view::<3, 3>(row, col).into_owned()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample {
    /// Angular rate, rad/s.
    pub gyro: Vector3<f64>,
    /// Specific force, m/s².
    pub accel: Vector3<f64>,
    pub timestamp: f64,
}

impl ImuSample {
    pub fn is_finite(&self) -> bool {
        self.gyro.iter().chain(self.accel.iter()).all(|x| x.is_finite()) && self.timestamp.is_finite()
    }
}

/// Continuous-time noise densities and the gravity vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseConfig {
    pub gyro: Matrix3<f64>,
    pub accel: Matrix3<f64>,
    pub gyro_bias: Matrix3<f64>,
    pub accel_bias: Matrix3<f64>,
    pub gravity: Vector3<f64>,
}

pub const STANDARD_GRAVITY: f64 = 9.81;

impl NoiseConfig {
    /// Isotropic densities given as standard deviations (per √Hz).
    pub fn isotropic(gyro: f64, accel: f64, gyro_bias: f64, accel_bias: f64) -> Self {
        NoiseConfig {
            gyro: Matrix3::identity() * gyro * gyro,
            accel: Matrix3::identity() * accel * accel,
            gyro_bias: Matrix3::identity() * gyro_bias * gyro_bias,
            accel_bias: Matrix3::identity() * accel_bias * accel_bias,
            gravity: Vector3::new(0.0, 0.0, -STANDARD_GRAVITY),
        }
    }

    /// `Q = blockdiag(Σ_ω, Σ_a, 0, Σ_bω, Σ_ba)`.
    pub fn process_covariance(&self) -> Matrix15 {
        let mut q = Matrix15::zeros();
        q.fixed_view_mut::<3, 3>(idx::ROT, idx::ROT).copy_from(&self.gyro);
        q.fixed_view_mut::<3, 3>(idx::VEL, idx::VEL).copy_from(&self.accel);
        q.fixed_view_mut::<3, 3>(idx::BIAS_GYRO, idx::BIAS_GYRO).copy_from(&self.gyro_bias);
        q.fixed_view_mut::<3, 3>(idx::BIAS_ACCEL, idx::BIAS_ACCEL).copy_from(&self.accel_bias);
        q
    }
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig::isotropic(0.005, 0.05, 1e-5, 1e-4)
    }
}

/// How the state transition matrix `Φ` is formed from `A Δt`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionMethod {
    #[default]
    MatrixExponential,
    /// `Φ ≈ I + A Δt`
    FirstOrder,
}

/// Linearized continuous error dynamics `A_t`.
pub fn build_error_dynamics(state: &FilterState, gravity: &Vector3<f64>) -> Matrix15 {
    let r = state.pose.rotation.matrix();
    let mut a = Matrix15::zeros();
    a.fixed_view_mut::<3, 3>(idx::ROT, idx::BIAS_GYRO).copy_from(&(-r));
    a.fixed_view_mut::<3, 3>(idx::VEL, idx::ROT).copy_from(&skew(gravity));
    a.fixed_view_mut::<3, 3>(idx::VEL, idx::BIAS_GYRO)
        .copy_from(&(-skew(&state.pose.velocity) * r));
    a.fixed_view_mut::<3, 3>(idx::VEL, idx::BIAS_ACCEL).copy_from(&(-r));
    a.fixed_view_mut::<3, 3>(idx::POS, idx::VEL).copy_from(&Matrix3::identity());
    a.fixed_view_mut::<3, 3>(idx::POS, idx::BIAS_GYRO)
        .copy_from(&(-skew(&state.pose.position) * r));
    a
}

/// `blockdiag(Ad_X̂, I₆)`, mapping IMU noise into the error state.
pub fn noise_adjoint(state: &FilterState) -> Matrix15 {
    let mut ad = Matrix15::identity();
    ad.fixed_view_mut::<9, 9>(0, 0).copy_from(&adjoint_se23(&state.pose));
    ad
}

pub fn propagate(
    state: &FilterState,
    cov: &ErrorCovariance,
    imu: &ImuSample,
    dt: f64,
    noise: &NoiseConfig,
) -> Result<(FilterState, ErrorCovariance), FilterError> {
    propagate_with(state, cov, imu, dt, noise, TransitionMethod::MatrixExponential)
}

pub fn propagate_with(
    state: &FilterState,
    cov: &ErrorCovariance,
    imu: &ImuSample,
    dt: f64,
    noise: &NoiseConfig,
    method: TransitionMethod,
) -> Result<(FilterState, ErrorCovariance), FilterError> {
    if !(dt > 0.0) {
        return Err(FilterError::NonPositiveDt(dt));
    }
    if dt > MAX_DT {
        return Err(FilterError::DtTooLarge(dt));
    }
    if !imu.is_finite() {
        return Err(FilterError::NonFiniteImu);
    }

    let pose = &state.pose;
    let omega = imu.gyro - state.bias_gyro;
    let accel_world = pose.rotation.transform(&(imu.accel - state.bias_accel)) + noise.gravity;
    let next_pose = ExtendedPose {
        rotation: pose.rotation * Rotation::exp(&(omega * dt)),
        velocity: pose.velocity + accel_world * dt,
        position: pose.position + pose.velocity * dt + 0.5 * accel_world * dt * dt,
    };

    let a_dt = build_error_dynamics(state, &noise.gravity) * dt;
    let phi = match method {
        TransitionMethod::MatrixExponential => expm(&a_dt),
        TransitionMethod::FirstOrder => Matrix15::identity() + a_dt,
    };
    let ad = noise_adjoint(state);
    let injected = ad * noise.process_covariance() * ad.transpose() * dt;
    let p = phi * (cov.matrix() + injected) * phi.transpose();

    let next = FilterState {
        pose: next_pose,
        bias_gyro: state.bias_gyro,
        bias_accel: state.bias_accel,
        timestamp: state.timestamp + dt,
    };
    Ok((next, ErrorCovariance::from_matrix_unchecked(p)))
}

fn check_dimensions(h: &DMatrix<f64>, z: &DVector<f64>, n: &DMatrix<f64>) -> Result<(), FilterError> {
    let k_rows = h.nrows();
    if h.ncols() != 15 || z.len() != k_rows || n.nrows() != k_rows || n.ncols() != k_rows {
        return Err(FilterError::DimensionMismatch {
            h_rows: h.nrows(),
            h_cols: h.ncols(),
            z_len: z.len(),
            n_rows: n.nrows(),
            n_cols: n.ncols(),
        });
    }
    if h.iter().chain(z.iter()).chain(n.iter()).any(|x| !x.is_finite()) {
        return Err(FilterError::NonFiniteMeasurement);
    }
    Ok(())
}

/// `K = P Hᵀ S⁻¹`, refusing ill-conditioned innovations.
fn kalman_gain(p: &DMatrix<f64>, h: &DMatrix<f64>, n: &DMatrix<f64>) -> Result<DMatrix<f64>, FilterError> {
    let hp = h * p;
    let s = &hp * h.transpose() + n;
    let s = (&s + s.transpose()) * 0.5;
    let (lo, hi) = eigen_range(&s);
    if !(lo > 0.0) || hi / lo > MAX_CONDITION {
        let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        return Err(FilterError::SingularInnovation(cond));
    }
    let chol = s.cholesky().ok_or(FilterError::SingularInnovation(f64::INFINITY))?;
    // K = P Hᵀ S⁻¹ = (S⁻¹ H P)ᵀ
    Ok(chol.solve(&hp).transpose())
}

/// `exp(δ₁..₉) X̂` with additive bias corrections.
fn apply_correction(state: &FilterState, delta: &DVector<f64>) -> FilterState {
    let correction = Vector15::from_column_slice(delta.as_slice());
    let xi = TangentXi::from_vector(&Vector9::from_column_slice(&correction.as_slice()[..9]));
    FilterState {
        pose: se23_exp(&xi).compose(&state.pose),
        bias_gyro: state.bias_gyro + correction.fixed_rows::<3>(idx::BIAS_GYRO),
        bias_accel: state.bias_accel + correction.fixed_rows::<3>(idx::BIAS_ACCEL),
        timestamp: state.timestamp,
    }
}

fn joseph(p: &DMatrix<f64>, gain: &DMatrix<f64>, h: &DMatrix<f64>, n: &DMatrix<f64>) -> ErrorCovariance {
    let ikh = DMatrix::<f64>::identity(15, 15) - gain * h;
    let post = &ikh * p * ikh.transpose() + gain * n * gain.transpose();
    ErrorCovariance::from_matrix_unchecked(Matrix15::from_column_slice(post.as_slice()))
}

/// Joseph-form Kalman update under the `z = -H[ξ; ζ] + n` convention.
pub fn invariant_update(
    state: &FilterState,
    cov: &ErrorCovariance,
    h: &DMatrix<f64>,
    z: &DVector<f64>,
    n: &DMatrix<f64>,
) -> Result<(FilterState, ErrorCovariance), FilterError> {
    check_dimensions(h, z, n)?;
    if h.nrows() == 0 {
        return Ok((*state, *cov));
    }
    let p = DMatrix::from_column_slice(15, 15, cov.matrix().as_slice());
    let gain = kalman_gain(&p, h, n)?;
    Ok((apply_correction(state, &(&gain * z)), joseph(&p, &gain, h, n)))
}

/// Stacked `[ξ; ζ]` error of an estimate against the truth.
pub fn state_error(estimate: &FilterState, truth_pose: &ExtendedPose, truth_bias_gyro: &Vector3<f64>, truth_bias_accel: &Vector3<f64>) -> Vector15 {
    let xi = crate::lie::right_invariant_error(&estimate.pose, truth_pose).to_vector();
    let mut e = Vector15::zeros();
    e.fixed_rows_mut::<9>(0).copy_from(&xi);
    e.fixed_rows_mut::<3>(idx::BIAS_GYRO).copy_from(&(estimate.bias_gyro - truth_bias_gyro));
    e.fixed_rows_mut::<3>(idx::BIAS_ACCEL).copy_from(&(estimate.bias_accel - truth_bias_accel));
    e
}

/// Normalized estimation error squared, `eᵀ P⁻¹ e`.
pub fn nees(error: &Vector15, cov: &ErrorCovariance) -> Option<f64> {
    let chol = cov.matrix().cholesky()?;
    Some(error.dot(&chol.solve(error)))
}
