//! Pinhole camera model and the streetlight-center observation.
//!
//! Body frame is x forward, y left, z up. Camera frame is x right, y down,
//! z along the optical axis. Images are assumed rectified.

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, SMatrix, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::filter::{idx, invariant_update, ErrorCovariance, FilterError, FilterState};
use crate::lie::{skew, ExtendedPose, Rotation};

/// Points closer than this along the optical axis are treated as behind the camera.
pub const Z_MIN: f64 = 0.01;
/// Diagonal regularization of the rank-deficient normalized-coordinate noise.
pub const NOISE_REGULARIZATION: f64 = 1e-12;

pub type Matrix3x15 = SMatrix<f64, 3, 15>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    pub fn in_image(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0 && pixel.y >= 0.0 && pixel.x < self.width as f64 && pixel.y < self.height as f64
    }
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        CameraIntrinsics { fx: 600.0, fy: 600.0, cx: 640.0, cy: 360.0, width: 1280, height: 720 }
    }
}

/// Body-to-camera transform: `C^c = R_b^c C^b + t_b^c`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CamExtrinsics {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl CamExtrinsics {
    /// Forward-looking camera mounted at `position` in the body frame, tilted
    /// up by `pitch_up` radians.
    pub fn forward_looking(position: Vector3<f64>, pitch_up: f64) -> Self {
        let base = Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
        // rotating the body-frame view direction up about body y by -pitch_up
        let tilt = Rotation::from_euler(0.0, -pitch_up, 0.0);
        let r = base * tilt.matrix().transpose();
        let rotation = Rotation::from_matrix_unchecked(r);
        CamExtrinsics { rotation, translation: -(r * position) }
    }

    pub fn identity() -> Self {
        CamExtrinsics { rotation: Rotation::identity(), translation: Vector3::zeros() }
    }
}

/// Intrinsics and extrinsics of the single camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraRig {
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: CamExtrinsics,
}

impl CameraRig {
    pub fn project(&self, point_w: &Vector3<f64>, pose: &ExtendedPose) -> Option<Vector2<f64>> {
        project(point_w, pose, &self.extrinsics, &self.intrinsics)
    }

    pub fn point_in_camera(&self, point_w: &Vector3<f64>, pose: &ExtendedPose) -> Vector3<f64> {
        point_in_camera(point_w, pose, &self.extrinsics)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BoxSource {
    #[default]
    Detector,
    Segmentation,
}

/// Axis-aligned image box: center and full width/height in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub center: Vector2<f64>,
    pub extents: Vector2<f64>,
    #[serde(default)]
    pub source: BoxSource,
}

impl DetectionBox {
    pub fn new(center: Vector2<f64>, extents: Vector2<f64>, source: BoxSource) -> Self {
        DetectionBox { center, extents, source }
    }

    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        (p.x - self.center.x).abs() <= 0.5 * self.extents.x && (p.y - self.center.y).abs() <= 0.5 * self.extents.y
    }

    /// Overlap test against another axis-aligned rectangle given by center and size.
    pub fn intersects(&self, center: &Vector2<f64>, size: &Vector2<f64>) -> bool {
        (self.center.x - center.x).abs() <= 0.5 * (self.extents.x + size.x)
            && (self.center.y - center.y).abs() <= 0.5 * (self.extents.y + size.y)
    }
}

pub fn point_in_camera(point_w: &Vector3<f64>, pose: &ExtendedPose, ext: &CamExtrinsics) -> Vector3<f64> {
    ext.rotation.transform(&pose.rotation.inverse_transform(&(point_w - pose.position))) + ext.translation
}

/// Pixel of a world point, or `None` when it is behind the camera.
pub fn project(point_w: &Vector3<f64>, pose: &ExtendedPose, ext: &CamExtrinsics, k: &CameraIntrinsics) -> Option<Vector2<f64>> {
    project_camera(&point_in_camera(point_w, pose, ext), k)
}

pub fn project_camera(pc: &Vector3<f64>, k: &CameraIntrinsics) -> Option<Vector2<f64>> {
    if pc.z <= Z_MIN {
        return None;
    }
    Some(Vector2::new(k.fx * pc.x / pc.z + k.cx, k.fy * pc.y / pc.z + k.cy))
}

/// Jacobian of the pixel with respect to the camera-frame point.
pub fn projection_jacobian(pc: &Vector3<f64>, k: &CameraIntrinsics) -> Matrix2x3<f64> {
    let iz = 1.0 / pc.z;
    Matrix2x3::new(
        k.fx * iz,
        0.0,
        -k.fx * pc.x * iz * iz,
        0.0,
        k.fy * iz,
        -k.fy * pc.y * iz * iz,
    )
}

/// Normalized image-plane ray `K⁻¹ (u, v, 1)`.
pub fn back_project(pixel: &Vector2<f64>, k: &CameraIntrinsics) -> Vector3<f64> {
    Vector3::new((pixel.x - k.cx) / k.fx, (pixel.y - k.cy) / k.fy, 1.0)
}

/// Predicted normalized observation of a cluster center and its Jacobian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraLinearization {
    pub h: Matrix3x15,
    pub predicted: Vector3<f64>,
}

/// `H_c = H_i R̂ᵀ [(C)× 0 -I 0 0]` with `H_i` the Jacobian of `q / q_z`,
/// `q = R_b^c Ψ + t_b^c`, `Ψ = R̂ᵀ (C - p̂)`. `None` behind the camera.
pub fn camera_h(state: &FilterState, center: &Vector3<f64>, ext: &CamExtrinsics) -> Option<CameraLinearization> {
    let r = state.pose.rotation.matrix();
    let psi = r.transpose() * (center - state.pose.position);
    let rcb = ext.rotation.matrix();
    let q = rcb * psi + ext.translation;
    if q.z <= Z_MIN {
        return None;
    }
    let row3 = rcb.row(2);
    let hi = rcb / q.z - q * row3 / (q.z * q.z);
    let hir = hi * r.transpose();
    let mut h = Matrix3x15::zeros();
    h.fixed_view_mut::<3, 3>(0, idx::ROT).copy_from(&(hir * skew(center)));
    h.fixed_view_mut::<3, 3>(0, idx::POS).copy_from(&(-hir));
    Some(CameraLinearization { h, predicted: q / q.z })
}

/// Normalized-coordinate noise `K⁻¹ diag(σ², σ², 0) K⁻ᵀ + εI`.
pub fn normalized_noise(pixel_sigma: f64, k: &CameraIntrinsics) -> Matrix3<f64> {
    let ki = k.inverse_matrix();
    let s = Matrix3::from_diagonal(&Vector3::new(pixel_sigma * pixel_sigma, pixel_sigma * pixel_sigma, 0.0));
    ki * s * ki.transpose() + Matrix3::identity() * NOISE_REGULARIZATION
}

/// A detection paired with the world-frame center of its matched cluster.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CenterObservation {
    pub pixel: Vector2<f64>,
    pub center: Vector3<f64>,
}

/// Stacked update over all observations. Pairs behind the camera are skipped;
/// the returned count is the number actually used.
pub fn apply_camera_update(
    state: &FilterState,
    cov: &ErrorCovariance,
    observations: &[CenterObservation],
    ext: &CamExtrinsics,
    k: &CameraIntrinsics,
    pixel_sigma: f64,
) -> Result<(FilterState, ErrorCovariance, usize), FilterError> {
    let rows: Vec<_> = observations
        .iter()
        .filter_map(|o| camera_h(state, &o.center, ext).map(|lin| (lin, back_project(&o.pixel, k))))
        .collect();
    if rows.is_empty() {
        return Ok((*state, *cov, 0));
    }
    let n_obs = rows.len();
    let dim = 3 * n_obs;
    let noise = normalized_noise(pixel_sigma, k);
    let mut h = DMatrix::zeros(dim, 15);
    let mut z = DVector::zeros(dim);
    let mut n = DMatrix::zeros(dim, dim);
    for (i, (lin, y)) in rows.iter().enumerate() {
        h.view_mut((3 * i, 0), (3, 15)).copy_from(&lin.h);
        z.rows_mut(3 * i, 3).copy_from(&(y - lin.predicted));
        n.view_mut((3 * i, 3 * i), (3, 3)).copy_from(&noise);
    }
    let (s, c) = invariant_update(state, cov, &h, &z, &n)?;
    Ok((s, c, n_obs))
}

/// Pixel distance between a detection and the projection of a cluster center.
pub fn reprojection_residual(
    pixel: &Vector2<f64>,
    center: &Vector3<f64>,
    pose: &ExtendedPose,
    ext: &CamExtrinsics,
    k: &CameraIntrinsics,
) -> Option<f64> {
    project(center, pose, ext, k).map(|p| (p - pixel).norm())
}
