//! Detection-to-cluster scoring and one-to-one assignment.
//!
//! Pose uncertainty enters the scores through the perturbation model
//! `R = R̂ exp(δθ)`, `p = p̂ + δp`. The filter covariance lives on the
//! right-invariant error, where the truth is `exp(-ξ) X̂`; to first order
//! `δθ = -R̂ᵀ ξ_R` and `δp = (p̂)× ξ_R - ξ_p`, which [`pose_covariance`] applies.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix2, Matrix2x6, Matrix3, Matrix6, RowVector3, RowVector6, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{back_project, projection_jacobian, BoxSource, CameraRig, DetectionBox, Z_MIN};
use crate::filter::{idx, ErrorCovariance, FilterState};
use crate::hungarian::hungarian;
use crate::lie::skew;
use crate::map::StreetlightCluster;

/// Smallest value of a no-match score.
pub const NO_MATCH_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreParams {
    /// Weight of the reprojection score against the angle score.
    pub weight: f64,
    /// Detection pixel variance, px².
    pub alpha: f64,
    /// Clusters farther than this from the estimated position score zero, m.
    pub max_range: f64,
    /// Lower bound on the angle-error variance. The first-order variance
    /// vanishes when the detection ray and the cluster ray coincide.
    pub ang_var_floor: f64,
}

impl Default for ScoreParams {
    fn default() -> Self {
        ScoreParams { weight: 0.5, alpha: 4.0, max_range: 50.0, ang_var_floor: 1e-12 }
    }
}

/// Maps `(ξ_R, ξ_p)` to `(δθ, δp)`.
pub fn pose_perturbation_map(state: &FilterState) -> Matrix6<f64> {
    let mut t = Matrix6::zeros();
    t.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-state.pose.rotation.matrix().transpose()));
    t.fixed_view_mut::<3, 3>(3, 0).copy_from(&skew(&state.pose.position));
    t.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-Matrix3::identity()));
    t
}

/// Covariance of `(δθ, δp)` implied by the filter covariance.
pub fn pose_covariance(state: &FilterState, cov: &ErrorCovariance) -> Matrix6<f64> {
    let p = cov.matrix();
    let mut prp = Matrix6::zeros();
    prp.fixed_view_mut::<3, 3>(0, 0).copy_from(&p.fixed_view::<3, 3>(idx::ROT, idx::ROT));
    prp.fixed_view_mut::<3, 3>(0, 3).copy_from(&p.fixed_view::<3, 3>(idx::ROT, idx::POS));
    prp.fixed_view_mut::<3, 3>(3, 0).copy_from(&p.fixed_view::<3, 3>(idx::POS, idx::ROT));
    prp.fixed_view_mut::<3, 3>(3, 3).copy_from(&p.fixed_view::<3, 3>(idx::POS, idx::POS));
    let t = pose_perturbation_map(state);
    t * prp * t.transpose()
}

/// Derivatives of the camera-frame center with respect to `(δθ, δp)`.
fn camera_point_pose_jacobian(state: &FilterState, center: &Vector3<f64>, rig: &CameraRig) -> (Vector3<f64>, [Matrix3<f64>; 2]) {
    let r = state.pose.rotation.matrix();
    let rcb = rig.extrinsics.rotation.matrix();
    let psi = r.transpose() * (center - state.pose.position);
    let pc = rcb * psi + rig.extrinsics.translation;
    (pc, [rcb * skew(&psi), -rcb * r.transpose()])
}

/// Pixel Jacobian with respect to `(δθ, δp)`; `None` behind the camera.
pub fn projection_pose_jacobian(state: &FilterState, center: &Vector3<f64>, rig: &CameraRig) -> Option<Matrix2x6<f64>> {
    let (pc, [d_rot, d_pos]) = camera_point_pose_jacobian(state, center, rig);
    if pc.z <= Z_MIN {
        return None;
    }
    let jp = projection_jacobian(&pc, &rig.intrinsics);
    let mut j = Matrix2x6::zeros();
    j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(jp * d_rot));
    j.fixed_view_mut::<2, 3>(0, 3).copy_from(&(jp * d_pos));
    Some(j)
}

/// Reprojection-residual covariance `αI + J P Jᵀ`.
pub fn sigma_proj(state: &FilterState, cov: &ErrorCovariance, center: &Vector3<f64>, rig: &CameraRig, alpha: f64) -> Option<Matrix2<f64>> {
    let j = projection_pose_jacobian(state, center, rig)?;
    Some(Matrix2::identity() * alpha + j * pose_covariance(state, cov) * j.transpose())
}

/// `cos θ` between the detection ray and the cluster ray, with its gradients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AngleGradients {
    pub cos: f64,
    /// With respect to the homogeneous pixel `(u, v, 1)`.
    pub d_pixel: RowVector3<f64>,
    /// With respect to `(δθ, δp)`.
    pub d_pose: RowVector6<f64>,
}

pub fn angle_gradients(state: &FilterState, pixel: &Vector2<f64>, center: &Vector3<f64>, rig: &CameraRig) -> Option<AngleGradients> {
    let (c, [d_rot, d_pos]) = camera_point_pose_jacobian(state, center, rig);
    if c.z <= Z_MIN {
        return None;
    }
    let p = back_project(pixel, &rig.intrinsics);
    let (nc, np) = (c.norm(), p.norm());
    let cos = c.dot(&p) / (nc * np);
    let unit_normal = |x: &Vector3<f64>, n: f64| Matrix3::identity() / n - x * x.transpose() / (n * n * n);
    let d_p = c.transpose() / nc * unit_normal(&p, np);
    let d_c = p.transpose() / np * unit_normal(&c, nc);
    let d_pixel = d_p * rig.intrinsics.inverse_matrix();
    let mut d_pose = RowVector6::zeros();
    d_pose.fixed_columns_mut::<3>(0).copy_from(&(d_c * d_rot));
    d_pose.fixed_columns_mut::<3>(3).copy_from(&(d_c * d_pos));
    Some(AngleGradients { cos, d_pixel, d_pose })
}

/// First-order variance of `cos θ` from pixel noise `α diag(1, 1, 0)` and pose uncertainty.
pub fn sigma_ang(
    state: &FilterState,
    cov: &ErrorCovariance,
    pixel: &Vector2<f64>,
    center: &Vector3<f64>,
    rig: &CameraRig,
    alpha: f64,
) -> Option<f64> {
    let g = angle_gradients(state, pixel, center, rig)?;
    Some(angle_variance(&g, &pose_covariance(state, cov), alpha))
}

fn angle_variance(g: &AngleGradients, pose_cov: &Matrix6<f64>, alpha: f64) -> f64 {
    let pix = alpha * (g.d_pixel[0] * g.d_pixel[0] + g.d_pixel[1] * g.d_pixel[1]);
    pix + (g.d_pose * pose_cov * g.d_pose.transpose())[0]
}

pub fn gaussian_density_2d(r: &Vector2<f64>, cov: &Matrix2<f64>) -> f64 {
    let det = cov.determinant();
    match cov.try_inverse() {
        Some(inv) if det > 0.0 => (-0.5 * (r.transpose() * inv * r)[0]).exp() / (2.0 * PI * det.sqrt()),
        _ => 0.0,
    }
}

pub fn gaussian_density_1d(r: f64, var: f64) -> f64 {
    (-0.5 * r * r / var).exp() / (2.0 * PI * var).sqrt()
}

/// Per-cluster quantities shared by every detection in a frame.
struct ClusterView {
    pixel: Vector2<f64>,
    sigma_proj: Matrix2<f64>,
}

fn cluster_view(state: &FilterState, pose_cov: &Matrix6<f64>, cluster: &StreetlightCluster, rig: &CameraRig, params: &ScoreParams) -> Option<ClusterView> {
    if (cluster.center - state.pose.position).norm() > params.max_range {
        return None;
    }
    let pixel = rig.project(&cluster.center, &state.pose)?;
    let j = projection_pose_jacobian(state, &cluster.center, rig)?;
    let mut sigma_proj = Matrix2::identity() * params.alpha + j * pose_cov * j.transpose();
    if sigma_proj.determinant() <= 0.0 {
        sigma_proj += Matrix2::identity() * params.ang_var_floor.max(1e-12);
    }
    Some(ClusterView { pixel, sigma_proj })
}

fn score_with_view(view: &ClusterView, det: &DetectionBox, cluster: &StreetlightCluster, state: &FilterState, pose_cov: &Matrix6<f64>, rig: &CameraRig, params: &ScoreParams) -> f64 {
    let Some(g) = angle_gradients(state, &det.center, &cluster.center, rig) else {
        return 0.0;
    };
    let var = angle_variance(&g, pose_cov, params.alpha).max(params.ang_var_floor);
    let r_proj = det.center - view.pixel;
    let r_ang = 1.0 - g.cos;
    params.weight * gaussian_density_2d(&r_proj, &view.sigma_proj) + (1.0 - params.weight) * gaussian_density_1d(r_ang, var)
}

/// Combined reprojection and angle score; zero for clusters out of range or
/// behind the camera.
pub fn pair_score(det: &DetectionBox, cluster: &StreetlightCluster, state: &FilterState, cov: &ErrorCovariance, rig: &CameraRig, params: &ScoreParams) -> f64 {
    let pose_cov = pose_covariance(state, cov);
    match cluster_view(state, &pose_cov, cluster, rig, params) {
        Some(view) => score_with_view(&view, det, cluster, state, &pose_cov, rig, params),
        None => 0.0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub detection: usize,
    /// Matched cluster id, `None` for no correspondence.
    pub cluster: Option<usize>,
    pub score: f64,
    #[serde(default)]
    pub source: BoxSource,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchSet {
    pub pairs: Vec<Match>,
}

impl MatchSet {
    pub fn matched(&self) -> impl Iterator<Item = &Match> {
        self.pairs.iter().filter(|m| m.cluster.is_some())
    }

    pub fn matched_count(&self) -> usize {
        self.matched().count()
    }

    pub fn cluster_for(&self, detection: usize) -> Option<usize> {
        self.pairs.iter().find(|m| m.detection == detection).and_then(|m| m.cluster)
    }

    pub fn contains_cluster(&self, id: usize) -> bool {
        self.matched().any(|m| m.cluster == Some(id))
    }

    /// Each detection appears at most once and each cluster is used at most once.
    pub fn is_one_to_one(&self) -> bool {
        let mut dets: Vec<usize> = self.pairs.iter().map(|m| m.detection).collect();
        let mut clusters: Vec<usize> = self.matched().filter_map(|m| m.cluster).collect();
        let (nd, nc) = (dets.len(), clusters.len());
        dets.sort_unstable();
        dets.dedup();
        clusters.sort_unstable();
        clusters.dedup();
        dets.len() == nd && clusters.len() == nc
    }
}

/// Full `n × (m + n)` score matrix: cluster columns, then no-match columns.
pub fn score_matrix(detections: &[DetectionBox], clusters: &[StreetlightCluster], state: &FilterState, cov: &ErrorCovariance, rig: &CameraRig, params: &ScoreParams) -> DMatrix<f64> {
    let (n, m) = (detections.len(), clusters.len());
    let pose_cov = pose_covariance(state, cov);
    let views: Vec<Option<ClusterView>> = clusters.iter().map(|c| cluster_view(state, &pose_cov, c, rig, params)).collect();
    let mut s = DMatrix::zeros(n, m + n);
    for (i, det) in detections.iter().enumerate() {
        for (j, (c, view)) in clusters.iter().zip(&views).enumerate() {
            if let Some(view) = view {
                s[(i, j)] = score_with_view(view, det, c, state, &pose_cov, rig, params);
            }
        }
        let no_match = (1.0 - s.row(i).columns(0, m).sum()).max(NO_MATCH_FLOOR);
        s.view_mut((i, m), (1, n)).fill(no_match);
    }
    s
}

/// Maximum-score one-to-one assignment of detections to clusters or to no correspondence.
pub fn associate(detections: &[DetectionBox], clusters: &[StreetlightCluster], state: &FilterState, cov: &ErrorCovariance, rig: &CameraRig, params: &ScoreParams) -> MatchSet {
    let n = detections.len();
    if n == 0 {
        return MatchSet::default();
    }
    let m = clusters.len();
    let s = score_matrix(detections, clusters, state, cov, rig, params);
    let assignment = hungarian(&s, true).expect("score matrix is finite with m + n >= n columns");
    let pairs = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            let matched = j < m && s[(i, j)] > 0.0;
            Match {
                detection: i,
                cluster: matched.then(|| clusters[j].id),
                score: s[(i, j)],
                source: detections[i].source,
            }
        })
        .collect();
    MatchSet { pairs }
}
