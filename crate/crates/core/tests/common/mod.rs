//! Independent reference implementations used by the integration and
//! acceptance tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, Matrix3, Matrix5, SMatrix, Vector2, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use nightrider_core::camera::{CamExtrinsics, CameraIntrinsics, CameraRig};
use nightrider_core::filter::{build_error_dynamics, FilterState, Matrix15, Vector15};
use nightrider_core::lie::{se23_exp, se23_log, ExtendedPose, Rotation, TangentXi, Vector9};

pub fn gaussian3<R: Rng>(rng: &mut R, sigma: f64) -> Vector3<f64> {
    Vector3::from_fn(|_, _| { let z: f64 = StandardNormal.sample(rng); sigma * z })
}

pub fn uniform3<R: Rng>(rng: &mut R, half_width: f64) -> Vector3<f64> {
    Vector3::from_fn(|_, _| rng.random_range(-half_width..half_width))
}

pub fn random_rotation<R: Rng>(rng: &mut R) -> Rotation {
    let axis = gaussian3(rng, 1.0).normalize();
    Rotation::exp(&(axis * rng.random_range(0.0..3.1)))
}

pub fn random_pose<R: Rng>(rng: &mut R) -> ExtendedPose {
    ExtendedPose::new(random_rotation(rng), uniform3(rng, 5.0), uniform3(rng, 30.0))
}

pub fn random_state<R: Rng>(rng: &mut R) -> FilterState {
    let mut s = FilterState::new(random_pose(rng), 0.0);
    s.bias_gyro = uniform3(rng, 0.01);
    s.bias_accel = uniform3(rng, 0.1);
    s
}

/// 5×5 matrix exponential by plain truncated power series.
pub fn series_exp5(a: &Matrix5<f64>, terms: usize) -> Matrix5<f64> {
    let mut sum = Matrix5::identity();
    let mut term = Matrix5::identity();
    for k in 1..terms {
        term = term * a / k as f64;
        sum += term;
    }
    sum
}

/// Relative Frobenius error, guarded for near-zero references.
pub fn rel_err<const R: usize, const C: usize>(approx: &SMatrix<f64, R, C>, exact: &SMatrix<f64, R, C>) -> f64 {
    (approx - exact).norm() / exact.norm().max(1e-12)
}

pub fn rel_err_dyn(approx: &DMatrix<f64>, exact: &DMatrix<f64>) -> f64 {
    (approx - exact).norm() / exact.norm().max(1e-12)
}

// ---------------------------------------------------------------------------
// Error-dynamics oracle: exact nonlinear flows of truth and estimate.

/// Constant body rate and specific force acting on a pose for time `h`,
/// integrated in closed form (rotation, velocity) and by Gauss-Legendre
/// quadrature (position).
pub fn flow(pose: &ExtendedPose, omega: &Vector3<f64>, accel: &Vector3<f64>, gravity: &Vector3<f64>, h: f64) -> ExtendedPose {
    let r = *pose.rotation.matrix();
    let vel_at = |s: f64| -> Vector3<f64> {
        // ∫₀ˢ R exp(ω τ) a dτ = R s J_l(ω s) a
        let jl = nightrider_core::lie::so3_left_jacobian(&(omega * s));
        pose.velocity + r * (jl * accel) * s + gravity * s
    };
    const NODES: [f64; 5] = [-0.906_179_845_938_664, -0.538_469_310_105_683, 0.0, 0.538_469_310_105_683, 0.906_179_845_938_664];
    const WEIGHTS: [f64; 5] = [0.236_926_885_056_189, 0.478_628_670_499_366, 0.568_888_888_888_889, 0.478_628_670_499_366, 0.236_926_885_056_189];
    let mut disp = Vector3::zeros();
    for (x, w) in NODES.iter().zip(WEIGHTS) {
        disp += vel_at(0.5 * h * (x + 1.0)) * w * 0.5 * h;
    }
    ExtendedPose {
        rotation: Rotation::from_matrix_unchecked(r * nightrider_core::lie::so3_exp(&(omega * h))),
        velocity: vel_at(h),
        position: pose.position + disp,
    }
}

/// Stacked `[log(X̂X⁻¹); b̂ - b]`.
fn stacked_error(est: &ExtendedPose, truth: &ExtendedPose, bias_err: &SMatrix<f64, 6, 1>) -> Vector15 {
    let xi = se23_log(&est.compose(&truth.inverse())).to_vector();
    let mut e = Vector15::zeros();
    e.fixed_rows_mut::<9>(0).copy_from(&xi);
    e.fixed_rows_mut::<6>(9).copy_from(bias_err);
    e
}

/// Time derivative of the error at `t = 0` when the estimate starts from
/// truth perturbed by `e0`, with noise-free IMU readings of the truth.
pub fn error_rate(
    truth: &FilterState,
    omega: &Vector3<f64>,
    accel: &Vector3<f64>,
    gravity: &Vector3<f64>,
    e0: &Vector15,
    h: f64,
) -> Vector15 {
    let xi = TangentXi::from_vector(&Vector9::from_column_slice(&e0.as_slice()[..9]));
    let est0 = se23_exp(&xi).compose(&truth.pose);
    let bias_err = e0.fixed_rows::<6>(9).into_owned();
    // readings include the true biases; the estimate subtracts biased estimates
    let gyro_meas = omega + truth.bias_gyro;
    let accel_meas = accel + truth.bias_accel;
    let est_bg = truth.bias_gyro + bias_err.fixed_rows::<3>(0);
    let est_ba = truth.bias_accel + bias_err.fixed_rows::<3>(3);
    let at = |t: f64| {
        let tr = flow(&truth.pose, omega, accel, gravity, t);
        let es = flow(&est0, &(gyro_meas - est_bg), &(accel_meas - est_ba), gravity, t);
        stacked_error(&es, &tr, &bias_err)
    };
    (at(h) - at(-h)) / (2.0 * h)
}

/// Central finite-difference estimate of the linearized error dynamics.
pub fn fd_error_dynamics(truth: &FilterState, omega: &Vector3<f64>, accel: &Vector3<f64>, gravity: &Vector3<f64>) -> Matrix15 {
    let (eps, h) = (1e-4, 1e-4);
    let mut a = Matrix15::zeros();
    for k in 0..15 {
        let mut e = Vector15::zeros();
        e[k] = eps;
        let col = (error_rate(truth, omega, accel, gravity, &e, h) - error_rate(truth, omega, accel, gravity, &(-e), h)) / (2.0 * eps);
        a.set_column(k, &col);
    }
    a
}

/// The analytic matrix evaluated at the truth (the flows above linearize there).
pub fn analytic_error_dynamics(truth: &FilterState, gravity: &Vector3<f64>) -> Matrix15 {
    build_error_dynamics(truth, gravity)
}

// ---------------------------------------------------------------------------
// Camera oracles.

pub fn random_rig<R: Rng>(rng: &mut R) -> CameraRig {
    let k = CameraIntrinsics {
        fx: rng.random_range(400.0..900.0),
        fy: rng.random_range(400.0..900.0),
        cx: rng.random_range(500.0..700.0),
        cy: rng.random_range(300.0..400.0),
        width: 1280,
        height: 720,
    };
    let ext = CamExtrinsics::forward_looking(uniform3(rng, 0.5), rng.random_range(-0.3..0.5));
    CameraRig { intrinsics: k, extrinsics: ext }
}

/// A state and a world point at least `min_depth` in front of the camera.
pub fn random_visible_point<R: Rng>(rng: &mut R, rig: &CameraRig, min_depth: f64) -> (FilterState, Vector3<f64>) {
    loop {
        let state = random_state(rng);
        // pick a camera-frame point, then map it to the world
        let pc = Vector3::new(rng.random_range(-8.0..8.0), rng.random_range(-6.0..6.0), rng.random_range(min_depth..40.0));
        let pb = rig.extrinsics.rotation.inverse_transform(&(pc - rig.extrinsics.translation));
        let pw = state.pose.rotation.transform(&pb) + state.pose.position;
        if rig.point_in_camera(&pw, &state.pose).z >= min_depth {
            return (state, pw);
        }
    }
}

/// Pixel via a 3×4 camera matrix on homogeneous coordinates.
pub fn homogeneous_projection(point_w: &Vector3<f64>, pose: &ExtendedPose, rig: &CameraRig) -> Option<Vector2<f64>> {
    let r = pose.rotation.matrix();
    let mut world_to_body = nalgebra::Matrix4::identity();
    world_to_body.fixed_view_mut::<3, 3>(0, 0).copy_from(&r.transpose());
    world_to_body.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-r.transpose() * pose.position));
    let mut body_to_cam = nalgebra::Matrix4::identity();
    body_to_cam.fixed_view_mut::<3, 3>(0, 0).copy_from(rig.extrinsics.rotation.matrix());
    body_to_cam.fixed_view_mut::<3, 1>(0, 3).copy_from(&rig.extrinsics.translation);
    let mut proj = SMatrix::<f64, 3, 4>::zeros();
    proj.fixed_view_mut::<3, 3>(0, 0).copy_from(&rig.intrinsics.matrix());
    let x = proj * body_to_cam * world_to_body * point_w.push(1.0);
    (x.z > 0.01).then(|| Vector2::new(x.x / x.z, x.y / x.z))
}

/// Body-rotation / world-position perturbation of a pose.
pub fn perturb_pose(pose: &ExtendedPose, dtheta: &Vector3<f64>, dp: &Vector3<f64>) -> ExtendedPose {
    ExtendedPose::new(pose.rotation * Rotation::exp(dtheta), pose.velocity, pose.position + dp)
}

pub fn cross_matrix_oracle(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::from_columns(&[v.cross(&Vector3::x()), v.cross(&Vector3::y()), v.cross(&Vector3::z())])
}

// ---------------------------------------------------------------------------
// Assignment oracle.

/// Best total over all injective maps of rows into columns.
pub fn brute_force_assignment(s: &DMatrix<f64>, maximize: bool) -> f64 {
    fn rec(s: &DMatrix<f64>, row: usize, used: &mut Vec<bool>, maximize: bool) -> f64 {
        if row == s.nrows() {
            return 0.0;
        }
        let mut best = if maximize { f64::NEG_INFINITY } else { f64::INFINITY };
        for j in 0..s.ncols() {
            if used[j] {
                continue;
            }
            used[j] = true;
            let v = s[(row, j)] + rec(s, row + 1, used, maximize);
            used[j] = false;
            best = if maximize { best.max(v) } else { best.min(v) };
        }
        best
    }
    rec(s, 0, &mut vec![false; s.ncols()], maximize)
}

/// Best total when each detection takes one distinct cluster column or its
/// no-match value, enumerated directly over partial injective maps.
pub fn brute_force_association(cluster_scores: &DMatrix<f64>, no_match: &[f64]) -> f64 {
    fn rec(s: &DMatrix<f64>, nm: &[f64], row: usize, used: &mut Vec<bool>) -> f64 {
        if row == s.nrows() {
            return 0.0;
        }
        let mut best = nm[row] + rec(s, nm, row + 1, used);
        for j in 0..s.ncols() {
            if !used[j] {
                used[j] = true;
                best = best.max(s[(row, j)] + rec(s, nm, row + 1, used));
                used[j] = false;
            }
        }
        best
    }
    rec(cluster_scores, no_match, 0, &mut vec![false; cluster_scores.ncols()])
}

// ---------------------------------------------------------------------------
// DBSCAN oracle.

/// Quadratic reference: core points are connected when within `eps`; each
/// connected group of core points is a cluster. Returns the core flags and
/// the core-component id per point (`None` for non-core points).
pub fn core_components(points: &[Vector3<f64>], eps: f64, min_pts: usize) -> (Vec<bool>, Vec<Option<usize>>) {
    let n = points.len();
    let near = |i: usize, j: usize| (points[i] - points[j]).norm() <= eps;
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts).collect();
    let mut comp = vec![None; n];
    let mut next = 0;
    for start in 0..n {
        if !core[start] || comp[start].is_some() {
            continue;
        }
        let mut stack = vec![start];
        comp[start] = Some(next);
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if core[j] && comp[j].is_none() && near(i, j) {
                    comp[j] = Some(next);
                    stack.push(j);
                }
            }
        }
        next += 1;
    }
    (core, comp)
}

/// Checks DBSCAN labels against the reference, up to renumbering. Border
/// points may join any cluster with a core point in range.
pub fn dbscan_matches_reference(points: &[Vector3<f64>], eps: f64, min_pts: usize, labels: &[i64]) -> Result<(), String> {
    let (core, comp) = core_components(points, eps, min_pts);
    let n = points.len();
    let mut map_label: std::collections::HashMap<i64, usize> = std::collections::HashMap::new();
    let mut map_comp: std::collections::HashMap<usize, i64> = std::collections::HashMap::new();
    for i in 0..n {
        if let Some(c) = comp[i] {
            let l = labels[i];
            if l < 0 {
                return Err(format!("core point {i} labeled noise"));
            }
            if *map_label.entry(l).or_insert(c) != c || *map_comp.entry(c).or_insert(l) != l {
                return Err(format!("core point {i} breaks the component bijection"));
            }
        }
    }
    for i in 0..n {
        if core[i] {
            continue;
        }
        let reachable: Vec<usize> = (0..n).filter(|&j| core[j] && (points[i] - points[j]).norm() <= eps).filter_map(|j| comp[j]).collect();
        match (labels[i], reachable.is_empty()) {
            (l, true) if l != -1 => return Err(format!("point {i} has no core neighbour but label {l}")),
            (-1, false) => return Err(format!("border point {i} labeled noise")),
            (l, false) => {
                let c = map_label.get(&l).ok_or(format!("border point {i} has unknown label {l}"))?;
                if !reachable.contains(c) {
                    return Err(format!("border point {i} joined a cluster out of reach"));
                }
            }
            _ => {}
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Flood-fill labeling oracle.

/// Bounding boxes `(min_x, min_y, max_x, max_y, area)` of 8-connected
/// components of `mask`, found by BFS.
pub fn flood_fill_boxes(mask: &[bool], width: usize, height: usize) -> Vec<(usize, usize, usize, usize, usize)> {
    let mut seen = vec![false; mask.len()];
    let mut out = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        let mut queue = std::collections::VecDeque::from([start]);
        seen[start] = true;
        let (mut x0, mut y0, mut x1, mut y1, mut area) = (usize::MAX, usize::MAX, 0, 0, 0);
        while let Some(p) = queue.pop_front() {
            let (x, y) = (p % width, p / width);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            area += 1;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                        continue;
                    }
                    let q = ny as usize * width + nx as usize;
                    if mask[q] && !seen[q] {
                        seen[q] = true;
                        queue.push_back(q);
                    }
                }
            }
        }
        out.push((x0, y0, x1, y1, area));
    }
    out
}
