//! Extra matches from segmentation boxes, and collinear-streetlight handling.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{Matrix2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{CameraRig, DetectionBox};
use crate::filter::FilterState;
use crate::map::StreetlightCluster;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtensionMatch {
    pub box_index: usize,
    pub cluster: usize,
    pub ratio: f64,
}

/// Matches unmatched clusters to boxes by the share of projected cluster
/// points falling inside each box. Only boxes containing the projected
/// cluster center are candidates; conflicts resolve greedily by ratio.
pub fn extend_matches(
    boxes: &[DetectionBox],
    unmatched: &[&StreetlightCluster],
    state: &FilterState,
    rig: &CameraRig,
    max_range: f64,
) -> Vec<ExtensionMatch> {
    let mut candidates = Vec::new();
    for cluster in unmatched {
        if (cluster.center - state.pose.position).norm() > max_range {
            continue;
        }
        let Some(center_px) = rig.project(&cluster.center, &state.pose) else {
            continue;
        };
        let inside: Vec<usize> = (0..boxes.len()).filter(|&b| boxes[b].contains(&center_px)).collect();
        if inside.is_empty() {
            continue;
        }
        let projected: Vec<Vector2<f64>> = cluster.points.iter().filter_map(|p| rig.project(p, &state.pose)).collect();
        for b in inside {
            let hits = projected.iter().filter(|p| boxes[b].contains(p)).count();
            if hits > 0 {
                candidates.push(ExtensionMatch { box_index: b, cluster: cluster.id, ratio: hits as f64 / cluster.points.len() as f64 });
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.ratio
            .total_cmp(&a.ratio)
            .then(a.cluster.cmp(&b.cluster))
            .then(a.box_index.cmp(&b.box_index))
    });
    let mut used_boxes = vec![false; boxes.len()];
    let mut used_clusters = Vec::new();
    let mut out = Vec::new();
    for c in candidates {
        if used_boxes[c.box_index] || used_clusters.contains(&c.cluster) {
            continue;
        }
        used_boxes[c.box_index] = true;
        used_clusters.push(c.cluster);
        out.push(c);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DegenParams {
    /// Matched centers older than this are forgotten, s.
    pub window: f64,
    /// Collinearity threshold on perpendicular distance, m.
    pub line_threshold: f64,
    /// Gating rectangle around a new cluster's projection, px.
    pub rect_width: f64,
    pub rect_height: f64,
}

impl Default for DegenParams {
    fn default() -> Self {
        DegenParams { window: 10.0, line_threshold: 1.5, rect_width: 30.0, rect_height: 300.0 }
    }
}

/// A line in the x-y plane through `point` with unit `direction`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Line2 {
    pub point: Vector2<f64>,
    pub direction: Vector2<f64>,
}

impl Line2 {
    pub fn distance(&self, p: &Vector2<f64>) -> f64 {
        let d = p - self.point;
        (d.x * self.direction.y - d.y * self.direction.x).abs()
    }
}

/// Total-least-squares line through the points and the largest perpendicular distance.
pub fn fit_line(points: &[Vector2<f64>]) -> Option<(Line2, f64)> {
    if points.len() < 2 {
        return None;
    }
    let centroid = points.iter().fold(Vector2::zeros(), |a, p| a + p) / points.len() as f64;
    let scatter = points.iter().fold(Matrix2::zeros(), |a, p| {
        let d = p - centroid;
        a + d * d.transpose()
    });
    let eig = scatter.symmetric_eigen();
    let k = if eig.eigenvalues[0] >= eig.eigenvalues[1] { 0 } else { 1 };
    let direction = eig.eigenvectors.column(k).normalize();
    let line = Line2 { point: centroid, direction };
    let max = points.iter().map(|p| line.distance(p)).fold(0.0, f64::max);
    Some((line, max))
}

/// Tracks whether recently matched streetlights lie on a single line.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct DegenState {
    pub degenerate: bool,
    /// `(time, cluster id, center)` of recent matches.
    pub window: VecDeque<(f64, usize, Vector3<f64>)>,
    pub line: Option<Line2>,
    /// Largest perpendicular distance of the windowed centers from the line, m.
    pub residual: f64,
}

impl DegenState {
    /// Latest center per cluster id in the window.
    pub fn distinct_centers(&self) -> BTreeMap<usize, Vector3<f64>> {
        self.window.iter().map(|&(_, id, c)| (id, c)).collect()
    }

    pub fn contains(&self, id: usize) -> bool {
        self.window.iter().any(|&(_, i, _)| i == id)
    }

    /// Distance of a world point from the fitted line in the x-y plane.
    pub fn off_line_distance(&self, p: &Vector3<f64>) -> Option<f64> {
        self.line.map(|l| l.distance(&p.xy()))
    }
}

/// Adds the matched centers observed at `time`, expires old entries and refits.
pub fn update_degeneracy(degen: &DegenState, time: f64, matched: &[(usize, Vector3<f64>)], params: &DegenParams) -> DegenState {
    let mut next = degen.clone();
    for &(id, c) in matched {
        next.window.push_back((time, id, c));
    }
    while next.window.front().is_some_and(|&(t, _, _)| t < time - params.window) {
        next.window.pop_front();
    }
    let pts: Vec<Vector2<f64>> = next.distinct_centers().values().map(|c| c.xy()).collect();
    let distinct = count_distinct(&pts);
    match fit_line(&pts) {
        Some((line, residual)) if distinct >= 2 => {
            next.line = Some(line);
            next.residual = residual;
            next.degenerate = residual < params.line_threshold;
        }
        _ => {
            next.line = None;
            next.residual = 0.0;
            next.degenerate = false;
        }
    }
    next
}

fn count_distinct(pts: &[Vector2<f64>]) -> usize {
    let mut seen: Vec<&Vector2<f64>> = Vec::new();
    for p in pts {
        if !seen.iter().any(|q| (*q - p).norm() < 1e-6) {
            seen.push(p);
        }
    }
    seen.len()
}

/// Matches newly visible clusters to boxes inside a tall rectangle around
/// their projections, picking the box whose center is nearest.
pub fn degeneration_match(
    boxes: &[DetectionBox],
    new_clusters: &[&StreetlightCluster],
    state: &FilterState,
    rig: &CameraRig,
    params: &DegenParams,
) -> Vec<(usize, usize)> {
    let size = Vector2::new(params.rect_width, params.rect_height);
    let mut used = vec![false; boxes.len()];
    let mut out = Vec::new();
    for cluster in new_clusters {
        let Some(px) = rig.project(&cluster.center, &state.pose) else {
            continue;
        };
        let best = boxes
            .iter()
            .enumerate()
            .filter(|(i, b)| !used[*i] && b.intersects(&px, &size))
            .min_by(|(ia, a), (ib, b)| {
                (a.center - px).norm().total_cmp(&(b.center - px).norm()).then(ia.cmp(ib))
            });
        if let Some((i, _)) = best {
            used[i] = true;
            out.push((i, cluster.id));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{BoxSource, CamExtrinsics, CameraIntrinsics};
    use crate::lie::ExtendedPose;

    fn rig() -> CameraRig {
        CameraRig { intrinsics: CameraIntrinsics::default(), extrinsics: CamExtrinsics::forward_looking(Vector3::zeros(), 0.0) }
    }

    fn bx(cx: f64, cy: f64, w: f64, h: f64) -> DetectionBox {
        DetectionBox::new(Vector2::new(cx, cy), Vector2::new(w, h), BoxSource::Segmentation)
    }

    fn state() -> FilterState {
        FilterState::new(ExtendedPose::identity(), 0.0)
    }

    #[test]
    fn cluster_inside_one_box() {
        let c = StreetlightCluster::from_points(0, vec![Vector3::new(20.0, 0.1, 0.1), Vector3::new(20.0, -0.1, -0.1)]);
        let boxes = [bx(640.0, 360.0, 20.0, 20.0)];
        let m = extend_matches(&boxes, &[&c], &state(), &rig(), 80.0);
        assert_eq!(m, vec![ExtensionMatch { box_index: 0, cluster: 0, ratio: 1.0 }]);
    }

    #[test]
    fn larger_share_wins() {
        // projected u = 640 - 30 y at 20 m range: 7 points at u = 640, 3 at u = 670, center at 649
        let mut pts = vec![Vector3::new(20.0, 0.0, 0.0); 7];
        pts.extend(vec![Vector3::new(20.0, -1.0, 0.0); 3]);
        let c = StreetlightCluster::from_points(3, pts);
        let a = bx(645.0, 360.0, 20.0, 10.0);
        let b = bx(661.5, 360.0, 27.0, 10.0);
        let m = extend_matches(&[b, a], &[&c], &state(), &rig(), 80.0);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].box_index, 1);
        assert!((m[0].ratio - 0.7).abs() < 1e-12);
    }

    #[test]
    fn no_box_contains_center() {
        let c = StreetlightCluster::from_points(0, vec![Vector3::new(20.0, 0.0, 0.0)]);
        let boxes = [bx(700.0, 360.0, 20.0, 20.0)];
        assert!(extend_matches(&boxes, &[&c], &state(), &rig(), 80.0).is_empty());
        assert!(extend_matches(&boxes, &[&c], &state(), &rig(), 10.0).is_empty());
    }

    #[test]
    fn one_box_per_cluster() {
        let a = StreetlightCluster::from_points(0, vec![Vector3::new(20.0, 0.0, 0.0)]);
        let b = StreetlightCluster::from_points(1, vec![Vector3::new(20.0, 0.05, 0.0)]);
        let boxes = [bx(640.0, 360.0, 40.0, 40.0)];
        assert_eq!(extend_matches(&boxes, &[&a, &b], &state(), &rig(), 80.0).len(), 1);
    }

    fn v(x: f64, y: f64) -> Vector3<f64> {
        Vector3::new(x, y, 6.0)
    }

    #[test]
    fn collinear_centers_are_degenerate() {
        let p = DegenParams { line_threshold: 1.0, ..Default::default() };
        let d = update_degeneracy(&DegenState::default(), 0.0, &[(0, v(0.0, 0.0)), (1, v(10.0, 0.0)), (2, v(20.0, 0.0))], &p);
        assert!(d.degenerate);
        let d = update_degeneracy(&d, 1.0, &[(3, v(10.0, 8.0))], &p);
        assert!(!d.degenerate);
    }

    #[test]
    fn single_center_is_not_degenerate() {
        let p = DegenParams::default();
        let d = update_degeneracy(&DegenState::default(), 0.0, &[(0, v(0.0, 0.0)), (0, v(0.0, 0.0))], &p);
        assert!(!d.degenerate);
    }

    #[test]
    fn window_expires() {
        let p = DegenParams { window: 5.0, ..Default::default() };
        let d = update_degeneracy(&DegenState::default(), 0.0, &[(0, v(0.0, 0.0)), (1, v(10.0, 0.0))], &p);
        assert!(d.degenerate);
        let d = update_degeneracy(&d, 6.0, &[(2, v(20.0, 0.0))], &p);
        assert_eq!(d.window.len(), 1);
        assert!(!d.degenerate);
    }

    #[test]
    fn rectangle_gating() {
        let c = StreetlightCluster::from_points(5, vec![Vector3::new(20.0, 0.0, 0.0)]);
        let p = DegenParams { rect_width: 20.0, rect_height: 200.0, ..Default::default() };
        let s = state();
        let below = bx(640.0, 400.0, 8.0, 8.0);
        assert_eq!(degeneration_match(&[below], &[&c], &s, &rig(), &p), vec![(0, 5)]);
        let side = bx(680.0, 360.0, 8.0, 8.0);
        assert!(degeneration_match(&[side], &[&c], &s, &rig(), &p).is_empty());
        let near = bx(640.0, 390.0, 8.0, 8.0);
        let far = bx(640.0, 300.0, 8.0, 8.0);
        assert_eq!(degeneration_match(&[far, near], &[&c], &s, &rig(), &p), vec![(1, 5)]);
    }
}
