//! Synthetic streetlight maps.

use std::path::PathBuf;

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use nightrider_core::map::{load_map, MapError, StreetlightCluster, StreetlightMap};

use crate::trajectory::TrajectorySample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layout {
    /// Lights every `spacing` metres of path, `offset` metres to the side.
    Roadside { spacing: f64, offset: f64, height: f64, alternate: bool },
    /// Lamp head positions given directly.
    Explicit { lights: Vec<[f64; 3]> },
    /// A previously built map; lamp geometry comes from the file.
    File { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapSpec {
    pub layout: Layout,
    /// Half-size of the box the lamp-head points are scattered in.
    pub lamp_half_extent: [f64; 3],
    pub points_per_lamp: usize,
}

impl Default for MapSpec {
    fn default() -> Self {
        MapSpec {
            layout: Layout::Roadside { spacing: 15.0, offset: 5.0, height: 6.0, alternate: true },
            lamp_half_extent: [0.3, 0.3, 0.1],
            points_per_lamp: 40,
        }
    }
}

impl MapSpec {
    pub fn validate(&self) -> Result<(), String> {
        if let Layout::Roadside { spacing, .. } = self.layout {
            if !(spacing > 0.0) {
                return Err("light spacing must be positive".into());
            }
        }
        if self.points_per_lamp == 0 {
            return Err("lamps need at least one point".into());
        }
        if self.lamp_half_extent.iter().any(|h| !(*h >= 0.0)) {
            return Err("lamp extents must be non-negative".into());
        }
        Ok(())
    }
}

/// Lamp head centers along the sampled path.
pub fn roadside_lights(truth: &[TrajectorySample], spacing: f64, offset: f64, height: f64, alternate: bool) -> Vec<Vector3<f64>> {
    let mut lights: Vec<Vector3<f64>> = Vec::new();
    let mut next = spacing / 2.0;
    let mut travelled = 0.0;
    let mut left = true;
    for w in truth.windows(2) {
        travelled += (w[1].pose.position - w[0].pose.position).norm();
        if travelled < next {
            continue;
        }
        next += spacing;
        let v = w[1].pose.velocity.xy();
        let normal = Vector2::new(-v.y, v.x).normalize();
        let side = if left { 1.0 } else { -1.0 };
        if alternate {
            left = !left;
        }
        let p = w[1].pose.position.xy() + normal * offset * side;
        // a path that crosses itself would otherwise get stacked lamps
        if lights.iter().all(|l| (l.xy() - p).norm() > 2.0) {
            lights.push(Vector3::new(p.x, p.y, height));
        }
    }
    lights
}

/// Cluster of points scattered around a lamp head; its center is the point mean.
pub fn lamp_cluster(id: usize, head: &Vector3<f64>, spec: &MapSpec, rng: &mut ChaCha8Rng) -> StreetlightCluster {
    let h = Vector3::from(spec.lamp_half_extent);
    let points = (0..spec.points_per_lamp)
        .map(|_| head + Vector3::from_fn(|i, _| if h[i] > 0.0 { rng.random_range(-h[i]..h[i]) } else { 0.0 }))
        .collect();
    StreetlightCluster::from_points(id, points)
}

/// The lamps the simulation draws detections from.
pub fn build_world(spec: &MapSpec, truth: &[TrajectorySample], rng: &mut ChaCha8Rng) -> Result<StreetlightMap, MapError> {
    let heads = match &spec.layout {
        Layout::File { path } => return load_map(path),
        Layout::Roadside { spacing, offset, height, alternate } => roadside_lights(truth, *spacing, *offset, *height, *alternate),
        Layout::Explicit { lights } => lights.iter().map(|l| Vector3::from(*l)).collect(),
    };
    let clusters = heads.iter().enumerate().map(|(i, h)| lamp_cluster(i, h, spec, rng)).collect();
    Ok(StreetlightMap::new("synthetic", clusters))
}

/// The surveyed map: every lamp shifted by an independent offset with
/// per-axis standard deviation `sigma`.
pub fn survey(map: &StreetlightMap, sigma: f64, rng: &mut ChaCha8Rng) -> StreetlightMap {
    let clusters = map
        .clusters
        .iter()
        .map(|c| {
            let offset: Vector3<f64> = Vector3::from_fn(|_, _| StandardNormal.sample(rng)) * sigma;
            StreetlightCluster::from_points(c.id, c.points.iter().map(|p| p + offset).collect())
        })
        .collect();
    StreetlightMap::new(map.map_id.clone(), clusters)
}
