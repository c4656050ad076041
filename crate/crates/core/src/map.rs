//! Streetlight map: DBSCAN clustering of labeled points and the JSON map file.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;
pub const NOISE: i64 = -1;
const CENTER_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed map file at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("unsupported map schema version {found} (expected {SCHEMA_VERSION})")]
    Version { found: u32 },
    #[error("invalid map: {0}")]
    Invalid(String),
    #[error("malformed point at line {line}: {message}")]
    PointParse { line: usize, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreetlightCluster {
    pub id: usize,
    pub center: Vector3<f64>,
    pub points: Vec<Vector3<f64>>,
}

impl StreetlightCluster {
    /// Cluster whose center is the mean of `points`.
    pub fn from_points(id: usize, points: Vec<Vector3<f64>>) -> Self {
        let center = mean(&points);
        StreetlightCluster { id, center, points }
    }
}

fn mean(points: &[Vector3<f64>]) -> Vector3<f64> {
    points.iter().fold(Vector3::zeros(), |acc, p| acc + p) / points.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreetlightMap {
    pub schema_version: u32,
    pub map_id: String,
    pub frame: String,
    pub clusters: Vec<StreetlightCluster>,
}

impl StreetlightMap {
    pub fn new(map_id: impl Into<String>, clusters: Vec<StreetlightCluster>) -> Self {
        StreetlightMap {
            schema_version: SCHEMA_VERSION,
            map_id: map_id.into(),
            frame: "world".to_string(),
            clusters,
        }
    }

    pub fn get(&self, id: usize) -> Option<&StreetlightCluster> {
        self.clusters.get(id).filter(|c| c.id == id)
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn validate(&self) -> Result<(), MapError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(MapError::Version { found: self.schema_version });
        }
        for (i, c) in self.clusters.iter().enumerate() {
            if c.id != i {
                return Err(MapError::Invalid(format!("cluster ids must be dense from 0; position {i} has id {}", c.id)));
            }
            if c.points.is_empty() {
                return Err(MapError::Invalid(format!("cluster {i} has no points")));
            }
            let all_finite = c.points.iter().chain(std::iter::once(&c.center)).all(|p| p.iter().all(|x| x.is_finite()));
            if !all_finite {
                return Err(MapError::Invalid(format!("cluster {i} has non-finite coordinates")));
            }
            let err = (mean(&c.points) - c.center).amax();
            if err > CENTER_TOL * (1.0 + c.center.amax()) {
                return Err(MapError::Invalid(format!("cluster {i} center is off its point mean by {err:e}")));
            }
        }
        Ok(())
    }
}

/// Density-based clustering. Labels are cluster indices in order of
/// discovery, `NOISE` for unclustered points. Expansion visits points in index
/// order so the result is deterministic for a given input order.
pub fn dbscan(points: &[Vector3<f64>], eps: f64, min_pts: usize) -> Vec<i64> {
    const UNVISITED: i64 = -2;
    let n = points.len();
    let mut labels = vec![UNVISITED; n];
    let eps2 = eps * eps;
    let neighbors = |i: usize| -> Vec<usize> {
        (0..n).filter(|&j| (points[j] - points[i]).norm_squared() <= eps2).collect()
    };

    let mut cluster = 0i64;
    for i in 0..n {
        if labels[i] != UNVISITED {
            continue;
        }
        let seeds = neighbors(i);
        if seeds.len() < min_pts {
            labels[i] = NOISE;
            continue;
        }
        labels[i] = cluster;
        let mut queue: std::collections::VecDeque<usize> = seeds.into_iter().filter(|&j| j != i).collect();
        while let Some(j) = queue.pop_front() {
            if labels[j] == NOISE {
                labels[j] = cluster;
            }
            if labels[j] != UNVISITED {
                continue;
            }
            labels[j] = cluster;
            let nb = neighbors(j);
            if nb.len() >= min_pts {
                queue.extend(nb.into_iter().filter(|&k| labels[k] == UNVISITED || labels[k] == NOISE));
            }
        }
        cluster += 1;
    }
    labels
}

/// Drops points whose mean distance to their `k` nearest neighbours exceeds
/// the population mean by more than `std_ratio` standard deviations.
pub fn statistical_outlier_filter(points: &[Vector3<f64>], k: usize, std_ratio: f64) -> Vec<Vector3<f64>> {
    if points.len() <= k || k == 0 {
        return points.to_vec();
    }
    let mean_dists: Vec<f64> = points
        .iter()
        .map(|p| {
            let mut d: Vec<f64> = points.iter().map(|q| (q - p).norm()).collect();
            d.sort_by(f64::total_cmp);
            d[1..=k].iter().sum::<f64>() / k as f64
        })
        .collect();
    let mu = mean_dists.iter().sum::<f64>() / mean_dists.len() as f64;
    let var = mean_dists.iter().map(|d| (d - mu).powi(2)).sum::<f64>() / mean_dists.len() as f64;
    let limit = mu + std_ratio * var.sqrt();
    points.iter().zip(&mean_dists).filter(|(_, &d)| d <= limit).map(|(p, _)| *p).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapBuildParams {
    pub eps: f64,
    pub min_pts: usize,
    /// `(k, std_ratio)` for the optional pre-clustering outlier filter.
    pub outlier_filter: Option<(usize, f64)>,
}

impl Default for MapBuildParams {
    fn default() -> Self {
        MapBuildParams { eps: 1.0, min_pts: 5, outlier_filter: None }
    }
}

/// Clusters labeled streetlight points into a map. Clusters are ordered by
/// center x, then y, and numbered from 0 in that order.
pub fn build_map(cloud: &[Vector3<f64>], params: &MapBuildParams) -> StreetlightMap {
    let filtered;
    let points = match params.outlier_filter {
        Some((k, ratio)) => {
            filtered = statistical_outlier_filter(cloud, k, ratio);
            &filtered[..]
        }
        None => cloud,
    };
    let labels = dbscan(points, params.eps, params.min_pts);
    let count = labels.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize);
    let mut groups: Vec<Vec<Vector3<f64>>> = vec![Vec::new(); count];
    for (p, &l) in points.iter().zip(&labels) {
        if l >= 0 {
            groups[l as usize].push(*p);
        }
    }
    let mut clusters: Vec<StreetlightCluster> = groups.into_iter().map(|g| StreetlightCluster::from_points(0, g)).collect();
    clusters.sort_by(|a, b| a.center.x.total_cmp(&b.center.x).then(a.center.y.total_cmp(&b.center.y)));
    for (i, c) in clusters.iter_mut().enumerate() {
        c.id = i;
    }
    if clusters.is_empty() {
        log::warn!("no clusters found in {} points", cloud.len());
    }
    StreetlightMap::new("streetlights", clusters)
}

pub fn to_json(map: &StreetlightMap) -> String {
    serde_json::to_string_pretty(map).expect("map serialization cannot fail")
}

pub fn from_json(text: &str) -> Result<StreetlightMap, MapError> {
    let map: StreetlightMap = serde_json::from_str(text).map_err(|e| MapError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    map.validate()?;
    Ok(map)
}

pub fn save_map(map: &StreetlightMap, path: &Path) -> Result<(), MapError> {
    fs::write(path, to_json(map)).map_err(|source| MapError::Io { path: path.display().to_string(), source })
}

pub fn load_map(path: &Path) -> Result<StreetlightMap, MapError> {
    let text = fs::read_to_string(path).map_err(|source| MapError::Io { path: path.display().to_string(), source })?;
    from_json(&text)
}

/// Whitespace-separated `x y z` per line; blank lines and `#` comments skipped.
pub fn parse_xyz(text: &str) -> Result<Vec<Vector3<f64>>, MapError> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 3 {
            return Err(MapError::PointParse { line: i + 1, message: format!("expected 3 coordinates, found {}", fields.len()) });
        }
        let mut xyz = [0.0; 3];
        for (k, f) in fields[..3].iter().enumerate() {
            xyz[k] = f
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| MapError::PointParse { line: i + 1, message: format!("invalid coordinate '{f}'") })?;
        }
        points.push(Vector3::from(xyz));
    }
    Ok(points)
}

pub fn load_points(path: &Path) -> Result<Vec<Vector3<f64>>, MapError> {
    let text = fs::read_to_string(path).map_err(|source| MapError::Io { path: path.display().to_string(), source })?;
    if text.trim_start().starts_with('{') {
        let map = from_json(&text)?;
        return Ok(map.clusters.into_iter().flat_map(|c| c.points).collect());
    }
    parse_xyz(&text)
}
