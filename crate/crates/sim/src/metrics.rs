//! Trajectory error metrics.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use nightrider_core::Rotation;

/// Maximum timestamp gap for two samples to be paired.
pub const MATCH_TOLERANCE: f64 = 0.005;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StampedPose {
    pub t: f64,
    pub position: Vector3<f64>,
    pub rotation: Rotation,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ate {
    pub translation_rmse: f64,
    pub rotation_rmse_deg: f64,
    pub pairs: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no estimate lies within {MATCH_TOLERANCE} s of a truth sample")]
    EmptyOverlap,
}

/// Index of the truth sample nearest in time to `t`, if within tolerance.
/// `truth` must be sorted by time.
pub fn nearest(truth: &[StampedPose], t: f64) -> Option<usize> {
    let i = truth.partition_point(|p| p.t < t);
    let mut best: Option<usize> = None;
    for j in [i.wrapping_sub(1), i] {
        if j < truth.len()
            && (truth[j].t - t).abs() <= MATCH_TOLERANCE + 1e-12
            && best.is_none_or(|b| (truth[j].t - t).abs() < (truth[b].t - t).abs())
        {
            best = Some(j);
        }
    }
    best
}

/// RMSE of translation norms and rotation angles over time-paired samples.
/// No alignment is applied: both trajectories share the world frame.
pub fn compute_ate(estimate: &[StampedPose], truth: &[StampedPose]) -> Result<Ate, MetricsError> {
    let mut sq_t = 0.0;
    let mut sq_r = 0.0;
    let mut pairs = 0;
    for e in estimate {
        let Some(j) = nearest(truth, e.t) else {
            continue;
        };
        let g = &truth[j];
        sq_t += (e.position - g.position).norm_squared();
        sq_r += (e.rotation.inverse() * g.rotation).angle().powi(2);
        pairs += 1;
    }
    if pairs == 0 {
        return Err(MetricsError::EmptyOverlap);
    }
    Ok(Ate {
        translation_rmse: (sq_t / pairs as f64).sqrt(),
        rotation_rmse_deg: (sq_r / pairs as f64).sqrt().to_degrees(),
        pairs,
    })
}
