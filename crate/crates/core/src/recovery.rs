//! Re-localization after a tracking failure by exhaustive match enumeration.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::association::{Match, MatchSet};
use crate::camera::{apply_camera_update, reprojection_residual, CameraRig, CenterObservation, DetectionBox};
use crate::filter::{ErrorCovariance, FilterState};
use crate::map::StreetlightCluster;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoveryParams {
    /// Penalty per metre of horizontal position change.
    pub gamma_translation: f64,
    /// Penalty per radian of yaw change.
    pub gamma_yaw: f64,
    /// Penalty per detection left without a match.
    pub gamma_unmatched: f64,
    /// Combinations scoring at or above this are rejected.
    pub threshold: f64,
    /// Seconds without any positive match after which tracking counts as lost.
    pub lost_after: f64,
    /// Enumeration is refused beyond this many combinations.
    pub max_combinations: u64,
}

impl Default for RecoveryParams {
    fn default() -> Self {
        RecoveryParams {
            gamma_translation: 1.0,
            gamma_yaw: 5.0,
            gamma_unmatched: 50.0,
            threshold: 100.0,
            lost_after: 3.0,
            max_combinations: 100_000,
        }
    }
}

/// Accepted recoveries need strictly more than this many matches.
pub const MIN_MATCHES_EXCLUSIVE: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecoveryError {
    #[error("{count} match combinations exceed the budget of {budget}")]
    BudgetExceeded { count: u64, budget: u64 },
}

pub fn is_lost(elapsed_since_match: f64, params: &RecoveryParams) -> bool {
    elapsed_since_match > params.lost_after
}

/// `Σ_k C(n, k) · P(m, k)`: the number of partial one-to-one maps from `n`
/// detections into `m` clusters. Saturates at `u64::MAX`.
pub fn combination_count(n: usize, m: usize) -> u64 {
    let mut total: u64 = 0;
    for k in 0..=n.min(m) {
        let mut c: u64 = 1;
        for i in 0..k {
            // C(n, k) built incrementally stays integral at each step
            c = c.saturating_mul((n - i) as u64) / (i as u64 + 1);
        }
        let mut p: u64 = 1;
        for i in 0..k {
            p = p.saturating_mul((m - i) as u64);
        }
        total = total.saturating_add(c.saturating_mul(p));
    }
    total
}

/// Every assignment of each detection to a distinct cluster index or `None`,
/// in lexicographic order with `None` first.
pub fn enumerate_combinations(n: usize, m: usize) -> Vec<Vec<Option<usize>>> {
    fn rec(i: usize, n: usize, m: usize, used: &mut Vec<bool>, cur: &mut Vec<Option<usize>>, out: &mut Vec<Vec<Option<usize>>>) {
        if i == n {
            out.push(cur.clone());
            return;
        }
        cur.push(None);
        rec(i + 1, n, m, used, cur, out);
        cur.pop();
        for j in 0..m {
            if used[j] {
                continue;
            }
            used[j] = true;
            cur.push(Some(j));
            rec(i + 1, n, m, used, cur, out);
            cur.pop();
            used[j] = false;
        }
    }
    let mut out = Vec::new();
    rec(0, n, m, &mut vec![false; m], &mut Vec::with_capacity(n), &mut out);
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct CombinationScore {
    pub score: f64,
    pub matched: usize,
    pub state: FilterState,
    pub cov: ErrorCovariance,
}

/// Updates from the prior with one combination and scores the result:
/// mean reprojection residual (0 with no matches) plus penalties on the
/// horizontal position change, the yaw change and the unmatched count.
/// `None` if the update fails.
#[allow(clippy::too_many_arguments)]
pub fn score_combination(
    combination: &[Option<usize>],
    detections: &[DetectionBox],
    candidates: &[StreetlightCluster],
    state: &FilterState,
    cov: &ErrorCovariance,
    rig: &CameraRig,
    pixel_sigma: f64,
    params: &RecoveryParams,
) -> Option<CombinationScore> {
    let obs: Vec<CenterObservation> = combination
        .iter()
        .zip(detections)
        .filter_map(|(c, d)| c.map(|j| CenterObservation { pixel: d.center, center: candidates[j].center }))
        .collect();
    let (post, post_cov) = if obs.is_empty() {
        (*state, *cov)
    } else {
        let (s, c, _) = apply_camera_update(state, cov, &obs, &rig.extrinsics, &rig.intrinsics, pixel_sigma).ok()?;
        (s, c)
    };
    let residuals: Vec<f64> = obs
        .iter()
        .map(|o| reprojection_residual(&o.pixel, &o.center, &post.pose, &rig.extrinsics, &rig.intrinsics))
        .collect::<Option<_>>()?;
    let mean_residual = if residuals.is_empty() { 0.0 } else { residuals.iter().sum::<f64>() / residuals.len() as f64 };
    let dp = (post.pose.position - state.pose.position).xy().norm();
    let dyaw = (state.pose.rotation.inverse() * post.pose.rotation).yaw().abs();
    let unmatched = detections.len() - obs.len();
    let score = mean_residual + params.gamma_translation * dp + params.gamma_yaw * dyaw + params.gamma_unmatched * unmatched as f64;
    Some(CombinationScore { score, matched: obs.len(), state: post, cov: post_cov })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Recovered {
    pub state: FilterState,
    pub cov: ErrorCovariance,
    pub matches: MatchSet,
    pub score: f64,
}

/// Tries every combination and returns the best-scoring one with more than
/// two matches if it beats the threshold. `candidates` should already be
/// restricted to clusters near the dead-reckoned pose.
#[allow(clippy::too_many_arguments)]
pub fn attempt_recovery(
    detections: &[DetectionBox],
    candidates: &[StreetlightCluster],
    state: &FilterState,
    cov: &ErrorCovariance,
    rig: &CameraRig,
    pixel_sigma: f64,
    params: &RecoveryParams,
) -> Result<Option<Recovered>, RecoveryError> {
    let (n, m) = (detections.len(), candidates.len());
    let count = combination_count(n, m);
    if count > params.max_combinations {
        return Err(RecoveryError::BudgetExceeded { count, budget: params.max_combinations });
    }
    let combos = enumerate_combinations(n, m);
    let best = combos
        .par_iter()
        .enumerate()
        .filter(|(_, c)| c.iter().flatten().count() > MIN_MATCHES_EXCLUSIVE)
        .filter_map(|(i, c)| score_combination(c, detections, candidates, state, cov, rig, pixel_sigma, params).map(|s| (i, s)))
        .min_by(|(ia, a), (ib, b)| a.score.total_cmp(&b.score).then(ia.cmp(ib)));
    let Some((index, best)) = best else {
        return Ok(None);
    };
    if best.score >= params.threshold {
        return Ok(None);
    }
    let pairs = combos[index]
        .iter()
        .enumerate()
        .map(|(i, c)| Match { detection: i, cluster: c.map(|j| candidates[j].id), score: 0.0, source: detections[i].source })
        .collect();
    Ok(Some(Recovered { state: best.state, cov: best.cov, matches: MatchSet { pairs }, score: best.score }))
}
