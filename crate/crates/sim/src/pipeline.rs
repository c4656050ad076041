//! World generation and the full localization loop.

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use nightrider_core::association::{associate, sigma_proj};
use nightrider_core::camera::{apply_camera_update, CameraRig, CenterObservation, DetectionBox};
use nightrider_core::extension::{degeneration_match, extend_matches, update_degeneracy, DegenState};
use nightrider_core::filter::{nees, propagate_with, state_error, ErrorCovariance, NoiseConfig};
use nightrider_core::lie::{se23_exp, TangentXi, Vector9};
use nightrider_core::map::{MapError, StreetlightCluster, StreetlightMap};
use nightrider_core::odometer::{apply_odom_update, transform_odom, OdomExtrinsics, OdomSample};
use nightrider_core::recovery::{attempt_recovery, is_lost, MIN_MATCHES_EXCLUSIVE};
use nightrider_core::segmentation::segment_boxes;
use nightrider_core::{FilterState, Rotation};

use crate::metrics::StampedPose;
use crate::scenario::{PipelineOptions, Scenario, ScenarioError};
use crate::sensors::{simulate_detections, simulate_imu, simulate_odom, CameraFrame, ImuStream};
use crate::trajectory::{generate_truth, TrajectorySample};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Map(#[from] MapError),
}

/// Independent random streams, one per consumer, so changing one sensor's
/// settings leaves the others' draws untouched.
#[derive(Clone, Copy, Debug)]
pub enum Stream {
    Map = 1,
    Imu = 2,
    Odom = 3,
    Camera = 4,
    Init = 5,
    Survey = 6,
}

pub fn rng_for(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Ground truth, map and every sensor stream of one scenario.
#[derive(Clone, Debug)]
pub struct World {
    pub scenario: Scenario,
    pub truth: Vec<TrajectorySample>,
    /// The map handed to the filter.
    pub map: StreetlightMap,
    /// Where the lamps really are; differs from `map` by the survey error.
    pub true_map: StreetlightMap,
    pub imu: ImuStream,
    pub odom: Vec<OdomSample>,
    pub frames: Vec<CameraFrame>,
}

impl World {
    pub fn generate(scenario: &Scenario) -> Result<Self, SimError> {
        scenario.validate()?;
        let truth = generate_truth(&scenario.trajectory, scenario.duration, scenario.rates.imu).map_err(ScenarioError::Invalid)?;
        let true_map = crate::world::build_world(&scenario.map, &truth, &mut rng_for(scenario.seed, Stream::Map))?;
        let map = if scenario.noise.map > 0.0 {
            crate::world::survey(&true_map, scenario.noise.map, &mut rng_for(scenario.seed, Stream::Survey))
        } else {
            true_map.clone()
        };
        let m = scenario.noise.odom_misalignment;
        let imu = simulate_imu(&truth, &scenario.noise, scenario.imu_model, &mut rng_for(scenario.seed, Stream::Imu));
        let odom = simulate_odom(
            &truth,
            &scenario.noise.odom_std(),
            &Rotation::from_euler(m[0], m[1], m[2]),
            scenario.rates.decimation(scenario.rates.odom),
            &mut rng_for(scenario.seed, Stream::Odom),
        );
        let frames = simulate_detections(
            &truth,
            &true_map,
            &scenario.camera.rig(),
            &scenario.detections,
            scenario.noise.pixel,
            scenario.rates.decimation(scenario.rates.camera),
            &mut rng_for(scenario.seed, Stream::Camera),
        );
        Ok(World { scenario: scenario.clone(), truth, map, true_map, imu, odom, frames })
    }

    /// True biases in effect at truth sample `tick`.
    pub fn biases_at(&self, tick: usize) -> (Vector3<f64>, Vector3<f64>) {
        let n = self.imu.bias_gyro.len();
        if n == 0 {
            return (Vector3::zeros(), Vector3::zeros());
        }
        let k = tick.min(n - 1);
        (self.imu.bias_gyro[k], self.imu.bias_accel[k])
    }

    pub fn truth_poses(&self) -> Vec<StampedPose> {
        self.truth.iter().map(|s| StampedPose { t: s.timestamp, position: s.pose.position, rotation: s.pose.rotation }).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Association,
    Extension,
    Degeneration,
    Recovery,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub t: f64,
    pub stage: Stage,
    pub detection: usize,
    pub cluster: usize,
    /// Lamp that actually produced the box, when known.
    pub truth_cluster: Option<usize>,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub kind: String,
    pub detail: String,
}

/// Filter output after all updates of one camera frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimateRecord {
    pub tick: usize,
    pub t: f64,
    pub state: FilterState,
    pub cov: ErrorCovariance,
}

#[derive(Clone, Debug, Default)]
pub struct RunArtifacts {
    pub estimates: Vec<EstimateRecord>,
    pub matches: Vec<MatchRecord>,
    pub events: Vec<Event>,
}

impl RunArtifacts {
    pub fn estimate_poses(&self) -> Vec<StampedPose> {
        self.estimates
            .iter()
            .map(|e| StampedPose { t: e.t, position: e.state.pose.position, rotation: e.state.pose.rotation })
            .collect()
    }

    /// NEES of the full 15-dim error at every recorded estimate.
    pub fn nees_series(&self, world: &World) -> Vec<f64> {
        self.estimates
            .iter()
            .filter_map(|e| {
                let (bg, ba) = world.biases_at(e.tick);
                nees(&state_error(&e.state, &world.truth[e.tick].pose, &bg, &ba), &e.cov)
            })
            .collect()
    }

    pub fn position_errors(&self, world: &World) -> Vec<(f64, Vector3<f64>)> {
        self.estimates.iter().map(|e| (e.t, e.state.pose.position - world.truth[e.tick].pose.position)).collect()
    }
}

/// Initial estimate drawn around the truth from the configured uncertainty.
pub fn initial_estimate(world: &World) -> (FilterState, ErrorCovariance) {
    let s = &world.scenario;
    let mut rng = rng_for(s.seed, Stream::Init);
    let mut n = || -> f64 { StandardNormal.sample(&mut rng) };
    let i = &s.initial;
    let xi = Vector9::from_fn(|k, _| {
        let sigma = [i.rotation, i.velocity, i.position][k / 3];
        sigma * n()
    });
    let truth = world.truth[0].pose;
    let mut state = FilterState::new(se23_exp(&TangentXi::from_vector(&xi)).compose(&truth), world.truth[0].timestamp);
    state.bias_gyro = Vector3::zeros();
    state.bias_accel = Vector3::zeros();
    (state, s.initial_covariance())
}

struct Localizer<'a> {
    world: &'a World,
    options: PipelineOptions,
    rig: CameraRig,
    noise: NoiseConfig,
    state: FilterState,
    cov: ErrorCovariance,
    degen: DegenState,
    last_match: f64,
    /// First frame with detections since tracking was lost.
    reobserved: Option<f64>,
    out: RunArtifacts,
}

/// Runs the filter over a generated world with the scenario's options.
pub fn run_pipeline(world: &World) -> RunArtifacts {
    run_with_options(world, world.scenario.options)
}

pub fn run_with_options(world: &World, options: PipelineOptions) -> RunArtifacts {
    let (state, cov) = initial_estimate(world);
    let mut loc = Localizer {
        world,
        options,
        rig: world.scenario.camera.rig(),
        noise: world.scenario.noise.filter_noise(),
        state,
        cov,
        degen: DegenState::default(),
        last_match: world.truth[0].timestamp,
        reobserved: None,
        out: RunArtifacts::default(),
    };
    loc.run();
    loc.out
}

/// Generates the world for a scenario and runs it.
pub fn simulate_and_run(scenario: &Scenario) -> Result<(World, RunArtifacts), SimError> {
    let world = World::generate(scenario)?;
    let out = run_pipeline(&world);
    Ok((world, out))
}

impl Localizer<'_> {
    fn event(&mut self, t: f64, kind: &str, detail: String) {
        log::debug!("{t:.3} {kind}: {detail}");
        self.out.events.push(Event { t, kind: kind.into(), detail });
    }

    fn run(&mut self) {
        let world = self.world;
        let s = &world.scenario;
        let odom_every = s.rates.decimation(s.rates.odom);
        let cam_every = s.rates.decimation(s.rates.camera);
        let mut frames = world.frames.iter().peekable();
        for tick in 0..world.truth.len() {
            let t = world.truth[tick].timestamp;
            if tick > 0 {
                let dt = t - world.truth[tick - 1].timestamp;
                match propagate_with(&self.state, &self.cov, &world.imu.samples[tick - 1], dt, &self.noise, s.filter.transition) {
                    Ok((st, c)) => (self.state, self.cov) = (st, c),
                    Err(e) => self.event(t, "propagation_error", e.to_string()),
                }
            }
            if tick % odom_every == 0 {
                if let Some(o) = world.odom.get(tick / odom_every) {
                    self.odom_update(o, tick);
                }
            }
            if tick % cam_every == 0 {
                while frames.peek().is_some_and(|f| f.tick < tick) {
                    frames.next();
                }
                if self.options.vision {
                    if let Some(frame) = frames.peek().filter(|f| f.tick == tick) {
                        self.camera_frame(frame);
                    }
                }
                self.out.estimates.push(EstimateRecord { tick, t, state: self.state, cov: self.cov });
            }
        }
    }

    fn odom_update(&mut self, sample: &OdomSample, tick: usize) {
        let s = &self.world.scenario;
        let std = s.noise.odom_std().map(|x| x.max(1e-3));
        let ext = OdomExtrinsics { noise: Matrix3::from_diagonal(&std.component_mul(&std)), ..OdomExtrinsics::identity(0.0) };
        let gyro = self.world.imu.samples.get(tick).map_or(Vector3::zeros(), |i| i.gyro);
        let (v, n) = transform_odom(sample, &ext, &gyro, &self.state.bias_gyro, &self.noise.gyro, &self.noise.gyro_bias);
        match apply_odom_update(&self.state, &self.cov, &v, &n) {
            Ok((st, c)) => (self.state, self.cov) = (st, c),
            Err(e) => self.event(sample.timestamp, "odom_update_error", e.to_string()),
        }
    }

    fn camera_update(&mut self, t: f64, obs: &[CenterObservation], stage: &str) -> bool {
        if obs.is_empty() {
            return false;
        }
        let s = &self.world.scenario;
        match apply_camera_update(&self.state, &self.cov, obs, &self.rig.extrinsics, &self.rig.intrinsics, s.noise.pixel.max(0.1)) {
            Ok((st, c, _)) => {
                (self.state, self.cov) = (st, c);
                true
            }
            Err(e) => {
                self.event(t, "camera_update_error", format!("{stage}: {e}"));
                false
            }
        }
    }

    /// Pixel-residual Mahalanobis distance of a detection against a cluster.
    fn mahalanobis(&self, det: &DetectionBox, cluster: &StreetlightCluster) -> Option<f64> {
        let alpha = self.world.scenario.filter.score.alpha;
        let px = self.rig.project(&cluster.center, &self.state.pose)?;
        let sigma = sigma_proj(&self.state, &self.cov, &cluster.center, &self.rig, alpha)?;
        let r: Vector2<f64> = det.center - px;
        Some(r.dot(&(sigma.try_inverse()? * r)).sqrt())
    }

    fn camera_frame(&mut self, frame: &CameraFrame) {
        let world = self.world;
        let s = &world.scenario;
        let clusters = &world.map.clusters;
        let t = frame.timestamp;
        let dets = &frame.detections;
        let mut matched: Vec<usize> = Vec::new();
        let mut used_dets = vec![false; dets.len()];

        let lost = self.options.recovery && is_lost(t - self.last_match, &s.filter.recovery);
        let mut recovered = false;
        if lost && !dets.is_empty() {
            // a lost filter first tries to re-localize by brute force and
            // only falls back to association once its patience runs out
            let since = *self.reobserved.get_or_insert(t);
            if dets.len() > MIN_MATCHES_EXCLUSIVE {
                recovered = self.try_recovery(frame, &mut matched, &mut used_dets);
            }
            if !recovered && t - since < s.filter.recovery_patience {
                return;
            }
        }

        if !recovered && !dets.is_empty() {
            let ms = associate(dets, clusters, &self.state, &self.cov, &self.rig, &s.filter.score);
            let mut obs = Vec::new();
            for m in ms.matched() {
                let id = m.cluster.expect("matched pair");
                let c = &clusters[id];
                if let Some(gate) = s.filter.association_gate {
                    if self.mahalanobis(&dets[m.detection], c).is_none_or(|d| d > gate) {
                        continue;
                    }
                }
                obs.push(CenterObservation { pixel: dets[m.detection].center, center: c.center });
                self.log_match(t, Stage::Association, m.detection, id, frame.sources.get(m.detection).copied().flatten(), m.score);
                matched.push(id);
                used_dets[m.detection] = true;
            }
            self.camera_update(t, &obs, "association");
        }

        let need_segmentation = self.options.extension || (self.options.degeneration && self.degen.degenerate);
        let seg_boxes = if need_segmentation && !frame.blobs.is_empty() {
            let k = &self.rig.intrinsics;
            segment_boxes(&frame.render(k.width as usize, k.height as usize), &s.filter.segmentation)
        } else {
            Vec::new()
        };

        let mut used_seg = vec![false; seg_boxes.len()];
        if self.options.extension && !seg_boxes.is_empty() {
            let unmatched: Vec<&StreetlightCluster> = clusters.iter().filter(|c| !matched.contains(&c.id)).collect();
            let ext = extend_matches(&seg_boxes, &unmatched, &self.state, &self.rig, s.filter.extension_range);
            let obs: Vec<_> = ext.iter().map(|e| CenterObservation { pixel: seg_boxes[e.box_index].center, center: clusters[e.cluster].center }).collect();
            for e in &ext {
                self.log_match(t, Stage::Extension, e.box_index, e.cluster, frame.lamp_at(&seg_boxes[e.box_index].center), e.ratio);
                matched.push(e.cluster);
                used_seg[e.box_index] = true;
            }
            self.camera_update(t, &obs, "extension");
        }

        if self.options.degeneration {
            if self.degen.degenerate {
                self.degeneration_step(frame, &seg_boxes, &used_seg, &mut matched, &used_dets);
            }
            let centers: Vec<(usize, Vector3<f64>)> = matched.iter().map(|&id| (id, clusters[id].center)).collect();
            let next = update_degeneracy(&self.degen, t, &centers, &s.filter.degeneration);
            if next.degenerate != self.degen.degenerate {
                let kind = if next.degenerate { "degeneracy_start" } else { "degeneracy_end" };
                self.event(t, kind, format!("line residual {:.3} m", next.residual));
            }
            self.degen = next;
        }

        if !matched.is_empty() {
            self.last_match = t;
            self.reobserved = None;
        }
    }

    fn log_match(&mut self, t: f64, stage: Stage, detection: usize, cluster: usize, truth_cluster: Option<usize>, score: f64) {
        self.out.matches.push(MatchRecord { t, stage, detection, cluster, truth_cluster, score });
    }

    /// Clusters near the dead-reckoned pose that could appear in the image.
    fn recovery_candidates(&self) -> Vec<StreetlightCluster> {
        let s = &self.world.scenario;
        let k = &self.rig.intrinsics;
        let (w, h) = (k.width as f64, k.height as f64);
        let p = self.state.pose.position;
        let mut near: Vec<&StreetlightCluster> = self
            .world
            .map
            .clusters
            .iter()
            .filter(|c| (c.center - p).norm() <= s.filter.score.max_range)
            .filter(|c| {
                // generous margin: the pose is expected to have drifted
                self.rig.project(&c.center, &self.state.pose).is_some_and(|px| px.x > -0.5 * w && px.x < 1.5 * w && px.y > -0.5 * h && px.y < 1.5 * h)
            })
            .collect();
        near.sort_by(|a, b| (a.center - p).norm().total_cmp(&(b.center - p).norm()).then(a.id.cmp(&b.id)));
        near.truncate(s.filter.recovery_max_candidates);
        near.into_iter().cloned().collect()
    }

    fn try_recovery(&mut self, frame: &CameraFrame, matched: &mut Vec<usize>, used_dets: &mut [bool]) -> bool {
        let s = &self.world.scenario;
        let t = frame.timestamp;
        // largest boxes first: near lamps are the most reliable
        let mut order: Vec<usize> = (0..frame.detections.len()).collect();
        order.sort_by(|&a, &b| {
            let area = |i: usize| frame.detections[i].extents.x * frame.detections[i].extents.y;
            area(b).total_cmp(&area(a)).then(a.cmp(&b))
        });
        order.truncate(s.filter.recovery_max_detections);
        let dets: Vec<DetectionBox> = order.iter().map(|&i| frame.detections[i]).collect();
        let candidates = self.recovery_candidates();
        if candidates.len() <= 2 {
            return false;
        }
        let pixel_sigma = s.noise.pixel.max(0.1);
        match attempt_recovery(&dets, &candidates, &self.state, &self.cov, &self.rig, pixel_sigma, &s.filter.recovery) {
            Ok(Some(r)) => {
                let jump = (r.state.pose.position - self.state.pose.position).norm();
                (self.state, self.cov) = (r.state, r.cov);
                for m in r.matches.matched() {
                    let det = order[m.detection];
                    let id = m.cluster.expect("matched pair");
                    self.log_match(t, Stage::Recovery, det, id, frame.sources.get(det).copied().flatten(), r.score);
                    matched.push(id);
                    used_dets[det] = true;
                }
                self.event(t, "recovered", format!("score {:.3}, {} matches, position moved {jump:.3} m", r.score, r.matches.matched_count()));
                true
            }
            Ok(None) => {
                self.event(t, "recovery_rejected", format!("{} detections, {} candidates", dets.len(), candidates.len()));
                false
            }
            Err(e) => {
                self.event(t, "recovery_error", e.to_string());
                false
            }
        }
    }

    /// While the matched lamps are collinear, looks for newly visible lamps
    /// off the fitted line and matches them through tall rectangles.
    fn degeneration_step(&mut self, frame: &CameraFrame, seg_boxes: &[DetectionBox], used_seg: &[bool], matched: &mut Vec<usize>, used_dets: &[bool]) {
        let s = &self.world.scenario;
        let params = &s.filter.degeneration;
        let clusters = &self.world.map.clusters;
        let new_clusters: Vec<&StreetlightCluster> = clusters
            .iter()
            .filter(|c| !matched.contains(&c.id) && !self.degen.contains(c.id))
            .filter(|c| (c.center - self.state.pose.position).norm() <= s.filter.extension_range)
            .filter(|c| self.degen.off_line_distance(&c.center).is_some_and(|d| d >= params.line_threshold))
            .filter(|c| self.rig.project(&c.center, &self.state.pose).is_some())
            .collect();
        if new_clusters.is_empty() {
            return;
        }
        let mut boxes: Vec<DetectionBox> =
            frame.detections.iter().zip(used_dets).filter(|(_, used)| !**used).map(|(d, _)| *d).collect();
        let claimed: Vec<&DetectionBox> = frame.detections.iter().zip(used_dets).filter(|(_, u)| **u).map(|(d, _)| d).collect();
        // boxes already explained by a lamp we know about are not offered
        let known: Vec<Vector2<f64>> = clusters
            .iter()
            .filter(|c| !new_clusters.iter().any(|n| n.id == c.id))
            .filter(|c| (c.center - self.state.pose.position).norm() <= s.filter.extension_range)
            .filter_map(|c| self.rig.project(&c.center, &self.state.pose))
            .collect();
        boxes.extend(
            seg_boxes
                .iter()
                .zip(used_seg)
                .filter(|(b, used)| !**used && !claimed.iter().any(|d| b.contains(&d.center)) && !known.iter().any(|p| b.contains(p)))
                .map(|(b, _)| *b),
        );
        let pairs = degeneration_match(&boxes, &new_clusters, &self.state, &self.rig, params);
        let obs: Vec<_> = pairs.iter().map(|&(b, id)| CenterObservation { pixel: boxes[b].center, center: clusters[id].center }).collect();
        for &(b, id) in &pairs {
            self.log_match(frame.timestamp, Stage::Degeneration, b, id, frame.lamp_at(&boxes[b].center), 0.0);
            matched.push(id);
        }
        if !pairs.is_empty() {
            self.event(frame.timestamp, "degeneration_match", format!("{} new lamps", pairs.len()));
        }
        self.camera_update(frame.timestamp, &obs, "degeneration");
    }
}
