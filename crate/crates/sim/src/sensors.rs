//! Sensor streams synthesized from ground truth.

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use nightrider_core::camera::{BoxSource, CameraRig, DetectionBox};
use nightrider_core::lie::so3_log;
use nightrider_core::map::StreetlightMap;
use nightrider_core::odometer::OdomSample;
use nightrider_core::segmentation::IntensityImage;
use nightrider_core::{ImuSample, Rotation};

use crate::scenario::{DetectionConfig, ImuModel, NoiseLevels};
use crate::trajectory::{gravity, TrajectorySample};

fn normal3(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::from_fn(|_, _| StandardNormal.sample(rng))
}

/// IMU readings and the true biases in effect for each of them.
#[derive(Clone, Debug, PartialEq)]
pub struct ImuStream {
    /// One reading per truth interval `[t_k, t_k+1)`.
    pub samples: Vec<ImuSample>,
    pub bias_gyro: Vec<Vector3<f64>>,
    pub bias_accel: Vec<Vector3<f64>>,
}

/// Noise-free body rate and specific force over truth interval `k`.
pub fn ideal_imu(truth: &[TrajectorySample], k: usize, model: ImuModel) -> (Vector3<f64>, Vector3<f64>) {
    let (a, b) = (&truth[k], &truth[k + 1]);
    match model {
        ImuModel::Analytic => (a.omega, a.specific_force(&gravity())),
        ImuModel::DiscreteConsistent => {
            let dt = b.timestamp - a.timestamp;
            let delta = a.pose.rotation.inverse() * b.pose.rotation;
            let omega = so3_log(delta.matrix()).expect("rotation from truth") / dt;
            let accel_world = (b.pose.velocity - a.pose.velocity) / dt;
            (omega, a.pose.rotation.inverse_transform(&(accel_world - gravity())))
        }
    }
}

/// `ω̃ = ω + b_ω + n`, `ã = Rᵀ(a − g) + b_a + n`, with random-walk biases.
pub fn simulate_imu(truth: &[TrajectorySample], noise: &NoiseLevels, model: ImuModel, rng: &mut ChaCha8Rng) -> ImuStream {
    let n = truth.len().saturating_sub(1);
    let mut out = ImuStream { samples: Vec::with_capacity(n), bias_gyro: Vec::with_capacity(n), bias_accel: Vec::with_capacity(n) };
    let mut bg = normal3(rng) * noise.initial_gyro_bias;
    let mut ba = normal3(rng) * noise.initial_accel_bias;
    for k in 0..n {
        let dt = truth[k + 1].timestamp - truth[k].timestamp;
        let (omega, force) = ideal_imu(truth, k, model);
        let gyro = omega + bg + normal3(rng) * (noise.gyro / dt.sqrt());
        let accel = force + ba + normal3(rng) * (noise.accel / dt.sqrt());
        out.samples.push(ImuSample { gyro, accel, timestamp: truth[k].timestamp });
        out.bias_gyro.push(bg);
        out.bias_accel.push(ba);
        bg += normal3(rng) * (noise.gyro_bias_walk * dt.sqrt());
        ba += normal3(rng) * (noise.accel_bias_walk * dt.sqrt());
    }
    out
}

/// Odometer-frame velocity plus white noise at every `decimation`-th truth
/// sample. `mounting` rotates body-frame vectors into the odometer frame.
pub fn simulate_odom(truth: &[TrajectorySample], sigma: &Vector3<f64>, mounting: &Rotation, decimation: usize, rng: &mut ChaCha8Rng) -> Vec<OdomSample> {
    truth
        .iter()
        .step_by(decimation.max(1))
        .map(|s| OdomSample {
            velocity: mounting.transform(&s.pose.rotation.inverse_transform(&s.pose.velocity)) + normal3(rng).component_mul(sigma),
            timestamp: s.timestamp,
        })
        .collect()
}

/// A lamp as it appears in one frame, before detector effects.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisibleLight {
    pub cluster: usize,
    pub range: f64,
    /// Pixel rectangle `[min, max)` covering the lamp-head points.
    pub min: [i64; 2],
    pub max: [i64; 2],
}

impl VisibleLight {
    pub fn center(&self) -> Vector2<f64> {
        Vector2::new(0.5 * (self.min[0] + self.max[0] - 1) as f64, 0.5 * (self.min[1] + self.max[1] - 1) as f64)
    }

    pub fn size(&self) -> Vector2<f64> {
        Vector2::new((self.max[0] - self.min[0]) as f64, (self.max[1] - self.min[1]) as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraFrame {
    /// Index of the truth sample the frame is taken at.
    pub tick: usize,
    pub timestamp: f64,
    pub detections: Vec<DetectionBox>,
    /// Which lamp produced each detection; `None` for false positives.
    pub sources: Vec<Option<usize>>,
    /// Bright blobs in the frame: lamps and distractors.
    pub blobs: Vec<VisibleLight>,
}

impl CameraFrame {
    /// Draws the blobs into a dark frame for the segmentation path.
    pub fn render(&self, width: usize, height: usize) -> IntensityImage {
        let mut img = IntensityImage::new(width, height);
        for b in &self.blobs {
            img.fill_rect(b.min[0], b.min[1], b.max[0], b.max[1], 255);
        }
        img
    }

    /// The lamp whose blob covers `pixel`, for scoring matches made on
    /// segmentation boxes.
    pub fn lamp_at(&self, pixel: &Vector2<f64>) -> Option<usize> {
        let (x, y) = (pixel.x.round() as i64, pixel.y.round() as i64);
        self.blobs
            .iter()
            .find(|b| b.cluster != usize::MAX && (b.min[0]..b.max[0]).contains(&x) && (b.min[1]..b.max[1]).contains(&y))
            .map(|b| b.cluster)
    }
}

/// Lamps in front of the camera whose center projects into the image, up to `range`.
pub fn visible_lights(pose: &nightrider_core::ExtendedPose, map: &StreetlightMap, rig: &CameraRig, range: f64) -> Vec<VisibleLight> {
    let mut out = Vec::new();
    for c in &map.clusters {
        let dist = (c.center - pose.position).norm();
        if dist > range {
            continue;
        }
        let Some(center) = rig.project(&c.center, pose) else {
            continue;
        };
        if !rig.intrinsics.in_image(&center) {
            continue;
        }
        let px: Vec<Vector2<f64>> = c.points.iter().filter_map(|p| rig.project(p, pose)).collect();
        let lo = px.iter().fold(center, |a, p| a.inf(p));
        let hi = px.iter().fold(center, |a, p| a.sup(p));
        // one pixel of glow around the rounded extremes
        out.push(VisibleLight {
            cluster: c.id,
            range: dist,
            min: [lo.x.round() as i64 - 1, lo.y.round() as i64 - 1],
            max: [hi.x.round() as i64 + 2, hi.y.round() as i64 + 2],
        });
    }
    out
}

/// Detector output for every `decimation`-th truth sample.
pub fn simulate_detections(
    truth: &[TrajectorySample],
    map: &StreetlightMap,
    rig: &CameraRig,
    cfg: &DetectionConfig,
    pixel_sigma: f64,
    decimation: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<CameraFrame> {
    let k = &rig.intrinsics;
    let fp = (cfg.false_positive_rate > 0.0).then(|| Poisson::new(cfg.false_positive_rate).expect("positive rate"));
    let mut frames = Vec::new();
    for (tick, s) in truth.iter().enumerate().step_by(decimation.max(1)) {
        let mut frame = CameraFrame { tick, timestamp: s.timestamp, detections: Vec::new(), sources: Vec::new(), blobs: Vec::new() };
        // draws happen whether or not the frame is blacked out so streams stay aligned
        let lights = visible_lights(&s.pose, map, rig, cfg.render_range);
        let mut detections = Vec::new();
        for l in &lights {
            let dropped = rng.random_bool(cfg.dropout);
            let jitter = Vector2::new(StandardNormal.sample(rng), StandardNormal.sample(rng)) * pixel_sigma;
            let size = l.size();
            if dropped || l.range > cfg.detector_range || size.min() < cfg.min_box_size {
                continue;
            }
            let truth_center = rig.project(&map.clusters[l.cluster].center, &s.pose).expect("visible");
            detections.push((DetectionBox::new(truth_center + jitter, size, BoxSource::Detector), Some(l.cluster)));
        }
        let spurious = fp.as_ref().map_or(0, |d| d.sample(rng) as usize);
        let mut distractors = Vec::new();
        for _ in 0..spurious {
            let c = Vector2::new(rng.random_range(0.0..f64::from(k.width)), rng.random_range(0.0..f64::from(k.height)));
            let e = Vector2::new(rng.random_range(4.0..20.0), rng.random_range(4.0..20.0));
            detections.push((DetectionBox::new(c, e, BoxSource::Detector), None));
            let lo = c - e / 2.0;
            distractors.push(VisibleLight {
                cluster: usize::MAX,
                range: f64::INFINITY,
                min: [lo.x.round() as i64, lo.y.round() as i64],
                max: [(lo.x + e.x).round() as i64, (lo.y + e.y).round() as i64],
            });
        }
        if !cfg.in_blackout(s.timestamp) {
            frame.detections = detections.iter().map(|d| d.0).collect();
            frame.sources = detections.iter().map(|d| d.1).collect();
            frame.blobs = lights.into_iter().chain(distractors).collect();
        }
        frames.push(frame);
    }
    frames
}
