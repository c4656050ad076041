//! Scenario configuration: everything needed to regenerate a run from a seed.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use nightrider_core::association::ScoreParams;
use nightrider_core::camera::{CamExtrinsics, CameraIntrinsics, CameraRig};
use nightrider_core::extension::DegenParams;
use nightrider_core::filter::{ErrorCovariance, NoiseConfig, TransitionMethod};
use nightrider_core::recovery::RecoveryParams;
use nightrider_core::segmentation::SegmentationParams;

use crate::trajectory::TrajectorySpec;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("cannot read scenario {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed scenario at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Rates {
    pub imu: f64,
    pub odom: f64,
    pub camera: f64,
}

impl Default for Rates {
    fn default() -> Self {
        Rates { imu: 200.0, odom: 10.0, camera: 10.0 }
    }
}

impl Rates {
    /// IMU ticks between samples of a slower sensor.
    pub fn decimation(&self, rate: f64) -> usize {
        (self.imu / rate).round() as usize
    }
}

/// Sensor noise. IMU terms are continuous-time densities (per √Hz); the
/// odometer term is a per-sample standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseLevels {
    pub gyro: f64,
    pub accel: f64,
    pub gyro_bias_walk: f64,
    pub accel_bias_walk: f64,
    /// Standard deviation of the constant part of each bias at start-up.
    pub initial_gyro_bias: f64,
    pub initial_accel_bias: f64,
    pub odom: f64,
    /// Standard deviation of the vertical odometer component when it differs
    /// from the others. A planar wheel odometer says next to nothing about
    /// vertical motion.
    pub odom_vertical: Option<f64>,
    pub pixel: f64,
    /// Mounting error of the odometer as roll, pitch, yaw in radians. The
    /// filter assumes a perfectly aligned odometer, so this is unmodelled.
    pub odom_misalignment: [f64; 3],
    /// Standard deviation of the per-lamp offset between the map the filter
    /// is given and the lamps the camera sees.
    pub map: f64,
}

impl Default for NoiseLevels {
    fn default() -> Self {
        NoiseLevels {
            gyro: 0.005,
            accel: 0.05,
            gyro_bias_walk: 1e-5,
            accel_bias_walk: 1e-4,
            initial_gyro_bias: 1e-3,
            initial_accel_bias: 1e-2,
            odom: 0.05,
            odom_vertical: None,
            pixel: 2.0,
            odom_misalignment: [0.0; 3],
            map: 0.0,
        }
    }
}

impl NoiseLevels {
    pub fn zero() -> Self {
        NoiseLevels {
            gyro: 0.0,
            accel: 0.0,
            gyro_bias_walk: 0.0,
            accel_bias_walk: 0.0,
            initial_gyro_bias: 0.0,
            initial_accel_bias: 0.0,
            odom: 0.0,
            odom_vertical: None,
            pixel: 0.0,
            odom_misalignment: [0.0; 3],
            map: 0.0,
        }
    }

    /// Per-axis odometer standard deviations in the odometer frame.
    pub fn odom_std(&self) -> Vector3<f64> {
        Vector3::new(self.odom, self.odom, self.odom_vertical.unwrap_or(self.odom))
    }

    /// Process noise the filter assumes. Zero levels are floored so the
    /// covariance stays positive definite.
    pub fn filter_noise(&self) -> NoiseConfig {
        NoiseConfig::isotropic(self.gyro.max(1e-6), self.accel.max(1e-5), self.gyro_bias_walk.max(1e-8), self.accel_bias_walk.max(1e-7))
    }
}

/// Half-open time interval `[start, end)` in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start: f64,
    pub end: f64,
}

impl Window {
    pub fn contains(&self, t: f64) -> bool {
        self.start <= t && t < self.end
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionConfig {
    pub dropout: f64,
    /// Mean number of spurious boxes per frame.
    pub false_positive_rate: f64,
    /// The detector misses lights farther than this.
    pub detector_range: f64,
    /// Lights are drawn into the intensity frame up to this range.
    pub render_range: f64,
    /// Boxes narrower than this are not reported by the detector.
    pub min_box_size: f64,
    pub blackouts: Vec<Window>,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            dropout: 0.2,
            false_positive_rate: 0.5,
            detector_range: 40.0,
            render_range: 80.0,
            min_box_size: 4.0,
            blackouts: Vec::new(),
        }
    }
}

impl DetectionConfig {
    pub fn in_blackout(&self, t: f64) -> bool {
        self.blackouts.iter().any(|w| w.contains(t))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraConfig {
    pub intrinsics: CameraIntrinsics,
    /// Camera position in the body frame.
    pub position: [f64; 3],
    pub pitch_up: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig { intrinsics: CameraIntrinsics::default(), position: [0.3, 0.0, 1.2], pitch_up: 0.25 }
    }
}

impl CameraConfig {
    pub fn rig(&self) -> CameraRig {
        CameraRig {
            intrinsics: self.intrinsics,
            extrinsics: CamExtrinsics::forward_looking(Vector3::from(self.position), self.pitch_up),
        }
    }
}

/// Standard deviations of the initial estimate error; the estimate is drawn
/// from this distribution around the truth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitialUncertainty {
    pub rotation: f64,
    pub velocity: f64,
    pub position: f64,
}

impl Default for InitialUncertainty {
    fn default() -> Self {
        InitialUncertainty { rotation: 0.01, velocity: 0.1, position: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineOptions {
    pub vision: bool,
    pub extension: bool,
    pub degeneration: bool,
    pub recovery: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions { vision: true, extension: true, degeneration: true, recovery: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub transition: TransitionMethod,
    pub score: ScoreParams,
    /// Mahalanobis gate on the pixel residual of associated pairs; pairs
    /// beyond it are dropped before the update.
    pub association_gate: Option<f64>,
    pub extension_range: f64,
    pub segmentation: SegmentationParams,
    pub degeneration: DegenParams,
    pub recovery: RecoveryParams,
    pub recovery_max_detections: usize,
    pub recovery_max_candidates: usize,
    /// Seconds of frames with detections a lost filter waits for a
    /// brute-force recovery before trying plain association again.
    pub recovery_patience: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            transition: TransitionMethod::default(),
            score: ScoreParams::default(),
            association_gate: Some(4.0),
            extension_range: 80.0,
            segmentation: SegmentationParams::default(),
            degeneration: DegenParams::default(),
            recovery: RecoveryParams::default(),
            recovery_max_detections: 5,
            recovery_max_candidates: 7,
            recovery_patience: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImuModel {
    /// Readings chosen so the filter's discrete propagation reproduces the
    /// sampled truth exactly (up to the position quadrature).
    #[default]
    DiscreteConsistent,
    /// Instantaneous body rate and specific force at each sample time.
    Analytic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub duration: f64,
    pub trajectory: TrajectorySpec,
    pub rates: Rates,
    pub map: crate::world::MapSpec,
    pub noise: NoiseLevels,
    pub imu_model: ImuModel,
    pub detections: DetectionConfig,
    pub camera: CameraConfig,
    pub initial: InitialUncertainty,
    pub filter: FilterConfig,
    pub options: PipelineOptions,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            name: "figure-eight".into(),
            seed: 0,
            duration: 60.0,
            trajectory: TrajectorySpec::default(),
            rates: Rates::default(),
            map: crate::world::MapSpec::default(),
            noise: NoiseLevels::default(),
            imu_model: ImuModel::default(),
            detections: DetectionConfig::default(),
            camera: CameraConfig::default(),
            initial: InitialUncertainty::default(),
            filter: FilterConfig::default(),
            options: PipelineOptions::default(),
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: &str| Err(ScenarioError::Invalid(m.into()));
        if !(self.duration > 0.0) {
            return bad("duration must be positive");
        }
        for (name, r) in [("imu", self.rates.imu), ("odom", self.rates.odom), ("camera", self.rates.camera)] {
            if !(r > 0.0) || !r.is_finite() {
                return bad(&format!("{name} rate must be positive"));
            }
        }
        for (name, r) in [("odom", self.rates.odom), ("camera", self.rates.camera)] {
            let ratio = self.rates.imu / r;
            if r > self.rates.imu || (ratio - ratio.round()).abs() > 1e-9 {
                return bad(&format!("{name} rate must divide the IMU rate"));
            }
        }
        if 1.0 / self.rates.imu > nightrider_core::filter::MAX_DT {
            return bad("IMU rate too low");
        }
        if !(0.0..=1.0).contains(&self.detections.dropout) {
            return bad("dropout must lie in [0, 1]");
        }
        if self.detections.false_positive_rate < 0.0 {
            return bad("false-positive rate must be non-negative");
        }
        let n = &self.noise;
        if [n.gyro, n.accel, n.gyro_bias_walk, n.accel_bias_walk, n.initial_gyro_bias, n.initial_accel_bias, n.odom, n.odom_vertical.unwrap_or(0.0), n.pixel, n.map]
            .iter()
            .any(|x| !(*x >= 0.0))
        {
            return bad("noise levels must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.filter.score.weight) || !(self.filter.score.alpha > 0.0) {
            return bad("score weight must lie in [0, 1] and alpha must be positive");
        }
        self.trajectory.validate().map_err(ScenarioError::Invalid)?;
        self.map.validate().map_err(ScenarioError::Invalid)
    }

    /// Number of IMU ticks covering the duration.
    pub fn ticks(&self) -> usize {
        (self.duration * self.rates.imu).round() as usize
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.rates.imu
    }

    pub fn initial_covariance(&self) -> ErrorCovariance {
        let i = &self.initial;
        ErrorCovariance::from_std(
            i.rotation,
            i.velocity,
            i.position,
            self.noise.initial_gyro_bias.max(1e-6),
            self.noise.initial_accel_bias.max(1e-5),
        )
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text)
            .map_err(|e| ScenarioError::Parse { line: e.line(), column: e.column(), message: e.to_string() })?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}
