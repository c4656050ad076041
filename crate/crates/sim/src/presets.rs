//! Ready-made scenarios for the evaluation runs.

use nightrider_core::recovery::RecoveryParams;

use crate::scenario::{DetectionConfig, NoiseLevels, Scenario, Window};
use crate::trajectory::TrajectorySpec;
use crate::world::{Layout, MapSpec};

pub const NAMES: [&str; 4] = ["figure-eight", "long-road", "corridor", "blackout"];

pub fn by_name(name: &str) -> Option<Scenario> {
    match name {
        "figure-eight" => Some(figure_eight()),
        "long-road" => Some(long_road()),
        "corridor" => Some(corridor()),
        "blackout" => Some(blackout()),
        _ => None,
    }
}

/// 60 s figure-eight with roadside lamps on alternating sides.
pub fn figure_eight() -> Scenario {
    Scenario::default()
}

/// Gently winding 500 m road with 20 lamps.
pub fn long_road() -> Scenario {
    let waypoints: Vec<[f64; 2]> = (0..=10).map(|i| [49.0 * i as f64, if i % 2 == 0 { 0.0 } else { 6.0 }]).collect();
    Scenario {
        name: "long-road".into(),
        duration: 100.0,
        trajectory: TrajectorySpec::Spline { waypoints, speed: 5.0, height: 0.0 },
        map: MapSpec {
            layout: Layout::Roadside { spacing: 25.0, offset: 5.0, height: 6.0, alternate: true },
            ..MapSpec::default()
        },
        ..Scenario::default()
    }
}

/// A straight road lit from one side only, then a left turn onto a road
/// whose lamps are well off the first line.
pub fn corridor() -> Scenario {
    let mut lights: Vec<[f64; 3]> = (0..8).map(|i| [10.0 + 15.0 * i as f64, 5.0, 6.0]).collect();
    lights.extend([[150.0, 25.0, 6.0], [136.0, 40.0, 6.0], [150.0, 55.0, 6.0], [136.0, 70.0, 6.0], [150.0, 85.0, 6.0]]);
    Scenario {
        name: "corridor".into(),
        duration: 45.0,
        trajectory: TrajectorySpec::Spline {
            waypoints: vec![[0.0, 0.0], [40.0, 0.0], [80.0, 0.0], [120.0, 0.0], [135.0, 3.0], [142.0, 15.0], [143.0, 40.0], [143.0, 80.0]],
            speed: 4.0,
            height: 0.0,
        },
        map: MapSpec { layout: Layout::Explicit { lights }, ..MapSpec::default() },
        noise: NoiseLevels { odom_misalignment: [0.0, 0.06, 0.0], pixel: 1.0, odom: 0.1, ..NoiseLevels::default() },
        detections: DetectionConfig { detector_range: 20.0, render_range: 80.0, ..DetectionConfig::default() },
        ..Scenario::default()
    }
}

/// The long road with a 20 s camera blackout in the middle.
pub fn blackout() -> Scenario {
    let mut s = long_road();
    s.name = "blackout".into();
    s.map.layout = Layout::Roadside { spacing: 10.0, offset: 5.0, height: 6.0, alternate: true };
    s.detections.blackouts = vec![Window { start: 40.0, end: 60.0 }];
    s.noise.map = 0.1;
    s.filter.recovery = RecoveryParams { threshold: 10.0, ..RecoveryParams::default() };
    s
}
