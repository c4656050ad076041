//! Ground-truth trajectories with analytic derivatives.
//!
//! All trajectories are planar at a fixed height, and the body x axis follows
//! the velocity, so the body rate is a pure yaw rate.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use nightrider_core::filter::STANDARD_GRAVITY;
use nightrider_core::{ExtendedPose, Rotation};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TrajectorySpec {
    /// Counter-clockwise circle starting at the origin heading along +x.
    Circle { radius: f64, speed: f64, height: f64 },
    /// Lissajous figure-eight `(a sin ωt, a/2 sin 2ωt)` through the origin.
    FigureEight { size: f64, period: f64, height: f64 },
    /// Natural cubic spline through 2-D waypoints, timed by chord length.
    Spline { waypoints: Vec<[f64; 2]>, speed: f64, height: f64 },
    /// Constant velocity from the origin.
    Line { speed: f64, heading: f64, height: f64 },
    /// At rest with a fixed heading.
    Stationary { position: [f64; 3], yaw: f64 },
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        TrajectorySpec::FigureEight { size: 40.0, period: 60.0, height: 0.0 }
    }
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<(), String> {
        let ok = match self {
            TrajectorySpec::Circle { radius, speed, .. } => *radius > 0.0 && *speed > 0.0,
            TrajectorySpec::FigureEight { size, period, .. } => *size > 0.0 && *period > 0.0,
            TrajectorySpec::Spline { waypoints, speed, .. } => {
                waypoints.len() >= 2
                    && *speed > 0.0
                    && waypoints.windows(2).all(|w| (Vector2::from(w[1]) - Vector2::from(w[0])).norm() > 1e-6)
            }
            TrajectorySpec::Line { speed, .. } => *speed > 0.0,
            TrajectorySpec::Stationary { position, yaw } => position.iter().chain([yaw]).all(|x| x.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(format!("degenerate trajectory: {self:?}"))
        }
    }
}

/// Planar position, velocity and acceleration at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Kinematics {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectorySample {
    pub timestamp: f64,
    pub pose: ExtendedPose,
    /// Body-frame angular rate.
    pub omega: Vector3<f64>,
    /// World-frame acceleration.
    pub acceleration: Vector3<f64>,
}

impl TrajectorySample {
    /// Accelerometer reading without bias or noise, `Rᵀ(a − g)`.
    pub fn specific_force(&self, gravity: &Vector3<f64>) -> Vector3<f64> {
        self.pose.rotation.inverse_transform(&(self.acceleration - gravity))
    }
}

/// Evaluates a trajectory; splines are prepared once.
#[derive(Clone, Debug)]
pub struct Trajectory {
    spec: TrajectorySpec,
    spline: Option<[CubicSpline; 2]>,
}

impl Trajectory {
    pub fn new(spec: &TrajectorySpec) -> Result<Self, String> {
        spec.validate()?;
        let spline = match spec {
            TrajectorySpec::Spline { waypoints, speed, .. } => {
                let mut times = vec![0.0];
                for w in waypoints.windows(2) {
                    let d = (Vector2::from(w[1]) - Vector2::from(w[0])).norm();
                    times.push(times.last().unwrap() + d / speed);
                }
                let xs: Vec<f64> = waypoints.iter().map(|w| w[0]).collect();
                let ys: Vec<f64> = waypoints.iter().map(|w| w[1]).collect();
                Some([CubicSpline::natural(&times, &xs), CubicSpline::natural(&times, &ys)])
            }
            _ => None,
        };
        Ok(Trajectory { spec: spec.clone(), spline })
    }

    pub fn kinematics(&self, t: f64) -> Kinematics {
        let planar = |p: Vector2<f64>, v: Vector2<f64>, a: Vector2<f64>, h: f64| Kinematics {
            position: Vector3::new(p.x, p.y, h),
            velocity: Vector3::new(v.x, v.y, 0.0),
            acceleration: Vector3::new(a.x, a.y, 0.0),
        };
        match &self.spec {
            TrajectorySpec::Circle { radius, speed, height } => {
                let w = speed / radius;
                let (s, c) = (w * t).sin_cos();
                planar(
                    Vector2::new(radius * s, radius * (1.0 - c)),
                    Vector2::new(speed * c, speed * s),
                    Vector2::new(-speed * w * s, speed * w * c),
                    *height,
                )
            }
            TrajectorySpec::FigureEight { size, period, height } => {
                let w = std::f64::consts::TAU / period;
                let (s1, c1) = (w * t).sin_cos();
                let (s2, c2) = (2.0 * w * t).sin_cos();
                let b = size / 2.0;
                planar(
                    Vector2::new(size * s1, b * s2),
                    Vector2::new(size * w * c1, 2.0 * b * w * c2),
                    Vector2::new(-size * w * w * s1, -4.0 * b * w * w * s2),
                    *height,
                )
            }
            TrajectorySpec::Spline { height, .. } => {
                let [sx, sy] = self.spline.as_ref().expect("spline prepared");
                let (x, y) = (sx.eval(t), sy.eval(t));
                planar(Vector2::new(x[0], y[0]), Vector2::new(x[1], y[1]), Vector2::new(x[2], y[2]), *height)
            }
            TrajectorySpec::Line { speed, heading, height } => {
                let d = Vector2::new(heading.cos(), heading.sin());
                planar(d * (speed * t), d * *speed, Vector2::zeros(), *height)
            }
            TrajectorySpec::Stationary { position, .. } => Kinematics {
                position: Vector3::from(*position),
                velocity: Vector3::zeros(),
                acceleration: Vector3::zeros(),
            },
        }
    }

    pub fn sample(&self, t: f64) -> TrajectorySample {
        let k = self.kinematics(t);
        let (vx, vy) = (k.velocity.x, k.velocity.y);
        let (ax, ay) = (k.acceleration.x, k.acceleration.y);
        let speed_sq = vx * vx + vy * vy;
        let yaw = match self.spec {
            TrajectorySpec::Stationary { yaw, .. } => yaw,
            _ => vy.atan2(vx),
        };
        let yaw_rate = if speed_sq > 0.0 { (vx * ay - vy * ax) / speed_sq } else { 0.0 };
        TrajectorySample {
            timestamp: t,
            pose: ExtendedPose::new(Rotation::from_euler(0.0, 0.0, yaw), k.velocity, k.position),
            omega: Vector3::new(0.0, 0.0, yaw_rate),
            acceleration: k.acceleration,
        }
    }
}

/// Truth sampled at the IMU rate, `duration · rate + 1` samples from t = 0.
pub fn generate_truth(spec: &TrajectorySpec, duration: f64, rate: f64) -> Result<Vec<TrajectorySample>, String> {
    if !(duration > 0.0) || !(rate > 0.0) {
        return Err("duration and rate must be positive".into());
    }
    let traj = Trajectory::new(spec)?;
    let n = (duration * rate).round() as usize;
    Ok((0..=n).map(|k| traj.sample(k as f64 / rate)).collect())
}

/// Planar path length of sampled truth.
pub fn path_length(truth: &[TrajectorySample]) -> f64 {
    truth.windows(2).map(|w| (w[1].pose.position - w[0].pose.position).norm()).sum()
}

pub fn gravity() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, -STANDARD_GRAVITY)
}

/// Natural cubic spline `s(t)`; linear continuation outside the knots keeps it C².
#[derive(Clone, Debug)]
pub struct CubicSpline {
    t: Vec<f64>,
    y: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn natural(t: &[f64], y: &[f64]) -> Self {
        let n = t.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            // tridiagonal system for interior second derivatives (Thomas algorithm)
            let h: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
            let size = n - 2;
            let mut diag = vec![0.0; size];
            let mut rhs = vec![0.0; size];
            let mut upper = vec![0.0; size];
            for i in 0..size {
                diag[i] = 2.0 * (h[i] + h[i + 1]);
                upper[i] = h[i + 1];
                rhs[i] = 6.0 * ((y[i + 2] - y[i + 1]) / h[i + 1] - (y[i + 1] - y[i]) / h[i]);
            }
            for i in 1..size {
                let f = h[i] / diag[i - 1];
                diag[i] -= f * upper[i - 1];
                rhs[i] -= f * rhs[i - 1];
            }
            for i in (0..size).rev() {
                let next = if i + 1 < size { m[i + 2] } else { 0.0 };
                m[i + 1] = (rhs[i] - upper[i] * next) / diag[i];
            }
        }
        CubicSpline { t: t.to_vec(), y: y.to_vec(), m }
    }

    /// Value, first and second derivative at `x`.
    pub fn eval(&self, x: f64) -> [f64; 3] {
        let n = self.t.len();
        if x <= self.t[0] {
            let d = self.segment_derivative(0, self.t[0]);
            return [self.y[0] + d * (x - self.t[0]), d, 0.0];
        }
        if x >= self.t[n - 1] {
            let d = self.segment_derivative(n - 2, self.t[n - 1]);
            return [self.y[n - 1] + d * (x - self.t[n - 1]), d, 0.0];
        }
        let i = self.t.partition_point(|&k| k <= x) - 1;
        self.segment(i, x)
    }

    fn segment_derivative(&self, i: usize, x: f64) -> f64 {
        self.segment(i, x)[1]
    }

    fn segment(&self, i: usize, x: f64) -> [f64; 3] {
        let (t0, t1) = (self.t[i], self.t[i + 1]);
        let h = t1 - t0;
        let (a, b) = ((t1 - x) / h, (x - t0) / h);
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        let (y0, y1) = (self.y[i], self.y[i + 1]);
        let value = a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let slope = (y1 - y0) / h - (3.0 * a * a - 1.0) * h * m0 / 6.0 + (3.0 * b * b - 1.0) * h * m1 / 6.0;
        let curvature = a * m0 + b * m1;
        [value, slope, curvature]
    }
}
