//! Map-based nocturnal localization with an invariant EKF on SE₂(3).
//!
//! The filter fuses IMU propagation with odometer velocity and streetlight
//! detections matched against a prior map of 3D streetlight clusters.

pub mod association;
pub mod camera;
pub mod extension;
pub mod filter;
pub mod hungarian;
pub mod lie;
pub mod linalg;
pub mod map;
pub mod odometer;
pub mod recovery;
pub mod segmentation;

pub use filter::{ErrorCovariance, FilterError, FilterState, ImuSample, NoiseConfig};
pub use lie::{ExtendedPose, Rotation, TangentXi};
