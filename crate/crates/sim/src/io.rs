//! Run artifacts on disk: trajectory CSVs, JSON-lines logs, metrics JSON.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::Serialize;
use thiserror::Error;

use nightrider_core::Rotation;

use crate::metrics::StampedPose;

pub const TRAJECTORY_HEADER: &str = "t,x,y,z,qw,qx,qy,qz";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.display().to_string(), source }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn quaternion(r: &Rotation) -> UnitQuaternion<f64> {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r.matrix()));
    // fix the sign so files do not flip between equivalent encodings
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

pub fn trajectory_csv(poses: &[StampedPose]) -> String {
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    for p in poses {
        let q = quaternion(&p.rotation);
        writeln!(out, "{},{},{},{},{},{},{},{}", p.t, p.position.x, p.position.y, p.position.z, q.w, q.i, q.j, q.k).unwrap();
    }
    out
}

pub fn parse_trajectory_csv(text: &str, path: &Path) -> Result<Vec<StampedPose>, IoError> {
    let err = |line: usize, message: String| IoError::Parse { path: path.display().to_string(), line, message };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with('t')) {
            continue;
        }
        let v: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>().map_err(|e| err(i + 1, format!("{f:?}: {e}"))))
            .collect::<Result<_, _>>()?;
        if v.len() != 8 {
            return Err(err(i + 1, format!("expected 8 fields, found {}", v.len())));
        }
        let q = Quaternion::new(v[4], v[5], v[6], v[7]);
        if !(q.norm() > 0.0) {
            return Err(err(i + 1, "zero quaternion".into()));
        }
        let r = UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner();
        out.push(StampedPose { t: v[0], position: Vector3::new(v[1], v[2], v[3]), rotation: Rotation::from_matrix_unchecked(r) });
    }
    out.sort_by(|a, b| a.t.total_cmp(&b.t));
    Ok(out)
}

pub fn read_trajectory_csv(path: &Path) -> Result<Vec<StampedPose>, IoError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_trajectory_csv(&text, path)
}

pub fn write_trajectory_csv(path: &Path, poses: &[StampedPose]) -> Result<(), IoError> {
    write_text(path, &trajectory_csv(poses))
}

pub fn json_lines<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("serializable record"));
        out.push('\n');
    }
    out
}

pub fn write_json_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<(), IoError> {
    write_text(path, &json_lines(items))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    write_text(path, &(serde_json::to_string_pretty(value).expect("serializable value") + "\n"))
}
