//! TUM trajectory files: `timestamp tx ty tz qx qy qz qw` per line.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use super::{fmt_real, fmt_vec3, parse_real, write_file};
use crate::error::{Error, Result};
use crate::manifold::{RigidPose, Rotation};
use crate::state::StampedPose;

/// Timestamps carry 9 decimals (nanoseconds); the quaternion is written with
/// `qw >= 0`.
pub fn write_trajectory_tum(poses: &[StampedPose], path: &Path) -> Result<()> {
    let mut s = String::new();
    for p in poses {
        if !p.timestamp.is_finite() {
            return Err(Error::invalid("trajectory timestamp is not finite"));
        }
        let [w, x, y, z] = p.pose.rotation.to_quaternion();
        let _ = writeln!(
            s,
            "{:.9} {} {}",
            p.timestamp + 0.0,
            fmt_vec3(&p.pose.translation, " "),
            [x, y, z, w].map(fmt_real).join(" ")
        );
    }
    write_file(path, &s)
}

/// Reads whitespace-separated TUM rows; `#` starts a comment line.
pub fn read_trajectory_tum(path: &Path) -> Result<Vec<StampedPose>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let row = raw.trim();
        if row.is_empty() || row.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = row.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(Error::parse(
                path,
                line,
                format!("expected 8 fields, found {}", fields.len()),
            ));
        }
        let mut v = [0.0; 8];
        for (k, f) in fields.iter().enumerate() {
            v[k] = parse_real(path, line, f, "value")?;
        }
        let norm = v[4..].iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::parse(path, line, "zero quaternion"));
        }
        let rotation = Rotation::from_quaternion(v[7], v[4], v[5], v[6]);
        out.push(StampedPose::new(
            v[0],
            RigidPose::new(rotation, Vector3::new(v[1], v[2], v[3])),
        ));
    }
    Ok(out)
}
