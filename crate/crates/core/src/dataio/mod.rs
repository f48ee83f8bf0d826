//! EuRoC-format sensor streams, calibration files and TUM trajectories.
//!
//! Timestamps are integer nanoseconds on disk and seconds relative to a
//! stream origin in memory. Reals are written in the shortest form that
//! parses back to the same `f64`, so every codec here round-trips exactly
//! except where a quaternion stands in for a rotation matrix.

mod calibration;
mod dataset;
mod euroc;
mod tum;

pub use calibration::{read_calibration, write_calibration, CalibrationConfig};
pub use dataset::{read_dataset, write_dataset, SequenceData, DATASET_FILES};
pub use euroc::{
    read_groundtruth_csv, read_imu_csv, write_groundtruth_csv, write_imu_csv, EurocImuRecord, GroundTruthKind,
    GroundTruthRecord, GroundTruthTrack,
};
pub use tum::{read_trajectory_tum, write_trajectory_tum};

use std::fs::File;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::preintegration::ImuMeasurement;
use crate::state::{NavState, StampedPose};

/// Seconds from `origin_ns` to `ns`. The difference is taken in integers, so
/// no precision is lost to the magnitude of epoch timestamps.
pub fn ns_to_seconds(ns: u64, origin_ns: u64) -> f64 {
    (ns as i128 - origin_ns as i128) as f64 / 1e9
}

/// Inverse of [`ns_to_seconds`], rounding to the nearest nanosecond.
pub fn seconds_to_ns(t: f64, origin_ns: u64) -> Result<u64> {
    let ns = origin_ns as i128 + (t * 1e9).round() as i128;
    u64::try_from(ns).map_err(|_| Error::invalid(format!("time {t} s is out of the nanosecond range")))
}

/// Anything carrying a timestamp in seconds.
pub trait Timestamped {
    fn timestamp_mut(&mut self) -> &mut f64;
}

impl Timestamped for ImuMeasurement {
    fn timestamp_mut(&mut self) -> &mut f64 {
        &mut self.timestamp
    }
}

impl Timestamped for StampedPose {
    fn timestamp_mut(&mut self) -> &mut f64 {
        &mut self.timestamp
    }
}

impl Timestamped for NavState {
    fn timestamp_mut(&mut self) -> &mut f64 {
        &mut self.timestamp
    }
}

/// Shifts every timestamp by `offset` seconds.
pub fn apply_time_offset<T: Timestamped>(mut stream: Vec<T>, offset: f64) -> Vec<T> {
    for s in &mut stream {
        *s.timestamp_mut() += offset;
    }
    stream
}

/// Shortest decimal form that reads back bit-identically; negative zero is
/// written as `0`.
pub(crate) fn fmt_real(x: f64) -> String {
    format!("{}", x + 0.0)
}

pub(crate) fn fmt_vec3(v: &Vector3<f64>, sep: &str) -> String {
    [v.x, v.y, v.z].map(fmt_real).join(sep)
}

pub(crate) fn parse_real(path: &Path, line: usize, field: &str, name: &str) -> Result<f64> {
    let x: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::parse(path, line, format!("{name}: '{field}' is not a number")))?;
    if !x.is_finite() {
        return Err(Error::parse(path, line, format!("{name}: non-finite value '{field}'")));
    }
    Ok(x)
}

pub(crate) fn parse_ns(path: &Path, line: usize, field: &str) -> Result<u64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::parse(path, line, format!("timestamp: '{field}' is not integer nanoseconds")))
}

/// Comma-separated rows with their 1-based line numbers. Lines starting with
/// `#` and blank lines are skipped.
pub(crate) fn read_csv_rows(path: &Path) -> Result<Vec<(usize, csv::StringRecord)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(path, line, e.to_string())
        })?;
        if rec.get(0).is_some_and(|f| f.starts_with('#')) || rec.iter().all(str::is_empty) {
            continue;
        }
        let line = rec.position().map_or(0, |p| p.line() as usize);
        rows.push((line, rec));
    }
    Ok(rows)
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub(crate) fn check_arity(path: &Path, line: usize, rec: &csv::StringRecord, expected: &[usize]) -> Result<()> {
    if expected.contains(&rec.len()) {
        return Ok(());
    }
    let want: Vec<String> = expected.iter().map(|n| n.to_string()).collect();
    Err(Error::parse(
        path,
        line,
        format!("expected {} fields, found {}", want.join(" or "), rec.len()),
    ))
}
