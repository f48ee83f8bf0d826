//! Flat `key = value` calibration file.
//!
//! ```text
//! t_cb_rotation = r00 r01 r02 r10 r11 r12 r20 r21 r22   # camera-from-body, row-major
//! t_cb_translation = x y z                              # m
//! fu = 458.654
//! fv = 457.296
//! cu = 367.215
//! cv = 248.375
//! width = 752
//! height = 480
//! gyro_noise_density = 1.6968e-4                        # rad/s/√Hz
//! accel_noise_density = 2e-3                            # m/s²/√Hz
//! gyro_walk = 1.9393e-5                                 # rad/s²/√Hz
//! accel_walk = 3e-3                                     # m/s³/√Hz
//! gravity = 9.81                                        # m/s²
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use super::{fmt_real, fmt_vec3, parse_real, write_file};
use crate::error::{Error, Result};
use crate::estimator::camera::PinholeCamera;
use crate::manifold::{RigidPose, Rotation};
use crate::preintegration::ImuNoiseModel;

const KEYS: [&str; 13] = [
    "t_cb_rotation",
    "t_cb_translation",
    "fu",
    "fv",
    "cu",
    "cv",
    "width",
    "height",
    "gyro_noise_density",
    "accel_noise_density",
    "gyro_walk",
    "accel_walk",
    "gravity",
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CalibrationConfig {
    /// camera-from-body
    pub t_cb: RigidPose,
    pub camera: PinholeCamera,
    /// noise densities and gravity magnitude
    pub noise: ImuNoiseModel,
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.t_cb.rotation.is_valid(1e-6) || !self.t_cb.translation.iter().all(|x| x.is_finite()) {
            return Err(Error::invalid("t_cb is not a valid rigid transform"));
        }
        self.camera.validate()?;
        self.noise.validate()
    }
}

fn values(path: &Path, entries: &BTreeMap<&str, (usize, Vec<&str>)>, key: &str, n: usize) -> Result<Vec<f64>> {
    let (line, fields) = entries
        .get(key)
        .ok_or_else(|| Error::parse(path, 0, format!("missing key '{key}'")))?;
    if fields.len() != n {
        return Err(Error::parse(
            path,
            *line,
            format!("{key}: expected {n} values, found {}", fields.len()),
        ));
    }
    fields.iter().map(|f| parse_real(path, *line, f, key)).collect()
}

fn pixels(path: &Path, entries: &BTreeMap<&str, (usize, Vec<&str>)>, key: &str) -> Result<u32> {
    let (line, fields) = &entries[key];
    fields
        .first()
        .and_then(|f| f.parse().ok())
        .filter(|_| fields.len() == 1)
        .ok_or_else(|| Error::parse(path, *line, format!("{key}: expected one non-negative integer")))
}

pub fn read_calibration(path: &Path) -> Result<CalibrationConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries: BTreeMap<&str, (usize, Vec<&str>)> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let row = raw.split('#').next().unwrap_or("").trim();
        if row.is_empty() {
            continue;
        }
        let (key, value) = row
            .split_once('=')
            .ok_or_else(|| Error::parse(path, line, "expected 'key = value'"))?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(Error::parse(path, line, format!("unknown key '{key}'")));
        }
        if entries
            .insert(key, (line, value.split_whitespace().collect()))
            .is_some()
        {
            return Err(Error::parse(path, line, format!("duplicate key '{key}'")));
        }
    }
    for key in KEYS {
        if !entries.contains_key(key) {
            return Err(Error::parse(path, 0, format!("missing key '{key}'")));
        }
    }
    let r = values(path, &entries, "t_cb_rotation", 9)?;
    let t = values(path, &entries, "t_cb_translation", 3)?;
    let rotation = Rotation::from_matrix(Matrix3::from_row_slice(&r))
        .map_err(|e| Error::parse(path, entries["t_cb_rotation"].0, e.to_string()))?;
    let scalar = |key: &str| values(path, &entries, key, 1).map(|v| v[0]);
    let camera = PinholeCamera::new(
        scalar("fu")?,
        scalar("fv")?,
        scalar("cu")?,
        scalar("cv")?,
        pixels(path, &entries, "width")?,
        pixels(path, &entries, "height")?,
    )?;
    let noise = ImuNoiseModel::new(
        scalar("gyro_noise_density")?,
        scalar("accel_noise_density")?,
        scalar("gyro_walk")?,
        scalar("accel_walk")?,
        scalar("gravity")?,
    )?;
    Ok(CalibrationConfig {
        t_cb: RigidPose::new(rotation, Vector3::new(t[0], t[1], t[2])),
        camera,
        noise,
    })
}

pub fn write_calibration(calib: &CalibrationConfig, path: &Path) -> Result<()> {
    calib.validate()?;
    let r = calib.t_cb.rotation.matrix();
    let rows: Vec<String> = (0..3)
        .flat_map(|i| (0..3).map(move |j| (i, j)))
        .map(|(i, j)| fmt_real(r[(i, j)]))
        .collect();
    let c = &calib.camera;
    let n = &calib.noise;
    let mut s = String::from("# camera-from-body transform, rotation row-major\n");
    let _ = writeln!(s, "t_cb_rotation = {}", rows.join(" "));
    let _ = writeln!(s, "t_cb_translation = {}", fmt_vec3(&calib.t_cb.translation, " "));
    s.push_str("# pinhole intrinsics of the undistorted image, px\n");
    for (k, v) in [("fu", c.fu), ("fv", c.fv), ("cu", c.cu), ("cv", c.cv)] {
        let _ = writeln!(s, "{k} = {}", fmt_real(v));
    }
    let _ = writeln!(s, "width = {}", c.width);
    let _ = writeln!(s, "height = {}", c.height);
    s.push_str("# IMU noise densities (continuous time) and gravity magnitude\n");
    for (k, v) in [
        ("gyro_noise_density", n.gyro_noise_density),
        ("accel_noise_density", n.accel_noise_density),
        ("gyro_walk", n.gyro_walk),
        ("accel_walk", n.accel_walk),
        ("gravity", n.gravity_magnitude),
    ] {
        let _ = writeln!(s, "{k} = {}", fmt_real(v));
    }
    write_file(path, &s)
}
