//! `imu0/data.csv` and ground-truth CSV files.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use super::{check_arity, fmt_real, fmt_vec3, ns_to_seconds, parse_ns, parse_real, read_csv_rows, write_file};
use crate::error::{Error, Result};
use crate::manifold::{RigidPose, Rotation};
use crate::preintegration::ImuMeasurement;
use crate::state::{ImuBias, NavState, StampedPose};

/// Largest accepted deviation of a stored quaternion from unit norm.
pub const QUATERNION_NORM_TOL: f64 = 1e-3;

const IMU_HEADER: &str = "#timestamp [ns],w_RS_S_x [rad s^-1],w_RS_S_y [rad s^-1],w_RS_S_z [rad s^-1],\
a_RS_S_x [m s^-2],a_RS_S_y [m s^-2],a_RS_S_z [m s^-2]";

const POSITION_HEADER: &str = "#timestamp [ns],p_RS_R_x [m],p_RS_R_y [m],p_RS_R_z [m]";
const QUATERNION_HEADER: &str = ",q_RS_w [],q_RS_x [],q_RS_y [],q_RS_z []";
const STATE_HEADER: &str = ",v_RS_R_x [m s^-1],v_RS_R_y [m s^-1],v_RS_R_z [m s^-1],\
b_w_RS_S_x [rad s^-1],b_w_RS_S_y [rad s^-1],b_w_RS_S_z [rad s^-1],\
b_a_RS_S_x [m s^-2],b_a_RS_S_y [m s^-2],b_a_RS_S_z [m s^-2]";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EurocImuRecord {
    pub timestamp_ns: u64,
    /// rad/s
    pub omega: Vector3<f64>,
    /// m/s²
    pub accel: Vector3<f64>,
}

impl EurocImuRecord {
    pub fn to_measurement(&self, origin_ns: u64) -> ImuMeasurement {
        ImuMeasurement::new(ns_to_seconds(self.timestamp_ns, origin_ns), self.omega, self.accel)
    }
}

fn vec3_at(path: &Path, line: usize, rec: &csv::StringRecord, first: usize, name: &str) -> Result<Vector3<f64>> {
    let mut v = Vector3::zeros();
    for i in 0..3 {
        v[i] = parse_real(path, line, &rec[first + i], &format!("{name}[{i}]"))?;
    }
    Ok(v)
}

fn check_monotone(path: &Path, line: usize, prev: Option<u64>, ns: u64) -> Result<()> {
    match prev {
        Some(p) if ns <= p => Err(Error::parse(
            path,
            line,
            format!("timestamp {ns} does not increase (previous {p})"),
        )),
        _ => Ok(()),
    }
}

/// Reads `timestamp [ns], ωx, ωy, ωz, ax, ay, az` rows. Timestamps must
/// strictly increase.
pub fn read_imu_csv(path: &Path) -> Result<Vec<EurocImuRecord>> {
    let mut out: Vec<EurocImuRecord> = Vec::new();
    for (line, rec) in read_csv_rows(path)? {
        check_arity(path, line, &rec, &[7])?;
        let timestamp_ns = parse_ns(path, line, &rec[0])?;
        check_monotone(path, line, out.last().map(|r| r.timestamp_ns), timestamp_ns)?;
        out.push(EurocImuRecord {
            timestamp_ns,
            omega: vec3_at(path, line, &rec, 1, "omega")?,
            accel: vec3_at(path, line, &rec, 4, "accel")?,
        });
    }
    Ok(out)
}

pub fn write_imu_csv(records: &[EurocImuRecord], path: &Path) -> Result<()> {
    let mut s = String::from(IMU_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{}",
            r.timestamp_ns,
            fmt_vec3(&r.omega, ","),
            fmt_vec3(&r.accel, ",")
        );
    }
    write_file(path, &s)
}

/// Column layout of a ground-truth file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroundTruthKind {
    /// timestamp, position, quaternion, velocity, gyro and accel bias (17 columns)
    State,
    /// timestamp, position, quaternion (8 columns), as from a motion-capture system
    Pose,
    /// timestamp, position (4 columns), as from a laser tracker
    Position,
}

impl GroundTruthKind {
    pub fn columns(self) -> usize {
        match self {
            GroundTruthKind::State => 17,
            GroundTruthKind::Pose => 8,
            GroundTruthKind::Position => 4,
        }
    }

    fn from_columns(n: usize) -> Option<Self> {
        match n {
            17 => Some(GroundTruthKind::State),
            8 => Some(GroundTruthKind::Pose),
            4 => Some(GroundTruthKind::Position),
            _ => None,
        }
    }

    /// Whether orientation metrics can be computed against this track.
    pub fn has_orientation(self) -> bool {
        self != GroundTruthKind::Position
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundTruthRecord {
    pub timestamp_ns: u64,
    pub position: Vector3<f64>,
    pub rotation: Option<Rotation>,
    pub velocity: Option<Vector3<f64>>,
    pub bias: Option<ImuBias>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthTrack {
    pub kind: GroundTruthKind,
    pub records: Vec<GroundTruthRecord>,
}

impl GroundTruthTrack {
    /// Full-state track from simulator or estimator states.
    pub fn from_states(states: &[NavState], timestamps_ns: &[u64]) -> Result<Self> {
        if states.len() != timestamps_ns.len() {
            return Err(Error::invalid("one timestamp per state required"));
        }
        let records = states
            .iter()
            .zip(timestamps_ns)
            .map(|(s, &ns)| GroundTruthRecord {
                timestamp_ns: ns,
                position: s.position,
                rotation: Some(s.rotation),
                velocity: Some(s.velocity),
                bias: Some(s.bias),
            })
            .collect();
        Ok(Self {
            kind: GroundTruthKind::State,
            records,
        })
    }

    /// Poses in seconds relative to `origin_ns`. Position-only tracks carry
    /// identity rotations and must not feed orientation metrics.
    pub fn stamped_poses(&self, origin_ns: u64) -> Vec<StampedPose> {
        self.records
            .iter()
            .map(|r| {
                StampedPose::new(
                    ns_to_seconds(r.timestamp_ns, origin_ns),
                    RigidPose::new(r.rotation.unwrap_or_default(), r.position),
                )
            })
            .collect()
    }
}

/// Reads a ground-truth CSV with 17, 8 or 4 columns; every row must match
/// the first. Quaternions (w first) are normalized.
pub fn read_groundtruth_csv(path: &Path) -> Result<GroundTruthTrack> {
    let rows = read_csv_rows(path)?;
    let kind = match rows.first() {
        None => GroundTruthKind::Position,
        Some((line, rec)) => GroundTruthKind::from_columns(rec.len())
            .ok_or_else(|| Error::parse(path, *line, format!("expected 17, 8 or 4 fields, found {}", rec.len())))?,
    };
    let mut records: Vec<GroundTruthRecord> = Vec::with_capacity(rows.len());
    for (line, rec) in rows {
        check_arity(path, line, &rec, &[kind.columns()])?;
        let timestamp_ns = parse_ns(path, line, &rec[0])?;
        check_monotone(path, line, records.last().map(|r| r.timestamp_ns), timestamp_ns)?;
        let position = vec3_at(path, line, &rec, 1, "position")?;
        let rotation = if kind.has_orientation() {
            let mut q = [0.0; 4];
            for (i, qi) in q.iter_mut().enumerate() {
                *qi = parse_real(path, line, &rec[4 + i], "quaternion")?;
            }
            let norm = q.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > QUATERNION_NORM_TOL {
                return Err(Error::parse(path, line, format!("quaternion norm {norm:.6} is not 1")));
            }
            Some(Rotation::from_quaternion(q[0], q[1], q[2], q[3]))
        } else {
            None
        };
        let (velocity, bias) = if kind == GroundTruthKind::State {
            let v = vec3_at(path, line, &rec, 8, "velocity")?;
            let bg = vec3_at(path, line, &rec, 11, "gyro bias")?;
            let ba = vec3_at(path, line, &rec, 14, "accel bias")?;
            (Some(v), Some(ImuBias::new(bg, ba)))
        } else {
            (None, None)
        };
        records.push(GroundTruthRecord {
            timestamp_ns,
            position,
            rotation,
            velocity,
            bias,
        });
    }
    Ok(GroundTruthTrack { kind, records })
}

/// Writes the columns of `track.kind`; records lacking a required field are
/// rejected.
pub fn write_groundtruth_csv(track: &GroundTruthTrack, path: &Path) -> Result<()> {
    let mut s = String::from(POSITION_HEADER);
    if track.kind.has_orientation() {
        s.push_str(QUATERNION_HEADER);
    }
    if track.kind == GroundTruthKind::State {
        s.push_str(STATE_HEADER);
    }
    s.push('\n');
    let missing = |ns: u64, what: &str| Error::invalid(format!("ground-truth record {ns} has no {what}"));
    for r in &track.records {
        let _ = write!(s, "{},{}", r.timestamp_ns, fmt_vec3(&r.position, ","));
        if track.kind.has_orientation() {
            let q = r
                .rotation
                .ok_or_else(|| missing(r.timestamp_ns, "orientation"))?
                .to_quaternion();
            let _ = write!(s, ",{}", q.map(fmt_real).join(","));
        }
        if track.kind == GroundTruthKind::State {
            let v = r.velocity.ok_or_else(|| missing(r.timestamp_ns, "velocity"))?;
            let b = r.bias.ok_or_else(|| missing(r.timestamp_ns, "bias"))?;
            let _ = write!(
                s,
                ",{},{},{}",
                fmt_vec3(&v, ","),
                fmt_vec3(&b.gyro, ","),
                fmt_vec3(&b.accel, ",")
            );
        }
        s.push('\n');
    }
    write_file(path, &s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::RigidPose;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use tempfile::TempDir;

    fn write(dir: &TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    fn random_rotation(rng: &mut impl Rng) -> Rotation {
        Rotation::exp(&Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0)))
    }

    #[test]
    fn reads_documented_row() {
        let dir = TempDir::new().unwrap();
        let p = write(
            &dir,
            "imu.csv",
            &format!("{IMU_HEADER}\n1403636579758555392,-0.1,0.2,0.05,9.6,0.3,-1.2\n"),
        );
        let recs = read_imu_csv(&p).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].timestamp_ns, 1_403_636_579_758_555_392);
        assert_eq!(recs[0].omega, Vector3::new(-0.1, 0.2, 0.05));
        assert_eq!(recs[0].accel, Vector3::new(9.6, 0.3, -1.2));
        // seconds are relative to an origin; against the epoch the value
        // keeps nanosecond resolution only as an integer
        let m = recs[0].to_measurement(1_403_636_579_000_000_000);
        assert!((m.timestamp - 0.758555392).abs() < 1e-15);
    }

    #[test]
    fn header_only_is_empty() {
        let dir = TempDir::new().unwrap();
        let p = write(&dir, "imu.csv", &format!("{IMU_HEADER}\n"));
        assert!(read_imu_csv(&p).unwrap().is_empty());
    }

    #[test]
    fn short_row_names_its_line() {
        let dir = TempDir::new().unwrap();
        let p = write(&dir, "imu.csv", &format!("{IMU_HEADER}\n1,0,0,0,0,0,0\n2,0,0,0,0,0\n"));
        match read_imu_csv(&p) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("6"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_finite_rejected_with_line() {
        let dir = TempDir::new().unwrap();
        for bad in ["NaN", "inf", "-inf"] {
            let p = write(
                &dir,
                "imu.csv",
                &format!("{IMU_HEADER}\n1,0,0,0,0,0,0\n2,0,{bad},0,0,0,0\n"),
            );
            assert!(matches!(read_imu_csv(&p), Err(Error::Parse { line: 3, .. })));
        }
        let p = write(&dir, "gt.csv", "#t,x,y,z\n5,0,nan,0\n");
        let r = read_groundtruth_csv(&p);
        assert!(matches!(r, Err(Error::Parse { line: 2, .. })), "{r:?}");
    }

    #[test]
    fn non_monotone_rejected() {
        let dir = TempDir::new().unwrap();
        let p = write(&dir, "imu.csv", "2,0,0,0,0,0,0\n2,0,0,0,0,0,0\n");
        assert!(matches!(read_imu_csv(&p), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            read_imu_csv(Path::new("/nonexistent/imu.csv")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn imu_round_trip_is_exact() {
        let dir = TempDir::new().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let recs: Vec<_> = (0..500u64)
            .map(|k| EurocImuRecord {
                timestamp_ns: 1_403_636_579_758_555_392 + k * 5_000_000,
                omega: Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0)),
                accel: Vector3::from_fn(|_, _| rng.random_range(-30.0..30.0)),
            })
            .collect();
        let p = dir.path().join("imu.csv");
        write_imu_csv(&recs, &p).unwrap();
        assert_eq!(read_imu_csv(&p).unwrap(), recs);
    }

    #[test]
    fn identity_quaternion_reads_as_identity() {
        let dir = TempDir::new().unwrap();
        let p = write(&dir, "gt.csv", "#header\n10,1,2,3,1,0,0,0\n");
        let t = read_groundtruth_csv(&p).unwrap();
        assert_eq!(t.kind, GroundTruthKind::Pose);
        assert_eq!(t.records[0].rotation.unwrap(), Rotation::identity());
    }

    #[test]
    fn quaternion_normalized_within_tolerance() {
        let dir = TempDir::new().unwrap();
        let p = write(&dir, "gt.csv", "10,0,0,0,1.0005,0,0,0\n");
        assert_eq!(
            read_groundtruth_csv(&p).unwrap().records[0].rotation.unwrap(),
            Rotation::identity()
        );
        let p = write(&dir, "gt.csv", "10,0,0,0,1.01,0,0,0\n");
        assert!(matches!(read_groundtruth_csv(&p), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn position_only_track() {
        let dir = TempDir::new().unwrap();
        let p = write(&dir, "gt.csv", "#timestamp [ns],x,y,z\n10,1,2,3\n20,1,2,4\n");
        let t = read_groundtruth_csv(&p).unwrap();
        assert_eq!(t.kind, GroundTruthKind::Position);
        assert!(!t.kind.has_orientation());
        assert_eq!(t.records[1].position, Vector3::new(1.0, 2.0, 4.0));
        assert!(t.records[1].rotation.is_none());
    }

    #[test]
    fn mixed_arity_rejected() {
        let dir = TempDir::new().unwrap();
        let p = write(&dir, "gt.csv", "10,1,2,3\n20,1,2,4,1,0,0,0\n");
        assert!(matches!(read_groundtruth_csv(&p), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn groundtruth_round_trip() {
        let dir = TempDir::new().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let states: Vec<NavState> = (0..300)
            .map(|k| NavState {
                rotation: random_rotation(&mut rng),
                position: Vector3::from_fn(|_, _| rng.random_range(-50.0..50.0)),
                velocity: Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0)),
                bias: ImuBias::new(
                    Vector3::from_fn(|_, _| rng.random_range(-0.1..0.1)),
                    Vector3::from_fn(|_, _| rng.random_range(-0.5..0.5)),
                ),
                timestamp: k as f64 * 0.005,
            })
            .collect();
        let ns: Vec<u64> = (0..300).map(|k| 1_000_000_000_000 + k * 5_000_000).collect();
        let track = GroundTruthTrack::from_states(&states, &ns).unwrap();
        let p = dir.path().join("gt.csv");
        write_groundtruth_csv(&track, &p).unwrap();
        let back = read_groundtruth_csv(&p).unwrap();
        assert_eq!(back.kind, GroundTruthKind::State);
        for (a, b) in track.records.iter().zip(&back.records) {
            assert_eq!(a.timestamp_ns, b.timestamp_ns);
            assert_eq!(a.position, b.position);
            assert_eq!(a.velocity, b.velocity);
            assert_eq!(a.bias, b.bias);
            assert!(a.rotation.unwrap().distance(&b.rotation.unwrap()) < 1e-9);
        }
    }

    #[test]
    fn transformed_file_matches_transform_oracle() {
        // apply a fixed rigid transform to every pose, write, read, and
        // compare against the transform applied in memory
        let dir = TempDir::new().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let offset = RigidPose::new(random_rotation(&mut rng), Vector3::new(1.5, -2.0, 0.25));
        let poses: Vec<RigidPose> = (0..50)
            .map(|_| {
                RigidPose::new(
                    random_rotation(&mut rng),
                    Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0)),
                )
            })
            .collect();
        let transformed: Vec<GroundTruthRecord> = poses
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let t = offset * *p;
                GroundTruthRecord {
                    timestamp_ns: k as u64,
                    position: t.translation,
                    rotation: Some(t.rotation),
                    velocity: None,
                    bias: None,
                }
            })
            .collect();
        let p = dir.path().join("gt.csv");
        write_groundtruth_csv(
            &GroundTruthTrack {
                kind: GroundTruthKind::Pose,
                records: transformed,
            },
            &p,
        )
        .unwrap();
        let back = read_groundtruth_csv(&p).unwrap().stamped_poses(0);
        for (orig, read) in poses.iter().zip(&back) {
            let undone = offset.inverse() * read.pose;
            assert!((undone.translation - orig.translation).norm() < 1e-12);
            assert!(undone.rotation.distance(&orig.rotation) < 1e-12);
        }
    }

    #[test]
    fn writer_rejects_missing_fields() {
        let dir = TempDir::new().unwrap();
        let track = GroundTruthTrack {
            kind: GroundTruthKind::Pose,
            records: vec![GroundTruthRecord {
                timestamp_ns: 0,
                position: Vector3::zeros(),
                rotation: None,
                velocity: None,
                bias: None,
            }],
        };
        assert!(write_groundtruth_csv(&track, &dir.path().join("gt.csv")).is_err());
    }
}
