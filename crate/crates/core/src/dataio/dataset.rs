//! Sequence directories in the EuRoC layout, plus the files a simulated
//! sequence adds: keypoint observations, up-to-scale camera poses, true
//! landmarks and loop matches.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use super::calibration::{read_calibration, write_calibration, CalibrationConfig};
use super::euroc::{
    read_groundtruth_csv, read_imu_csv, write_groundtruth_csv, write_imu_csv, EurocImuRecord, GroundTruthTrack,
};
use super::{check_arity, fmt_real, fmt_vec3, ns_to_seconds, parse_ns, parse_real, read_csv_rows, write_file};
use crate::error::{Error, Result};
use crate::estimator::camera::{Landmark, Observation};
use crate::initializer::KeyframeVisualPose;
use crate::manifold::Rotation;
use crate::preintegration::ImuMeasurement;
use crate::simulator::{CameraFrame, LoopOracleEdge, SimulatedDataset};

const IMU: &str = "mav0/imu0/data.csv";
const CAMERA: &str = "mav0/cam0/data.csv";
const OBSERVATIONS: &str = "mav0/cam0/observations.csv";
const VISUAL_POSES: &str = "mav0/cam0/visual_poses.csv";
const GROUND_TRUTH: [&str; 3] = [
    "mav0/state_groundtruth_estimate0/data.csv",
    "mav0/vicon0/data.csv",
    "mav0/leica0/data.csv",
];
const LANDMARKS: &str = "landmarks.csv";
const LOOPS: &str = "loops.csv";
const CALIBRATION: &str = "calib.txt";

/// Every file a sequence directory may hold, relative to its root.
pub const DATASET_FILES: [&str; 10] = [
    IMU,
    CAMERA,
    OBSERVATIONS,
    VISUAL_POSES,
    GROUND_TRUTH[0],
    GROUND_TRUTH[1],
    GROUND_TRUTH[2],
    LANDMARKS,
    LOOPS,
    CALIBRATION,
];

/// One sequence in memory. Times are seconds since `origin_ns`, the first
/// IMU timestamp; frame ids are frame indices.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceData {
    pub origin_ns: u64,
    pub imu_ns: Vec<u64>,
    pub imu: Vec<ImuMeasurement>,
    pub frame_ns: Vec<u64>,
    pub frames: Vec<CameraFrame>,
    /// up-to-scale camera poses, by frame; empty when not supplied
    pub visual_poses: Vec<KeyframeVisualPose>,
    pub ground_truth: Option<GroundTruthTrack>,
    pub landmarks: Vec<Landmark>,
    pub loop_edges: Vec<LoopOracleEdge>,
    pub calibration: Option<CalibrationConfig>,
}

impl SequenceData {
    pub fn from_simulation(ds: &SimulatedDataset) -> Result<Self> {
        let origin_ns = ds.imu_ns.first().copied().unwrap_or(0);
        let period = ds.config.imu_period_ns()?;
        let gt_ns: Vec<u64> = (0..ds.ground_truth.states.len() as u64).map(|k| k * period).collect();
        Ok(Self {
            origin_ns,
            imu_ns: ds.imu_ns.clone(),
            imu: ds.imu.clone(),
            frame_ns: ds.frame_state_index.iter().map(|&k| gt_ns[k]).collect(),
            frames: ds.frames.clone(),
            visual_poses: ds.visual_poses.clone(),
            ground_truth: Some(GroundTruthTrack::from_states(&ds.ground_truth.states, &gt_ns)?),
            landmarks: ds.ground_truth.landmarks.clone(),
            loop_edges: ds.loop_edges.clone(),
            calibration: Some(CalibrationConfig {
                t_cb: ds.config.t_cb,
                camera: ds.config.camera,
                noise: ds.config.noise,
            }),
        })
    }

    /// Ground-truth poses in sequence time.
    pub fn ground_truth_poses(&self) -> Option<Vec<crate::state::StampedPose>> {
        self.ground_truth.as_ref().map(|g| g.stamped_poses(self.origin_ns))
    }
}

/// Writes the files present in `data` under `root`.
pub fn write_dataset(data: &SequenceData, root: &Path) -> Result<()> {
    if data.imu.len() != data.imu_ns.len() || data.frames.len() != data.frame_ns.len() {
        return Err(Error::invalid(
            "one raw timestamp per IMU sample and per frame required",
        ));
    }
    let records: Vec<EurocImuRecord> = data
        .imu
        .iter()
        .zip(&data.imu_ns)
        .map(|(m, &ns)| EurocImuRecord {
            timestamp_ns: ns,
            omega: m.omega,
            accel: m.accel,
        })
        .collect();
    write_imu_csv(&records, &root.join(IMU))?;

    if !data.frames.is_empty() {
        let mut cams = String::from("#timestamp [ns],filename\n");
        let mut obs =
            String::from("#timestamp [ns],landmark_id,u [px],v [px],info_uu [px^-2],info_uv [px^-2],info_vv [px^-2]\n");
        for (f, ns) in data.frames.iter().zip(&data.frame_ns) {
            let _ = writeln!(cams, "{ns},{ns}.png");
            for o in &f.observations {
                let _ = writeln!(
                    obs,
                    "{ns},{},{},{},{},{},{}",
                    o.landmark_id,
                    fmt_real(o.keypoint.x),
                    fmt_real(o.keypoint.y),
                    fmt_real(o.info[(0, 0)]),
                    fmt_real(o.info[(0, 1)]),
                    fmt_real(o.info[(1, 1)])
                );
            }
        }
        write_file(&root.join(CAMERA), &cams)?;
        write_file(&root.join(OBSERVATIONS), &obs)?;
    }

    if !data.visual_poses.is_empty() {
        let mut s = String::from("#timestamp [ns],p_x,p_y,p_z,r00,r01,r02,r10,r11,r12,r20,r21,r22\n");
        for v in &data.visual_poses {
            let ns = *data
                .frame_ns
                .get(v.id)
                .ok_or_else(|| Error::invalid(format!("visual pose for unknown frame {}", v.id)))?;
            let r = v.rotation.matrix();
            let rows: Vec<String> = (0..9).map(|k| fmt_real(r[(k / 3, k % 3)])).collect();
            let _ = writeln!(s, "{ns},{},{}", fmt_vec3(&v.position, ","), rows.join(","));
        }
        write_file(&root.join(VISUAL_POSES), &s)?;
    }

    if let Some(gt) = &data.ground_truth {
        let file = match gt.kind {
            super::GroundTruthKind::State => GROUND_TRUTH[0],
            super::GroundTruthKind::Pose => GROUND_TRUTH[1],
            super::GroundTruthKind::Position => GROUND_TRUTH[2],
        };
        write_groundtruth_csv(gt, &root.join(file))?;
    }

    if !data.landmarks.is_empty() {
        let mut s = String::from("#id,x [m],y [m],z [m]\n");
        for l in &data.landmarks {
            let _ = writeln!(s, "{},{}", l.id, fmt_vec3(&l.position, ","));
        }
        write_file(&root.join(LANDMARKS), &s)?;
    }

    if !data.loop_edges.is_empty() {
        let mut s = String::from("#query_frame,matched_frame,shared landmark ids\n");
        for e in &data.loop_edges {
            let ids: Vec<String> = e.landmarks.iter().map(|i| i.to_string()).collect();
            let _ = writeln!(s, "{},{},{}", e.query, e.matched, ids.join(" "));
        }
        write_file(&root.join(LOOPS), &s)?;
    }

    if let Some(c) = &data.calibration {
        write_calibration(c, &root.join(CALIBRATION))?;
    }
    Ok(())
}

fn parse_index(path: &Path, line: usize, field: &str, name: &str) -> Result<usize> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::parse(path, line, format!("{name}: '{field}' is not an index")))
}

fn frame_at(path: &Path, line: usize, index: &BTreeMap<u64, usize>, ns: u64) -> Result<usize> {
    index
        .get(&ns)
        .copied()
        .ok_or_else(|| Error::parse(path, line, format!("timestamp {ns} matches no camera frame")))
}

/// Reads a sequence directory. Only `mav0/imu0/data.csv` is required.
pub fn read_dataset(root: &Path) -> Result<SequenceData> {
    let imu_records = read_imu_csv(&root.join(IMU))?;
    let origin_ns = imu_records.first().map_or(0, |r| r.timestamp_ns);
    let imu = imu_records.iter().map(|r| r.to_measurement(origin_ns)).collect();
    let imu_ns = imu_records.iter().map(|r| r.timestamp_ns).collect();

    let mut frame_ns: Vec<u64> = Vec::new();
    let cam_path = root.join(CAMERA);
    if cam_path.exists() {
        for (line, rec) in read_csv_rows(&cam_path)? {
            check_arity(&cam_path, line, &rec, &[1, 2])?;
            let ns = parse_ns(&cam_path, line, &rec[0])?;
            if frame_ns.last().is_some_and(|&p| ns <= p) {
                return Err(Error::parse(
                    &cam_path,
                    line,
                    format!("timestamp {ns} does not increase"),
                ));
            }
            frame_ns.push(ns);
        }
    }
    let index: BTreeMap<u64, usize> = frame_ns.iter().enumerate().map(|(i, &ns)| (ns, i)).collect();
    let mut frames: Vec<CameraFrame> = frame_ns
        .iter()
        .enumerate()
        .map(|(id, &ns)| CameraFrame {
            id,
            timestamp: ns_to_seconds(ns, origin_ns),
            observations: Vec::new(),
        })
        .collect();

    let obs_path = root.join(OBSERVATIONS);
    if obs_path.exists() {
        for (line, rec) in read_csv_rows(&obs_path)? {
            check_arity(&obs_path, line, &rec, &[7])?;
            let f = frame_at(&obs_path, line, &index, parse_ns(&obs_path, line, &rec[0])?)?;
            let landmark_id = parse_index(&obs_path, line, &rec[1], "landmark_id")?;
            let real = |i: usize, name: &str| parse_real(&obs_path, line, &rec[i], name);
            let keypoint = Vector2::new(real(2, "u")?, real(3, "v")?);
            let (uu, uv, vv) = (real(4, "info_uu")?, real(5, "info_uv")?, real(6, "info_vv")?);
            if !(uu > 0.0 && vv > 0.0 && uu * vv - uv * uv > 0.0) {
                return Err(Error::parse(
                    &obs_path,
                    line,
                    "information matrix is not positive definite",
                ));
            }
            frames[f].observations.push(Observation {
                landmark_id,
                keypoint,
                info: Matrix2::new(uu, uv, uv, vv),
            });
        }
    }

    let mut visual_poses = Vec::new();
    let vis_path = root.join(VISUAL_POSES);
    if vis_path.exists() {
        for (line, rec) in read_csv_rows(&vis_path)? {
            check_arity(&vis_path, line, &rec, &[13])?;
            let id = frame_at(&vis_path, line, &index, parse_ns(&vis_path, line, &rec[0])?)?;
            let mut v = [0.0; 12];
            for (k, x) in v.iter_mut().enumerate() {
                *x = parse_real(&vis_path, line, &rec[k + 1], "visual pose")?;
            }
            let rotation = Rotation::from_matrix(Matrix3::from_row_slice(&v[3..]))
                .map_err(|e| Error::parse(&vis_path, line, e.to_string()))?;
            visual_poses.push(KeyframeVisualPose {
                id,
                timestamp: frames[id].timestamp,
                rotation,
                position: Vector3::new(v[0], v[1], v[2]),
            });
        }
    }

    let ground_truth = GROUND_TRUTH
        .iter()
        .map(|f| root.join(f))
        .find(|p| p.exists())
        .map(|p| read_groundtruth_csv(&p))
        .transpose()?;

    let mut landmarks = Vec::new();
    let lm_path = root.join(LANDMARKS);
    if lm_path.exists() {
        for (line, rec) in read_csv_rows(&lm_path)? {
            check_arity(&lm_path, line, &rec, &[4])?;
            let mut x = Vector3::zeros();
            for i in 0..3 {
                x[i] = parse_real(&lm_path, line, &rec[i + 1], "landmark")?;
            }
            landmarks.push(Landmark {
                id: parse_index(&lm_path, line, &rec[0], "id")?,
                position: x,
            });
        }
    }

    let mut loop_edges = Vec::new();
    let loop_path = root.join(LOOPS);
    if loop_path.exists() {
        for (line, rec) in read_csv_rows(&loop_path)? {
            check_arity(&loop_path, line, &rec, &[3])?;
            let ids = rec[2]
                .split_whitespace()
                .map(|s| parse_index(&loop_path, line, s, "landmark id"))
                .collect::<Result<Vec<_>>>()?;
            loop_edges.push(LoopOracleEdge {
                query: parse_index(&loop_path, line, &rec[0], "query_frame")?,
                matched: parse_index(&loop_path, line, &rec[1], "matched_frame")?,
                landmarks: ids,
            });
        }
    }

    let calib_path = root.join(CALIBRATION);
    let calibration = calib_path.exists().then(|| read_calibration(&calib_path)).transpose()?;

    Ok(SequenceData {
        origin_ns,
        imu_ns,
        imu,
        frame_ns,
        frames,
        visual_poses,
        ground_truth,
        landmarks,
        loop_edges,
        calibration,
    })
}

/// Paths of the dataset files present under `root`.
#[cfg(test)]
pub(crate) fn present_files(root: &Path) -> Vec<std::path::PathBuf> {
    DATASET_FILES
        .iter()
        .map(|f| root.join(f))
        .filter(|p| p.exists())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{generate, SimConfig, TrajectoryModel};
    use tempfile::TempDir;

    fn sim() -> SimulatedDataset {
        let cfg = SimConfig {
            visual_rotation_noise: 0.01,
            visual_position_noise: 0.02,
            landmarks: crate::simulator::LandmarkConfig {
                count: 300,
                inner_margin: 2.0,
                outer_margin: 5.0,
            },
            ..SimConfig::default()
        };
        generate(&TrajectoryModel::circle(2.0, 0.5, 3.0), &cfg).unwrap()
    }

    #[test]
    fn simulated_round_trip() {
        let ds = sim();
        let data = SequenceData::from_simulation(&ds).unwrap();
        let dir = TempDir::new().unwrap();
        write_dataset(&data, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.imu, ds.imu);
        assert_eq!(back.imu_ns, ds.imu_ns);
        assert_eq!(back.frames, ds.frames);
        assert_eq!(back.visual_poses, ds.visual_poses);
        assert_eq!(back.landmarks, ds.ground_truth.landmarks);
        assert_eq!(back.calibration, data.calibration);
        assert_eq!(back.loop_edges, data.loop_edges);
        let (a, b) = (data.ground_truth.as_ref().unwrap(), back.ground_truth.as_ref().unwrap());
        assert_eq!(a.kind, b.kind);
        for (x, y) in a.records.iter().zip(&b.records) {
            assert_eq!(
                (x.timestamp_ns, x.position, x.velocity, x.bias),
                (y.timestamp_ns, y.position, y.velocity, y.bias)
            );
            assert!(x.rotation.unwrap().distance(&y.rotation.unwrap()) < 1e-12);
        }
        // rewriting what was read reproduces every file byte for byte, except
        // quaternions, which are recomputed from the rotation matrix
        let again = TempDir::new().unwrap();
        write_dataset(&back, again.path()).unwrap();
        for f in present_files(dir.path()) {
            let rel = f.strip_prefix(dir.path()).unwrap();
            if rel == Path::new(GROUND_TRUTH[0]) {
                continue;
            }
            assert_eq!(
                std::fs::read(&f).unwrap(),
                std::fs::read(again.path().join(rel)).unwrap(),
                "{rel:?}"
            );
        }
    }

    #[test]
    fn imu_only_directory() {
        let dir = TempDir::new().unwrap();
        write_file(&dir.path().join(IMU), "#h\n100,0,0,0,0,0,9.81\n105,0,0,0,0,0,9.81\n").unwrap();
        let d = read_dataset(dir.path()).unwrap();
        assert_eq!(d.origin_ns, 100);
        assert_eq!(d.imu[1].timestamp, 5e-9);
        assert!(d.frames.is_empty() && d.ground_truth.is_none() && d.calibration.is_none());
    }

    #[test]
    fn observation_at_unknown_time_rejected() {
        let dir = TempDir::new().unwrap();
        write_file(&dir.path().join(IMU), "100,0,0,0,0,0,9.81\n").unwrap();
        write_file(&dir.path().join(CAMERA), "100,100.png\n").unwrap();
        write_file(&dir.path().join(OBSERVATIONS), "#h\n100,1,1,1,1,0,1\n200,1,1,1,1,0,1\n").unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Parse { line: 3, .. })));
    }
}
