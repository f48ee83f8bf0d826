use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use nalgebra::Vector3;
use vislam::dataio::{read_dataset, read_trajectory_tum, write_trajectory_tum};
use vislam::manifold::{RigidPose, Rotation};
use vislam::preintegration::{predict, PreintegratedImu};
use vislam::simulator::{LandmarkConfig, SimConfig, TrajectoryModel};
use vislam::state::{ImuBias, NavState, StampedPose};
use vislam::system::RunMode;
use vislam_cli::{
    execute, replay, Command, EvalArgs, InitArgs, RunArgs, RunManifest, SimulateArgs, SimulationFile, MANIFEST_FILE,
};

const VISUAL_POSES: &str = "mav0/cam0/visual_poses.csv";
const IMU: &str = "mav0/imu0/data.csv";
const OBSERVATIONS: &str = "mav0/cam0/observations.csv";

fn bin() -> Process {
    Process::new(env!("CARGO_BIN_EXE_vislam"))
}

fn simulate(dir: &Path, name: &str, file: &SimulationFile) -> PathBuf {
    let cfg = dir.join(format!("{name}.json"));
    fs::write(&cfg, serde_json::to_string(file).unwrap()).unwrap();
    let out = dir.join(name);
    execute(&Command::Simulate(SimulateArgs {
        config: Some(cfg),
        seed: None,
        out: Some(out.clone()),
    }))
    .unwrap();
    out
}

fn small(duration: f64, sim: SimConfig) -> SimulationFile {
    SimulationFile {
        trajectory: TrajectoryModel::excited(duration),
        sim,
    }
}

fn without_landmarks(sim: SimConfig) -> SimConfig {
    SimConfig {
        landmarks: LandmarkConfig {
            count: 0,
            ..sim.landmarks
        },
        ..sim
    }
}

/// Relative path and contents of every regular file below `root`.
fn snapshot(root: &Path, skip: &[&str]) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if !skip.iter().any(|s| p.ends_with(s)) {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn metric(metrics: &Path, name: &str, delta: &str) -> f64 {
    let text = fs::read_to_string(metrics).unwrap();
    text.lines()
        .find_map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f.len() == 3 && f[0] == name && f[1] == delta).then(|| f[2].parse().unwrap())
        })
        .unwrap_or_else(|| panic!("{name} missing from {}", metrics.display()))
}

fn eval(est: PathBuf, gt: PathBuf, out: PathBuf, deltas: Vec<f64>) -> PathBuf {
    execute(&Command::Eval(EvalArgs {
        est,
        gt: Some(gt),
        deltas,
        out: Some(out.clone()),
        ..EvalArgs::default()
    }))
    .unwrap();
    out.join("metrics.csv")
}

#[test]
fn simulate_same_seed_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let file = small(
        4.0,
        SimConfig {
            seed: 3,
            ..SimConfig::default()
        },
    );
    let a = simulate(dir.path(), "a", &file);
    let b = simulate(dir.path(), "b", &file);
    let (sa, sb) = (snapshot(&a, &[MANIFEST_FILE]), snapshot(&b, &[MANIFEST_FILE]));
    assert!(sa.len() >= 5);
    assert_eq!(sa, sb);

    let c = simulate(
        dir.path(),
        "c",
        &small(
            4.0,
            SimConfig {
                seed: 4,
                ..SimConfig::default()
            },
        ),
    );
    assert_ne!(fs::read(a.join(IMU)).unwrap(), fs::read(c.join(IMU)).unwrap());
}

#[test]
fn sixty_seconds_at_200_hz_has_12000_rows() {
    let dir = tempfile::tempdir().unwrap();
    let file = SimulationFile {
        sim: without_landmarks(SimConfig::default()),
        ..SimulationFile::default()
    };
    let out = simulate(dir.path(), "s", &file);
    let text = fs::read_to_string(out.join(IMU)).unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 12000);
}

#[test]
fn hover_imu_integrates_to_a_fixed_point() {
    let dir = tempfile::tempdir().unwrap();
    let file = SimulationFile {
        trajectory: TrajectoryModel::hover(Vector3::new(1.0, -2.0, 1.5), 10.0),
        sim: SimConfig {
            bias: ImuBias::zero(),
            ..without_landmarks(SimConfig::noise_free())
        },
    };
    let out = simulate(dir.path(), "hover", &file);
    let data = read_dataset(&out).unwrap();
    let t_end = data.imu.last().unwrap().timestamp;
    let noise = data.calibration.unwrap().noise;
    let pre = PreintegratedImu::from_stream(&data.imu, 0.0, t_end, ImuBias::zero(), &noise).unwrap();
    let start = NavState {
        rotation: Rotation::identity(),
        position: Vector3::new(1.0, -2.0, 1.5),
        velocity: Vector3::zeros(),
        bias: ImuBias::zero(),
        timestamp: 0.0,
    };
    let end = predict(&start, &pre, &file.sim.gravity());
    assert!((end.position - start.position).norm() < 1e-6, "{}", end.position);
    assert!(end.velocity.norm() < 1e-6);
}

#[test]
fn init_on_the_minimum_window_does_not_crash() {
    let dir = tempfile::tempdir().unwrap();
    let seq = simulate(dir.path(), "seq", &small(3.0, without_landmarks(SimConfig::default())));
    // 0.25 s keyframes over 0.8 s: exactly four
    let r = execute(&Command::Init(InitArgs {
        dataset: seq,
        calib: None,
        init_window_sec: 0.8,
        keyframe_interval: 5,
        out: Some(dir.path().join("init")),
    }));
    match r {
        Ok(o) => assert!(o.summary.iter().any(|l| l == "windows = 1")),
        Err(e) => assert_eq!(e.status() as u8, 3, "{e}"),
    }
    let csv = fs::read_to_string(dir.path().join("init/convergence.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("4,"));
}

#[test]
fn init_falls_back_to_ground_truth_poses() {
    let dir = tempfile::tempdir().unwrap();
    let seq = simulate(
        dir.path(),
        "seq",
        &small(16.0, without_landmarks(SimConfig::noise_free())),
    );
    fs::remove_file(seq.join(VISUAL_POSES)).unwrap();
    let out = dir.path().join("init");
    execute(&Command::Init(InitArgs {
        dataset: seq,
        calib: None,
        init_window_sec: 15.0,
        keyframe_interval: 8,
        out: Some(out.clone()),
    }))
    .unwrap();
    let rec = vislam::initializer::InitializationResult::from_record(
        &fs::read_to_string(out.join("init_result.txt")).unwrap(),
    )
    .unwrap();
    assert!((rec.scale - 1.0).abs() < 1e-3, "scale {}", rec.scale);
    let manifest = RunManifest::read(&out.join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.overrides["visual_source"], "ground-truth");
}

/// Straight line along x at 1 m/s, 100 Hz, level attitude.
fn line(n: usize) -> Vec<StampedPose> {
    (0..n)
        .map(|k| {
            let t = k as f64 * 0.01;
            StampedPose::new(
                t,
                RigidPose::new(Rotation::identity(), Vector3::new(t, 0.2 * t.sin(), 1.0)),
            )
        })
        .collect()
}

#[test]
fn eval_identical_trajectories_score_zero() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt.tum");
    write_trajectory_tum(&line(2000), &gt).unwrap();
    let m = eval(gt.clone(), gt, dir.path().join("e"), vec![1.0, 5.0]);
    assert!(metric(&m, "ate_rmse_m", "") < 1e-9);
    assert!(metric(&m, "scale_error_percent", "") < 1e-6);
    assert!(metric(&m, "rpe_median_m", "5") < 1e-9);
    assert!(metric(&m, "rpe_p95_m", "1") < 1e-9);
}

#[test]
fn eval_recovers_a_one_percent_scale_error() {
    let dir = tempfile::tempdir().unwrap();
    let poses = line(2000);
    let scaled: Vec<StampedPose> = poses
        .iter()
        .map(|p| StampedPose::new(p.timestamp, RigidPose::new(p.pose.rotation, 1.01 * p.pose.translation)))
        .collect();
    let (gt, est) = (dir.path().join("gt.tum"), dir.path().join("est.tum"));
    write_trajectory_tum(&poses, &gt).unwrap();
    write_trajectory_tum(&scaled, &est).unwrap();
    let m = eval(est, gt, dir.path().join("e"), vec![5.0]);
    assert!((metric(&m, "scale_error_percent", "") - 1.0).abs() < 0.01);
    assert!(metric(&m, "ate_rmse_m", "") < 1e-6);
}

#[test]
fn eval_relative_error_of_a_heading_offset() {
    // A constant heading error θ survives position alignment. On a level arc
    // of radius r a segment of path length d spans the chord 2r sin(d / 2r),
    // which the heading error displaces by 2 sin(θ/2) times its length.
    let dir = tempfile::tempdir().unwrap();
    let r = 20.0;
    let poses: Vec<StampedPose> = (0..3000)
        .map(|k| {
            let t = k as f64 * 0.01;
            let p = Vector3::new(r * (t / r).cos(), r * (t / r).sin(), 1.0);
            StampedPose::new(t, RigidPose::new(Rotation::identity(), p))
        })
        .collect();
    let theta: f64 = 0.02;
    let turned: Vec<StampedPose> = poses
        .iter()
        .map(|p| {
            StampedPose::new(
                p.timestamp,
                RigidPose::new(Rotation::exp(&Vector3::new(0.0, 0.0, theta)), p.pose.translation),
            )
        })
        .collect();
    let (gt, est) = (dir.path().join("gt.tum"), dir.path().join("est.tum"));
    write_trajectory_tum(&poses, &gt).unwrap();
    write_trajectory_tum(&turned, &est).unwrap();
    let m = eval(est, gt, dir.path().join("e"), vec![2.0, 10.0]);
    assert!(metric(&m, "ate_rmse_m", "") < 1e-9);
    for d in [2.0, 10.0] {
        let expected = 2.0 * (theta / 2.0).sin() * 2.0 * r * (d / (2.0 * r)).sin();
        let got = metric(&m, "rpe_median_m", &d.to_string());
        assert!((got / expected - 1.0).abs() < 0.01, "delta {d}: {got} vs {expected}");
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let status = |args: &[&str]| {
        bin()
            .args(args)
            .env("VISLAM_OUTPUT_ROOT", dir.path())
            .output()
            .unwrap()
            .status
            .code()
    };
    assert_eq!(status(&["--help"]), Some(0));
    assert_eq!(status(&[]), Some(1));
    assert_eq!(status(&["run", "--bogus"]), Some(1));
    assert_eq!(
        status(&["eval", "--est", "a.tum", "--gt", "b.tum", "--dataset", "d"]),
        Some(1)
    );
    assert_eq!(
        status(&["eval", "--est", "/nonexistent/a.tum", "--gt", "/nonexistent/b.tum"]),
        Some(2)
    );
    assert_eq!(status(&["init", "--dataset", "/nonexistent"]), Some(2));
    assert_eq!(status(&["simulate", "--config", "/nonexistent.toml"]), Some(1));
}

#[test]
fn output_root_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.json");
    fs::write(
        &cfg,
        serde_json::to_string(&small(2.0, without_landmarks(SimConfig::default()))).unwrap(),
    )
    .unwrap();
    let root = dir.path().join("root");
    let out = bin()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .env("VISLAM_OUTPUT_ROOT", &root)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(root.join("simulate").join(MANIFEST_FILE).is_file());
    assert!(root.join("simulate").join(IMU).is_file());
}

#[test]
fn manifest_replay_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let seq = simulate(dir.path(), "seq", &small(8.0, without_landmarks(SimConfig::default())));
    let out = dir.path().join("init");
    execute(&Command::Init(InitArgs {
        dataset: seq,
        calib: None,
        init_window_sec: 6.0,
        keyframe_interval: 8,
        out: Some(out.clone()),
    }))
    .unwrap();
    // wall-clock timings are the one non-deterministic output
    let skip = ["convergence_timing.csv"];
    let first = snapshot(&out, &skip);
    let manifest = RunManifest::read(&out.join(MANIFEST_FILE)).unwrap();
    fs::remove_dir_all(&out).unwrap();
    replay(&manifest).unwrap();
    assert_eq!(first, snapshot(&out, &skip));
}

#[test]
fn lost_tracking_writes_partial_results_and_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let sim = SimConfig {
        landmarks: LandmarkConfig {
            count: 300,
            ..SimConfig::default().landmarks
        },
        ..SimConfig::default()
    };
    let seq = simulate(dir.path(), "seq", &small(12.0, sim));
    // drop every observation after 8 s
    let data = read_dataset(&seq).unwrap();
    let cut = data.origin_ns + 8_000_000_000;
    let obs = fs::read_to_string(seq.join(OBSERVATIONS)).unwrap();
    let kept: String = obs
        .lines()
        .filter(|l| l.starts_with('#') || l.split(',').next().unwrap().parse::<u64>().unwrap() <= cut)
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(seq.join(OBSERVATIONS), kept).unwrap();

    let out = dir.path().join("run");
    let r = bin()
        .args(["run", "--init-window-sec", "5", "--dataset"])
        .arg(&seq)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(r.status.code(), Some(3), "{}", String::from_utf8_lossy(&r.stderr));
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.contains("tracking_lost_at"), "{report}");
    let kfs = read_trajectory_tum(&out.join("keyframes.tum")).unwrap();
    assert!(!kfs.is_empty());
    assert!(kfs.last().unwrap().timestamp <= 8.0 + 1e-9);
    assert!(out.join(MANIFEST_FILE).is_file());
}

#[test]
fn run_and_eval_on_a_short_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let sim = SimConfig::noise_free();
    let seq = simulate(dir.path(), "seq", &small(10.0, sim));
    let out = dir.path().join("run");
    execute(&Command::Run(RunArgs {
        dataset: seq.clone(),
        calib: None,
        mode: RunMode::Odometry,
        full_ba: false,
        init_window_sec: 5.0,
        local_window: 10,
        out: Some(out.clone()),
    }))
    .unwrap();
    for f in [
        "keyframes.tum",
        "frames.tum",
        "trajectory.tum",
        "init_result.txt",
        "report.txt",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let e = dir.path().join("eval");
    execute(&Command::Eval(EvalArgs {
        est: out.join("keyframes.tum"),
        dataset: Some(seq),
        deltas: vec![1.0],
        out: Some(e.clone()),
        ..EvalArgs::default()
    }))
    .unwrap();
    assert!(metric(&e.join("metrics.csv"), "ate_rmse_m", "") < 1e-3);
}
