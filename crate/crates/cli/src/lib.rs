//! Batch front end: `simulate`, `init`, `run` and `eval` commands that read
//! and write files, each leaving a [`RunManifest`] beside its outputs.

// `!(x > 0.0)` guards also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod error;
mod manifest;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use vislam::dataio::{
    read_calibration, read_dataset, read_trajectory_tum, write_dataset, write_trajectory_tum, SequenceData,
};
use vislam::evaluation::{evaluate, EvaluationOptions, DEFAULT_MAX_DT, DEFAULT_RPE_DELTAS};
use vislam::initializer::{run_full_initialization, InitializationInput, InitializationResult, KeyframeVisualPose};
use vislam::simulator::{generate, SimConfig, TrajectoryModel};
use vislam::state::{ImuBias, StampedPose};
use vislam::system::{initialization_keyframes, run, RunMode, SystemConfig};

pub use error::{CliError, CliResult, ExitStatus};
pub use manifest::{InputDigest, RunManifest, MANIFEST_FILE};

/// Default output root when `--out` is not given; each command writes to a
/// subdirectory named after itself.
pub const OUTPUT_ROOT_ENV: &str = "VISLAM_OUTPUT_ROOT";
const DEFAULT_OUTPUT_ROOT: &str = "vislam-output";

/// Wall time of each initialization window is the fastest of this many
/// solves; slower repeats only add scheduler noise.
pub const TIMING_REPEATS: usize = 31;

/// Ground-truth samples are taken as visual keyframe candidates at this
/// rate when a sequence has no camera timestamps, Hz.
const GT_VISUAL_RATE: f64 = 20.0;

#[derive(Parser, Debug)]
#[command(name = "vislam", version, about = "Visual-inertial estimation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic sequence in the EuRoC layout.
    Simulate(SimulateArgs),
    /// Replay growing initialization windows and record their convergence.
    Init(InitArgs),
    /// Run the full tracking and mapping pipeline.
    Run(RunArgs),
    /// Compare an estimated trajectory with ground truth.
    Eval(EvalArgs),
}

#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimulateArgs {
    /// TOML or JSON file with `trajectory` and `sim` tables
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// overrides the configured seed
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// calibration file replacing the dataset's own
    #[arg(long)]
    pub calib: Option<PathBuf>,
    /// largest window, s
    #[arg(long, default_value_t = 15.0)]
    pub init_window_sec: f64,
    /// camera frames between keyframes
    #[arg(long, default_value_t = 5)]
    pub keyframe_interval: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub calib: Option<PathBuf>,
    /// slam, odometry or localization-only
    #[arg(long, default_value_t = RunMode::Slam)]
    pub mode: RunMode,
    /// run a full bundle adjustment at the end
    #[arg(long)]
    pub full_ba: bool,
    #[arg(long, default_value_t = 15.0)]
    pub init_window_sec: f64,
    /// keyframes optimized by local bundle adjustment
    #[arg(long, default_value_t = 10)]
    pub local_window: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalArgs {
    /// estimated trajectory, TUM format
    #[arg(long)]
    pub est: PathBuf,
    /// ground truth, TUM format
    #[arg(long, conflicts_with = "dataset")]
    pub gt: Option<PathBuf>,
    /// take the ground truth from a sequence directory instead
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// rigid alignment keeping the ground-truth scale
    #[arg(long)]
    pub fix_scale: bool,
    /// association tolerance, s
    #[arg(long, default_value_t = DEFAULT_MAX_DT)]
    pub max_dt: f64,
    /// RPE path lengths, m
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_RPE_DELTAS)]
    pub deltas: Vec<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Default for EvalArgs {
    fn default() -> Self {
        Self {
            est: PathBuf::new(),
            gt: None,
            dataset: None,
            fix_scale: false,
            max_dt: DEFAULT_MAX_DT,
            deltas: DEFAULT_RPE_DELTAS.to_vec(),
            out: None,
        }
    }
}

/// Contents of a `simulate` configuration file. Both tables are optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationFile {
    pub trajectory: TrajectoryModel,
    pub sim: SimConfig,
}

impl Default for SimulationFile {
    fn default() -> Self {
        Self {
            trajectory: TrajectoryModel::excited(60.0),
            sim: SimConfig::default(),
        }
    }
}

/// What a successful command produced.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub output_dir: PathBuf,
    /// one line per headline number
    pub summary: Vec<String>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Init(_) => "init",
            Command::Run(_) => "run",
            Command::Eval(_) => "eval",
        }
    }

    fn out(&self) -> Option<&Path> {
        match self {
            Command::Simulate(a) => a.out.as_deref(),
            Command::Init(a) => a.out.as_deref(),
            Command::Run(a) => a.out.as_deref(),
            Command::Eval(a) => a.out.as_deref(),
        }
    }

    /// `--out`, else `$VISLAM_OUTPUT_ROOT/<command>`, else
    /// `vislam-output/<command>`.
    pub fn output_dir(&self) -> PathBuf {
        match self.out() {
            Some(p) => p.to_path_buf(),
            None => std::env::var_os(OUTPUT_ROOT_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
                .join(self.name()),
        }
    }
}

/// Runs one command, writing its outputs and manifest.
pub fn execute(command: &Command) -> CliResult<Outcome> {
    let out = command.output_dir();
    fs::create_dir_all(&out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
    let mut manifest = RunManifest::new(command.clone(), &out);
    let result = match command {
        Command::Simulate(a) => cmd_simulate(a, &out, &mut manifest),
        Command::Init(a) => cmd_init(a, &out, &mut manifest),
        Command::Run(a) => cmd_run(a, &out, &mut manifest),
        Command::Eval(a) => cmd_eval(a, &out, &mut manifest),
    };
    // Partial results (lost tracking, failed final window) keep their manifest.
    if !manifest.input_hash.is_empty() || result.is_ok() {
        manifest.write()?;
    }
    result.map(|summary| Outcome {
        output_dir: out,
        summary,
    })
}

/// Re-runs the command recorded in a manifest.
pub fn replay(manifest: &RunManifest) -> CliResult<Outcome> {
    execute(&manifest.invocation)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Parses a TOML file, or JSON when the extension is `.json`.
fn load_config<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn cmd_simulate(a: &SimulateArgs, out: &Path, manifest: &mut RunManifest) -> CliResult<Vec<String>> {
    let mut file = match &a.config {
        Some(p) => {
            let file = load_config::<SimulationFile>(p)?;
            manifest.add_config(p)?;
            file
        }
        None => SimulationFile::default(),
    };
    if let Some(seed) = a.seed {
        file.sim.seed = seed;
    }
    manifest.seed = Some(file.sim.seed);
    manifest.set("duration", file.trajectory.duration);
    manifest.set("imu_rate", file.sim.imu_rate);
    manifest.set("cam_rate", file.sim.cam_rate);
    file.sim.validate()?;
    file.trajectory.validate()?;
    let ds = generate(&file.trajectory, &file.sim)?;
    let data = SequenceData::from_simulation(&ds)?;
    write_dataset(&data, out)?;
    Ok(vec![
        format!("imu_samples = {}", data.imu.len()),
        format!("frames = {}", data.frames.len()),
        format!("landmarks = {}", data.landmarks.len()),
        format!("loop_edges = {}", data.loop_edges.len()),
    ])
}

/// Loads a sequence and applies a calibration override.
fn load_sequence(dataset: &Path, calib: Option<&Path>, manifest: &mut RunManifest) -> CliResult<SequenceData> {
    manifest.add_input(dataset)?;
    let mut data = read_dataset(dataset)?;
    if let Some(p) = calib {
        manifest.add_config(p)?;
        data.calibration = Some(read_calibration(p)?);
    }
    Ok(data)
}

/// Camera poses derived from ground-truth body poses, for sequences without
/// a vision front end. Uses the camera timestamps when present.
pub fn visual_poses_from_ground_truth(data: &SequenceData) -> CliResult<Vec<KeyframeVisualPose>> {
    let gt = data
        .ground_truth
        .as_ref()
        .ok_or_else(|| CliError::Data("the sequence has neither visual poses nor ground truth".into()))?;
    if !gt.kind.has_orientation() {
        return Err(CliError::Data(
            "position-only ground truth cannot stand in for visual poses".into(),
        ));
    }
    let calib = data
        .calibration
        .ok_or_else(|| CliError::Data("the sequence has no calibration; pass --calib".into()))?;
    let poses = gt.stamped_poses(data.origin_ns);
    let t_bc = calib.t_cb.inverse();
    let times: Vec<f64> = if data.frames.is_empty() {
        let (first, last) = match (poses.first(), poses.last()) {
            (Some(a), Some(b)) => (a.timestamp, b.timestamp),
            _ => return Err(CliError::Data("empty ground truth".into())),
        };
        let n = ((last - first) * GT_VISUAL_RATE).floor() as usize;
        (0..=n).map(|k| first + k as f64 / GT_VISUAL_RATE).collect()
    } else {
        data.frames.iter().map(|f| f.timestamp).collect()
    };
    let tol = 0.5 / GT_VISUAL_RATE;
    let mut out = Vec::new();
    for (id, t) in times.into_iter().enumerate() {
        let k = poses.partition_point(|p| p.timestamp < t);
        let nearest = [k.checked_sub(1), Some(k)]
            .into_iter()
            .flatten()
            .filter(|&i| i < poses.len())
            .min_by(|&i, &j| {
                (poses[i].timestamp - t)
                    .abs()
                    .total_cmp(&(poses[j].timestamp - t).abs())
            });
        let Some(i) = nearest else { continue };
        if (poses[i].timestamp - t).abs() > tol || poses[i].timestamp < 0.0 {
            continue;
        }
        let t_wb = poses[i].pose;
        out.push(KeyframeVisualPose {
            id,
            timestamp: poses[i].timestamp,
            rotation: t_wb.rotation * t_bc.rotation,
            position: t_wb.transform_point(&t_bc.translation),
        });
    }
    out.dedup_by(|b, a| b.timestamp <= a.timestamp);
    Ok(out)
}

fn fmt_vec(v: &nalgebra::Vector3<f64>) -> String {
    format!("{},{},{}", v.x, v.y, v.z)
}

fn convergence_row(n: usize, window: f64, r: &InitializationResult) -> String {
    format!(
        "{n},{window},ok,{},{},{},{},{},{},{}\n",
        r.scale,
        fmt_vec(&r.gyro_bias),
        fmt_vec(&r.accel_bias),
        fmt_vec(&r.gravity_w),
        r.condition_number_stage2,
        r.condition_number_stage3,
        r.ill_conditioned
    )
}

pub const CONVERGENCE_HEADER: &str = "keyframes,window_s,status,scale,gyro_bias_x,gyro_bias_y,gyro_bias_z,\
accel_bias_x,accel_bias_y,accel_bias_z,gravity_x,gravity_y,gravity_z,\
condition_number_stage2,condition_number_stage3,ill_conditioned\n";

fn cmd_init(a: &InitArgs, out: &Path, manifest: &mut RunManifest) -> CliResult<Vec<String>> {
    let mut data = load_sequence(&a.dataset, a.calib.as_deref(), manifest)?;
    manifest.set("init_window_sec", a.init_window_sec);
    manifest.set("keyframe_interval", a.keyframe_interval);
    if a.keyframe_interval == 0 || !(a.init_window_sec > 0.0) {
        return Err(CliError::Usage(
            "--keyframe-interval and --init-window-sec must be positive".into(),
        ));
    }
    let calib = data
        .calibration
        .ok_or_else(|| CliError::Data("the sequence has no calibration; pass --calib".into()))?;
    if data.visual_poses.is_empty() {
        data.visual_poses = visual_poses_from_ground_truth(&data)?;
        manifest.set("visual_source", "ground-truth");
    }
    let kfs = initialization_keyframes(&data, a.init_window_sec, a.keyframe_interval)?;
    if kfs.len() < 4 {
        return Err(CliError::Data(format!(
            "{} keyframes in the window, need at least 4",
            kfs.len()
        )));
    }
    let cfg = SystemConfig::default().initializer;
    let mut convergence = String::from(CONVERGENCE_HEADER);
    let mut timing = String::from("keyframes,window_s,solve_time_s\n");
    let mut last = None;
    for n in 4..=kfs.len() {
        let window = kfs[n - 1].timestamp - kfs[0].timestamp;
        let input =
            InitializationInput::from_imu(kfs[..n].to_vec(), &data.imu, ImuBias::zero(), &calib.noise, calib.t_cb)?;
        let mut times = Vec::with_capacity(TIMING_REPEATS);
        let mut result = None;
        for _ in 0..TIMING_REPEATS {
            let start = Instant::now();
            result = Some(run_full_initialization(&input, &cfg));
            times.push(start.elapsed().as_secs_f64());
        }
        let fastest = times.iter().copied().fold(f64::INFINITY, f64::min);
        let _ = writeln!(timing, "{n},{window},{fastest}");
        match result.expect("at least one repeat") {
            Ok(r) => {
                convergence.push_str(&convergence_row(n, window, &r));
                last = Some(Ok(r));
            }
            Err(e) => {
                let status = e.to_string().replace(',', ";");
                let _ = writeln!(convergence, "{n},{window},{status}{}", ",".repeat(13));
                last = Some(Err(e));
            }
        }
    }
    write_text(&out.join("convergence.csv"), &convergence)?;
    write_text(&out.join("convergence_timing.csv"), &timing)?;
    let r = last.expect("at least one window")?;
    write_text(&out.join("init_result.txt"), &r.to_record())?;
    Ok(vec![
        format!("windows = {}", kfs.len() - 3),
        format!("scale = {}", r.scale),
        format!("gyro_bias = {} {} {}", r.gyro_bias.x, r.gyro_bias.y, r.gyro_bias.z),
        format!("accel_bias = {} {} {}", r.accel_bias.x, r.accel_bias.y, r.accel_bias.z),
        format!("condition_number_stage3 = {}", r.condition_number_stage3),
    ])
}

fn cmd_run(a: &RunArgs, out: &Path, manifest: &mut RunManifest) -> CliResult<Vec<String>> {
    let data = load_sequence(&a.dataset, a.calib.as_deref(), manifest)?;
    let cfg = SystemConfig {
        mode: a.mode,
        full_ba: a.full_ba,
        init_window: a.init_window_sec,
        local_window: a.local_window,
        ..SystemConfig::default()
    };
    manifest.set("mode", cfg.mode);
    manifest.set("full_ba", cfg.full_ba);
    manifest.set("init_window_sec", cfg.init_window);
    manifest.set("local_window", cfg.local_window);
    let r = run(&data, &cfg)?;
    let stamped = |s: &[vislam::state::NavState]| s.iter().map(StampedPose::from).collect::<Vec<_>>();
    write_trajectory_tum(&stamped(&r.keyframes), &out.join("keyframes.tum"))?;
    write_trajectory_tum(&stamped(&r.frames), &out.join("frames.tum"))?;
    write_trajectory_tum(&r.trajectory(cfg.keyframe_interval), &out.join("trajectory.tum"))?;
    write_text(&out.join("init_result.txt"), &r.initialization.to_record())?;

    let mut report = String::new();
    let _ = writeln!(report, "mode = {}", r.mode);
    let _ = writeln!(report, "keyframes = {}", r.keyframes.len());
    let _ = writeln!(report, "frames = {}", r.frames.len());
    let _ = writeln!(report, "landmarks = {}", r.landmarks);
    let _ = writeln!(report, "scale = {}", r.initialization.scale);
    let _ = writeln!(report, "loops = {}", r.loops.len());
    for (i, l) in r.loops.iter().enumerate() {
        let _ = writeln!(
            report,
            "loop.{i} = {} {} {} {} {}",
            l.timestamp, l.query_keyframe, l.matched_keyframe, l.matched_points, l.correction
        );
    }
    if let Some(t) = r.frozen_at {
        let _ = writeln!(report, "frozen_at = {t}");
    }
    if let Some(ba) = &r.full_ba {
        let _ = writeln!(report, "full_ba_iterations = {}", ba.iterations);
        let _ = writeln!(report, "full_ba_final_cost = {}", ba.final_cost);
    }
    if let Some(l) = &r.tracking_lost {
        let _ = writeln!(report, "tracking_lost_at = {}", l.timestamp);
        let _ = writeln!(report, "tracking_lost_reason = {}", l.message);
    }
    write_text(&out.join("report.txt"), &report)?;
    if let Some(l) = &r.tracking_lost {
        return Err(CliError::Numerical(format!(
            "tracking lost at t={:.6} s ({}); partial trajectory written to {}",
            l.timestamp,
            l.message,
            out.display()
        )));
    }
    Ok(vec![
        format!("keyframes = {}", r.keyframes.len()),
        format!("frames = {}", r.frames.len()),
        format!("loops = {}", r.loops.len()),
        format!("scale = {}", r.initialization.scale),
    ])
}

fn cmd_eval(a: &EvalArgs, out: &Path, manifest: &mut RunManifest) -> CliResult<Vec<String>> {
    manifest.add_input(&a.est)?;
    let est = read_trajectory_tum(&a.est)?;
    let (gt, orientation) = match (&a.gt, &a.dataset) {
        (Some(p), None) => {
            manifest.add_input(p)?;
            (read_trajectory_tum(p)?, true)
        }
        (None, Some(d)) => {
            let data = load_sequence(d, None, manifest)?;
            let track = data
                .ground_truth
                .as_ref()
                .ok_or_else(|| CliError::Data(format!("{} has no ground truth", d.display())))?;
            (track.stamped_poses(data.origin_ns), track.kind.has_orientation())
        }
        _ => return Err(CliError::Usage("pass exactly one of --gt and --dataset".into())),
    };
    if !(a.max_dt > 0.0) || a.deltas.iter().any(|d| !(*d > 0.0)) {
        return Err(CliError::Usage("--max-dt and --deltas must be positive".into()));
    }
    // Relative rotations are undefined against position-only ground truth.
    let deltas: &[f64] = if orientation { &a.deltas } else { &[] };
    manifest.set("fix_scale", a.fix_scale);
    manifest.set("max_dt", a.max_dt);
    manifest.set(
        "deltas",
        deltas.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(","),
    );
    let opts = EvaluationOptions {
        max_dt: a.max_dt,
        fix_scale: a.fix_scale,
    };
    let report = evaluate(&est, &gt, deltas, &opts)?;
    let mut metrics = report.metrics_csv();
    if !orientation {
        metrics.push_str("# rpe unsupported: ground truth has no orientation\n");
    }
    write_text(&out.join("metrics.csv"), &metrics)?;
    write_text(&out.join("rpe_plot.csv"), &report.rpe_plot_csv())?;
    let mut summary = vec![
        format!("matched = {}", report.matched),
        format!("ate_rmse_m = {}", report.ate_rmse),
        format!("scale_error_percent = {}", report.scale_error_percent),
    ];
    for b in &report.rpe.bins {
        summary.push(format!("rpe_median_m[{}] = {}", b.delta, b.median));
    }
    Ok(summary)
}
