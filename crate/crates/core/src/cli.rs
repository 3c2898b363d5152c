//! Command-line front-end: `simulate`, `calibrate`, `evaluate`, `analyze`.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::calibration::{calibrate, LossConfig, OptimizerConfig};
use crate::dataset::{
    load_command_log, load_pose_log, simulate, synchronize, write_command_log, write_pose_log,
    SimScenario, SyncedTrajectory,
};
use crate::error::Error;
use crate::evaluation::{
    error_command_grid, evaluate, horizon_sweep, rotation_response, samples_csv, summarize_samples,
    DEFAULT_GRID_RESOLUTION,
};
use crate::fsutil::write_atomic;
use crate::kv::KvDocument;
use crate::models::{ChassisGeometry, KinematicModel, ModelDocument, ModelVariant};
use crate::segmentation::{segment, HorizonConfig, HorizonMode, Stride};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "skidsteer",
    version,
    about = "Skid-steer kinematic model calibration and evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate command and ground-truth logs from a scenario file.
    Simulate(SimulateArgs),
    /// Fit a model to a training trajectory.
    Calibrate(CalibrateArgs),
    /// Score one or more fitted models on an evaluation trajectory.
    Evaluate(EvaluateArgs),
    /// Sweep training and evaluation horizons for one model variant.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Output directory; receives cmd.csv and pose.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct HorizonArgs {
    #[arg(long, default_value = "spatial")]
    pub mode: String,
    /// Meters (spatial) or seconds (temporal).
    #[arg(long, allow_negative_numbers = true, default_value_t = 2.0)]
    pub horizon: f64,
    /// `non-overlapping` or `sliding`; defaults depend on the subcommand.
    #[arg(long)]
    pub stride: Option<String>,
    #[arg(long = "zero-thresh", allow_negative_numbers = true, default_value_t = HorizonConfig::DEFAULT_ZERO_THRESHOLD)]
    pub zero_thresh: f64,
    #[arg(long = "zero-frac", allow_negative_numbers = true, default_value_t = HorizonConfig::DEFAULT_ZERO_FRACTION)]
    pub zero_frac: f64,
}

impl HorizonArgs {
    fn config(&self, default_stride: Stride) -> Result<HorizonConfig, CliError> {
        let mode: HorizonMode = self.mode.parse().map_err(usage)?;
        let stride = match &self.stride {
            Some(s) => s.parse().map_err(usage)?,
            None => default_stride,
        };
        let cfg = HorizonConfig {
            mode,
            horizon: self.horizon,
            stride,
            zero_command_threshold: self.zero_thresh,
            zero_command_fraction: self.zero_frac,
        };
        cfg.validate().map_err(usage)?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct OptimizerArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Space-filling starts beyond the nominal one.
    #[arg(long, default_value_t = 16)]
    pub restarts: usize,
    /// Objective evaluations per start.
    #[arg(long = "max-evals", default_value_t = 2000)]
    pub max_evals: usize,
}

impl OptimizerArgs {
    fn config(&self) -> OptimizerConfig {
        OptimizerConfig {
            seed: self.seed,
            restarts: self.restarts,
            max_evals: self.max_evals,
            ..OptimizerConfig::default()
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct GeometryArgs {
    /// Wheel radius (m).
    #[arg(long, allow_negative_numbers = true, default_value_t = 0.3)]
    pub r: f64,
    /// Track width (m).
    #[arg(long, allow_negative_numbers = true, default_value_t = 1.2)]
    pub b: f64,
}

impl GeometryArgs {
    fn geometry(&self) -> Result<ChassisGeometry, CliError> {
        ChassisGeometry::new(self.r, self.b).map_err(usage)
    }
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub model: String,
    /// Command log and pose log.
    #[arg(long, num_args = 2, value_names = ["CMD", "POSE"])]
    pub train: Vec<PathBuf>,
    #[command(flatten)]
    pub horizon: HorizonArgs,
    #[command(flatten)]
    pub optimizer: OptimizerArgs,
    #[command(flatten)]
    pub geometry: GeometryArgs,
    /// Output model document.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Model document; repeat to compare several models.
    #[arg(long = "model-file", required = true)]
    pub model_files: Vec<PathBuf>,
    /// Also score the ideal differential drive with the first model's geometry.
    #[arg(long)]
    pub baseline: bool,
    #[arg(long, num_args = 2, value_names = ["CMD", "POSE"])]
    pub eval: Vec<PathBuf>,
    #[command(flatten)]
    pub horizon: HorizonArgs,
    /// Bin width of the rotation response curve (rad/m).
    #[arg(
        long = "bin-width",
        allow_negative_numbers = true,
        default_value_t = 0.1
    )]
    pub bin_width: f64,
    /// Cells per axis of the error-versus-command grid.
    #[arg(long = "grid", default_value_t = DEFAULT_GRID_RESOLUTION)]
    pub grid: usize,
    /// Report directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub model: String,
    #[arg(long, num_args = 2, value_names = ["CMD", "POSE"])]
    pub train: Vec<PathBuf>,
    #[arg(long, num_args = 2, value_names = ["CMD", "POSE"])]
    pub eval: Vec<PathBuf>,
    /// Training horizons, comma separated.
    #[arg(
        long = "train-horizons",
        value_delimiter = ',',
        default_value = "1,2,4,8"
    )]
    pub train_horizons: Vec<f64>,
    /// Evaluation horizons, comma separated.
    #[arg(
        long = "eval-horizons",
        value_delimiter = ',',
        default_value = "1,2,4,8,10"
    )]
    pub eval_horizons: Vec<f64>,
    /// Horizon mode and outlier filter; `--horizon` is ignored.
    #[command(flatten)]
    pub horizon: HorizonArgs,
    #[command(flatten)]
    pub optimizer: OptimizerArgs,
    #[command(flatten)]
    pub geometry: GeometryArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Data(e)
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn pair(paths: &[PathBuf], flag: &str) -> Result<(PathBuf, PathBuf), CliError> {
    match paths {
        [c, p] => Ok((c.clone(), p.clone())),
        _ => Err(CliError::Usage(format!(
            "{flag} needs a command log and a pose log"
        ))),
    }
}

fn load_trajectory(paths: &[PathBuf], flag: &str) -> Result<SyncedTrajectory, CliError> {
    let (c, p) = pair(paths, flag)?;
    let cmds = load_command_log(&c)?;
    let poses = load_pose_log(&p)?;
    info!(
        "{}: {} commands, {}: {} poses",
        c.display(),
        cmds.len(),
        p.display(),
        poses.len()
    );
    Ok(synchronize(&cmds, &poses)?)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Data(Error::io(dir, e)))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    write_atomic(path, text.as_bytes())?;
    info!("wrote {}", path.display());
    Ok(())
}

fn to_json(value: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("JSON values always serialize");
    s.push('\n');
    s
}

fn run_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.scenario)
        .map_err(|e| CliError::Data(Error::io(&args.scenario, e)))?;
    let parse_err = |line: u64, message: String| {
        CliError::Data(Error::Parse {
            path: args.scenario.clone(),
            line,
            message,
        })
    };
    let doc = KvDocument::parse(&text).map_err(|e| parse_err(e.line, e.message))?;
    let base = args.scenario.parent().unwrap_or(Path::new("."));
    let scenario = SimScenario::from_kv(&doc, base).map_err(|m| parse_err(0, m))?;
    let (cmds, poses) = simulate(&scenario)?;
    create_dir(&args.out)?;
    write_command_log(&args.out.join("cmd.csv"), &cmds)?;
    write_pose_log(&args.out.join("pose.csv"), &poses)?;
    info!("simulated {} commands, {} poses", cmds.len(), poses.len());
    Ok(())
}

fn run_calibrate(args: &CalibrateArgs) -> Result<(), CliError> {
    let variant: ModelVariant = args.model.parse().map_err(usage)?;
    let geometry = args.geometry.geometry()?;
    let cfg = args.horizon.config(Stride::NonOverlapping)?;
    let traj = load_trajectory(&args.train, "--train")?;
    let segs = segment(&traj, &cfg)?;
    info!("{} training segments", segs.len());
    let doc = if variant.arity() == 0 {
        ModelDocument::new(variant.name(), KinematicModel::ideal(geometry))
    } else {
        let report = calibrate(
            variant,
            geometry,
            &segs,
            &LossConfig::identity(),
            &args.optimizer.config(),
        )?;
        report.to_document(variant.name())
    };
    write(&args.out, &doc.to_kv().render())
}

fn run_evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let cfg = args.horizon.config(Stride::Sliding)?;
    if !(args.bin_width.is_finite() && args.bin_width > 0.0) {
        return Err(CliError::Usage(format!(
            "--bin-width must be > 0, got {}",
            args.bin_width
        )));
    }
    if args.grid == 0 {
        return Err(CliError::Usage("--grid must be >= 1".into()));
    }
    let mut models = Vec::new();
    for path in &args.model_files {
        models.push(ModelDocument::load(path)?);
    }
    if args.baseline {
        let g = models[0].model.geometry();
        models.insert(0, ModelDocument::new("ideal-dd", KinematicModel::ideal(g)));
    }
    let mut names: Vec<String> = Vec::new();
    for m in &models {
        let mut name = m.name.clone();
        let mut k = 2;
        while names.contains(&name) {
            name = format!("{}-{k}", m.name);
            k += 1;
        }
        names.push(name);
    }

    let traj = load_trajectory(&args.eval, "--eval")?;
    let segs = segment(&traj, &cfg)?;
    if segs.is_empty() {
        return Err(CliError::Data(Error::invalid(format!(
            "no evaluation segments at horizon {}",
            cfg.horizon
        ))));
    }
    info!("{} evaluation segments", segs.len());
    create_dir(&args.out)?;

    let mut all = Vec::new();
    let mut summary = serde_json::Map::new();
    for (name, doc) in names.iter().zip(&models) {
        let samples = evaluate(&doc.model, &segs)?;
        let stats = summarize_samples(&samples)?;
        let grid = error_command_grid(&samples, args.grid)?;
        write(&args.out.join(format!("grid_{name}.csv")), &grid.to_csv())?;
        summary.insert(
            name.clone(),
            serde_json::json!({
                "variant": doc.model.variant().name(),
                "params": doc.model.param_vector(),
                "eps_t": stats.eps_t,
                "eps_theta": stats.eps_theta,
                "worst_cell": grid.argmax(1).map(|(i, j)| grid.center(i, j)),
            }),
        );
        all.push((name.as_str(), samples));
    }
    let rows: Vec<(&str, &[_])> = all.iter().map(|(n, s)| (*n, s.as_slice())).collect();
    write(&args.out.join("samples.csv"), &samples_csv(&rows))?;

    let geometry = models[0].model.geometry();
    let curve = rotation_response(&segs, geometry, args.bin_width)?;
    write(&args.out.join("rotation.csv"), &curve.to_csv())?;
    let report = serde_json::json!({
        "horizon": cfg.horizon,
        "mode": cfg.mode.to_string(),
        "stride": cfg.stride.to_string(),
        "segments": segs.len(),
        "models": summary,
        "rotation_knee": curve.fit_knee(),
    });
    write(&args.out.join("summary.json"), &to_json(&report))
}

fn run_analyze(args: &AnalyzeArgs) -> Result<(), CliError> {
    let variant: ModelVariant = args.model.parse().map_err(usage)?;
    let geometry = args.geometry.geometry()?;
    let train_cfg = args.horizon.config(Stride::NonOverlapping)?;
    let eval_cfg = HorizonConfig {
        stride: Stride::Sliding,
        ..train_cfg
    };
    for h in args.train_horizons.iter().chain(&args.eval_horizons) {
        if !(h.is_finite() && *h > 0.0) {
            return Err(CliError::Usage(format!("horizons must be > 0, got {h}")));
        }
    }
    let train = load_trajectory(&args.train, "--train")?;
    let eval = load_trajectory(&args.eval, "--eval")?;
    let sweep = horizon_sweep(
        variant,
        geometry,
        &train,
        &eval,
        &args.train_horizons,
        &args.eval_horizons,
        &train_cfg,
        &eval_cfg,
        &LossConfig::identity(),
        &args.optimizer.config(),
    )?;
    create_dir(&args.out)?;
    write(&args.out.join("sweep.csv"), &sweep.to_csv())?;
    let fits: Vec<serde_json::Value> = sweep
        .reports
        .iter()
        .map(|r| match r {
            Some(r) => serde_json::json!({
                "params": r.model.param_vector(),
                "final_loss": r.final_loss,
                "segments": r.segments,
            }),
            None => serde_json::Value::Null,
        })
        .collect();
    let report = serde_json::json!({
        "variant": variant.name(),
        "training_horizons": sweep.training_horizons,
        "evaluation_horizons": sweep.evaluation_horizons,
        "cells": sweep.cells,
        "fits": fits,
    });
    write(&args.out.join("sweep.json"), &to_json(&report))
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate(a) => run_simulate(a),
        Command::Calibrate(a) => run_calibrate(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Analyze(a) => run_analyze(a),
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            EXIT_USAGE
        }
        Err(CliError::Data(e)) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn help_and_version_exit_zero() {
        assert_eq!(main_with_args(["skidsteer", "--help"]), EXIT_OK);
        assert_eq!(main_with_args(["skidsteer", "--version"]), EXIT_OK);
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(
            main_with_args(["skidsteer", "simulate", "--bogus"]),
            EXIT_USAGE
        );
        assert_eq!(main_with_args(["skidsteer"]), EXIT_USAGE);
        let bad_model = [
            "skidsteer",
            "calibrate",
            "--model",
            "tank",
            "--train",
            "a",
            "b",
            "--out",
            "x",
        ];
        assert_eq!(main_with_args(bad_model), EXIT_USAGE);
        let bad_horizon = [
            "skidsteer",
            "calibrate",
            "--model",
            "roc",
            "--train",
            "a",
            "b",
            "--horizon",
            "-1",
            "--out",
            "x",
        ];
        assert_eq!(main_with_args(bad_horizon), EXIT_USAGE);
    }

    #[test]
    fn missing_input_exits_two() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.cfg");
        let code = main_with_args([
            OsString::from("skidsteer"),
            "simulate".into(),
            "--scenario".into(),
            missing.clone().into(),
            "--out".into(),
            dir.path().into(),
        ]);
        assert_eq!(code, EXIT_DATA);
    }

    #[test]
    fn flags_parse_into_configs() {
        let cli = Cli::try_parse_from([
            "skidsteer",
            "calibrate",
            "--model",
            "ext-dd-sym",
            "--train",
            "c.csv",
            "p.csv",
            "--mode",
            "temporal",
            "--horizon",
            "3",
            "--zero-thresh",
            "0.1",
            "--zero-frac",
            "0.4",
            "--seed",
            "7",
            "--restarts",
            "2",
            "--max-evals",
            "50",
            "--r",
            "0.25",
            "--b",
            "1.0",
            "--out",
            "m.model",
        ])
        .unwrap();
        let Command::Calibrate(a) = cli.command else {
            panic!()
        };
        let cfg = a.horizon.config(Stride::NonOverlapping).unwrap();
        assert_eq!(cfg.mode, HorizonMode::Temporal);
        assert_eq!(cfg.horizon, 3.0);
        assert_eq!(cfg.stride, Stride::NonOverlapping);
        assert_eq!(
            (cfg.zero_command_threshold, cfg.zero_command_fraction),
            (0.1, 0.4)
        );
        let opt = a.optimizer.config();
        assert_eq!((opt.seed, opt.restarts, opt.max_evals), (7, 2, 50));
        assert_eq!(
            a.geometry.geometry().unwrap(),
            ChassisGeometry::new(0.25, 1.0).unwrap()
        );
        assert_eq!(
            a.train,
            vec![PathBuf::from("c.csv"), PathBuf::from("p.csv")]
        );
    }
}
