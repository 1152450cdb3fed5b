// SPDX-License-Identifier: Apache-2.0

//! Command-line front end. Each subcommand has a library entry point
//! (`cmd_*`) that writes its files into the configured output directory and
//! returns a structured report plus a human-readable summary.
//!
//! Parameters are resolved in three layers: built-in defaults, then a
//! `key = value` config file, then command-line flags.

mod commands;

pub use commands::{
    cmd_allan, cmd_dump, cmd_eval_ate, cmd_eval_tags, cmd_extract, cmd_fixtures, cmd_map,
    cmd_register, CmdOutput,
};

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::allan::{AllanError, FitWindows};
use crate::cloud::{CloudError, RegisterParams};
use crate::gpmf::GpmfError;
use crate::map::MapError;
use crate::mp4::Mp4Error;
use crate::report::KeyValues;
use crate::sync::SyncError;
use crate::traj::{AlignMode, TrajError};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Unreadable or malformed input, bad arguments or config.
    #[error("{0}")]
    Input(String),
    /// Valid input on which a pipeline could not produce a result.
    #[error("{0}")]
    Compute(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Compute(_) => 1,
        }
    }

    /// Prefixes the message with a path.
    pub fn at(self, path: &Path) -> Self {
        let p = path.display();
        match self {
            CliError::Input(m) => CliError::Input(format!("{p}: {m}")),
            CliError::Compute(m) => CliError::Compute(format!("{p}: {m}")),
        }
    }
}

impl From<Mp4Error> for CliError {
    fn from(e: Mp4Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<GpmfError> for CliError {
    fn from(e: GpmfError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<SyncError> for CliError {
    fn from(e: SyncError) -> Self {
        match e {
            SyncError::LengthMismatch { .. } => CliError::Compute(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<AllanError> for CliError {
    fn from(e: AllanError) -> Self {
        CliError::Compute(e.to_string())
    }
}

impl From<MapError> for CliError {
    fn from(e: MapError) -> Self {
        match e {
            MapError::Io(_) | MapError::Parse { .. } | MapError::AtLine { .. } => {
                CliError::Input(e.to_string())
            }
            _ => CliError::Compute(e.to_string()),
        }
    }
}

impl From<TrajError> for CliError {
    fn from(e: TrajError) -> Self {
        match e {
            TrajError::Parse { .. }
            | TrajError::NonMonotonic { .. }
            | TrajError::EmptyTrajectory
            | TrajError::InvalidMaxDt(_)
            | TrajError::Io(_) => CliError::Input(e.to_string()),
            _ => CliError::Compute(e.to_string()),
        }
    }
}

impl From<CloudError> for CliError {
    fn from(e: CloudError) -> Self {
        match e {
            CloudError::Ply(_)
            | CloudError::EmptyCloud
            | CloudError::NonFinite(_)
            | CloudError::InvalidParameter(_) => CliError::Input(e.to_string()),
            _ => CliError::Compute(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Sensor {
    Accel,
    Gyro,
    Both,
}

impl std::str::FromStr for Sensor {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        <Sensor as ValueEnum>::from_str(s, true)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllanParams {
    pub sensor: Sensor,
    /// Subset of `xyz`, in output column order.
    pub axes: String,
    pub per_decade: usize,
    pub windows: FitWindows,
    /// Shorter recordings are rejected.
    pub min_duration: f64,
    /// Shorter recordings get a warning.
    pub warn_duration: f64,
}

impl Default for AllanParams {
    fn default() -> Self {
        AllanParams {
            sensor: Sensor::Both,
            axes: "xyz".into(),
            per_decade: 10,
            windows: FitWindows::default(),
            min_duration: 600.0,
            warn_duration: 3600.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AteParams {
    pub mode: AlignMode,
    pub max_dt: f64,
}

impl Default for AteParams {
    fn default() -> Self {
        AteParams {
            mode: AlignMode::Sim3,
            max_dt: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TagParams {
    pub max_dt: f64,
}

impl Default for TagParams {
    fn default() -> Self {
        TagParams { max_dt: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixtureParams {
    /// Length of the static IMU noise recording (seconds).
    pub allan_duration: f64,
}

impl Default for FixtureParams {
    fn default() -> Self {
        FixtureParams {
            allan_duration: 1800.0,
        }
    }
}

/// Everything a subcommand needs besides its input paths.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub allan: AllanParams,
    pub ate: AteParams,
    pub tags: TagParams,
    pub register: RegisterParams,
    pub fixtures: FixtureParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("."),
            allan: AllanParams::default(),
            ate: AteParams::default(),
            tags: TagParams::default(),
            register: RegisterParams::default(),
            fixtures: FixtureParams::default(),
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| CliError::Input(format!("config key {key}: invalid value {value:?}: {e}")))
}

fn parse_positive(key: &str, value: &str) -> Result<f64, CliError> {
    let v: f64 = parse_value(key, value)?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Input(format!(
            "config key {key}: {value} is not a positive number"
        )))
    }
}

fn check_axes(axes: &str) -> Result<(), CliError> {
    let ok = !axes.is_empty()
        && axes.chars().all(|c| "xyz".contains(c))
        && axes
            .chars()
            .enumerate()
            .all(|(i, c)| !axes[..i].contains(c));
    if ok {
        Ok(())
    } else {
        Err(CliError::Input(format!(
            "axes must be distinct letters from xyz, got {axes:?}"
        )))
    }
}

/// Sets the voxel size and rescales the radius and threshold with it.
fn set_voxel(p: &mut RegisterParams, voxel: f64) {
    p.voxel = voxel;
    p.fpfh_radius = 5.0 * voxel;
    p.threshold = voxel;
}

impl RunConfig {
    /// Loads a config file on top of the defaults.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::Input(e.to_string()).at(path))?;
        let kv = KeyValues::parse(&text).map_err(|e| CliError::Input(e).at(path))?;
        let mut cfg = RunConfig::default();
        cfg.apply(&kv).map_err(|e| e.at(path))?;
        Ok(cfg)
    }

    /// Applies `key = value` settings. `register.voxel` is applied before
    /// the other keys so an explicit radius or threshold wins over the
    /// voxel-derived one. Unknown keys are rejected.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<(), CliError> {
        if let Some(v) = kv.get("register.voxel") {
            set_voxel(&mut self.register, parse_positive("register.voxel", v)?);
        }
        for (key, v) in kv.entries() {
            let k = key.as_str();
            match k {
                "seed" => self.seed = parse_value(k, v)?,
                "out_dir" => self.out_dir = PathBuf::from(v),
                "allan.sensor" => self.allan.sensor = parse_value(k, v)?,
                "allan.axes" => {
                    check_axes(v)?;
                    self.allan.axes = v.clone();
                }
                "allan.per_decade" => self.allan.per_decade = parse_value(k, v)?,
                "allan.white_min" => self.allan.windows.white.0 = Some(parse_positive(k, v)?),
                "allan.white_max" => self.allan.windows.white.1 = Some(parse_positive(k, v)?),
                "allan.rw_min" => self.allan.windows.random_walk.0 = Some(parse_positive(k, v)?),
                "allan.rw_max" => self.allan.windows.random_walk.1 = Some(parse_positive(k, v)?),
                "allan.min_duration" => self.allan.min_duration = parse_value(k, v)?,
                "allan.warn_duration" => self.allan.warn_duration = parse_value(k, v)?,
                "ate.mode" => self.ate.mode = parse_value(k, v)?,
                "ate.max_dt" => self.ate.max_dt = parse_positive(k, v)?,
                "tags.max_dt" => self.tags.max_dt = parse_positive(k, v)?,
                "register.voxel" => {}
                "register.normal_k" => self.register.normal_k = parse_value(k, v)?,
                "register.fpfh_radius" => self.register.fpfh_radius = parse_positive(k, v)?,
                "register.threshold" => self.register.threshold = parse_positive(k, v)?,
                "register.mutual" => self.register.mutual_filter = parse_value(k, v)?,
                "register.icp_max_iter" => self.register.icp_max_iter = parse_value(k, v)?,
                "register.max_iterations" => {
                    self.register.ransac.max_iterations = parse_value(k, v)?
                }
                "register.confidence" => self.register.ransac.confidence = parse_value(k, v)?,
                "register.min_inlier_ratio" => {
                    self.register.ransac.min_inlier_ratio = parse_value(k, v)?
                }
                "fixtures.allan_duration" => self.fixtures.allan_duration = parse_positive(k, v)?,
                _ => return Err(CliError::Input(format!("unknown config key {k:?}"))),
            }
        }
        if self.allan.per_decade == 0 {
            return Err(CliError::Input(
                "allan.per_decade must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "gopro-vi",
    version,
    about = "GoPro telemetry to visual-inertial datasets, IMU noise fits, map and trajectory evaluation"
)]
pub struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for all written files (created if missing).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// `key = value` parameter file; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Only errors on stderr.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// MP4 to IMU CSV, frame timestamp CSV and manifest.
    Extract { mp4: PathBuf },
    /// Allan deviation curve and white-noise / random-walk fit.
    Allan {
        imu_csv: PathBuf,
        #[arg(long, value_enum)]
        sensor: Option<Sensor>,
        /// Axis subset such as `xyz` or `z`.
        #[arg(long)]
        axes: Option<String>,
        #[arg(long)]
        per_decade: Option<usize>,
        #[arg(long)]
        white_min: Option<f64>,
        #[arg(long)]
        white_max: Option<f64>,
        #[arg(long)]
        rw_min: Option<f64>,
        #[arg(long)]
        rw_max: Option<f64>,
        #[arg(long)]
        min_duration: Option<f64>,
    },
    /// Replay a map event log and export the fused cloud.
    Map {
        log: PathBuf,
        /// Ground-truth landmark PLY (vertex i is landmark i).
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Absolute trajectory error after alignment.
    EvalAte {
        estimate: PathBuf,
        reference: PathBuf,
        /// sim3, se3 or scale:<s>.
        #[arg(long)]
        mode: Option<AlignMode>,
        #[arg(long)]
        max_dt: Option<f64>,
    },
    /// Per-tag position spread from detections along a trajectory.
    EvalTags {
        trajectory: PathBuf,
        detections: PathBuf,
        #[arg(long)]
        max_dt: Option<f64>,
    },
    /// Global plus ICP registration of two PLY clouds.
    Register {
        source: PathBuf,
        target: PathBuf,
        #[arg(long)]
        voxel: Option<f64>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        fpfh_radius: Option<f64>,
        #[arg(long)]
        normal_k: Option<usize>,
        #[arg(long)]
        no_mutual: bool,
        #[arg(long)]
        max_iterations: Option<usize>,
        #[arg(long)]
        icp_max_iter: Option<usize>,
    },
    /// Write every synthetic fixture file.
    Fixtures {
        #[arg(long)]
        allan_duration: Option<f64>,
    },
    /// Print the GPMF tree of an MP4 or a raw GPMF payload.
    Dump {
        input: PathBuf,
        /// Only this payload (MP4 input).
        #[arg(long)]
        payload: Option<usize>,
    },
}

fn positive_flag(name: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Input(format!(
            "--{name} must be positive, got {v}"
        )))
    }
}

impl Cli {
    /// Defaults, then the config file, then flags.
    pub fn resolve_config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = &self.out_dir {
            cfg.out_dir = d.clone();
        }
        match &self.command {
            Command::Allan {
                sensor,
                axes,
                per_decade,
                white_min,
                white_max,
                rw_min,
                rw_max,
                min_duration,
                ..
            } => {
                let a = &mut cfg.allan;
                if let Some(s) = sensor {
                    a.sensor = *s;
                }
                if let Some(x) = axes {
                    check_axes(x)?;
                    a.axes = x.clone();
                }
                if let Some(n) = per_decade {
                    if *n == 0 {
                        return Err(CliError::Input("--per-decade must be at least 1".into()));
                    }
                    a.per_decade = *n;
                }
                if let Some(v) = white_min {
                    a.windows.white.0 = Some(positive_flag("white-min", *v)?);
                }
                if let Some(v) = white_max {
                    a.windows.white.1 = Some(positive_flag("white-max", *v)?);
                }
                if let Some(v) = rw_min {
                    a.windows.random_walk.0 = Some(positive_flag("rw-min", *v)?);
                }
                if let Some(v) = rw_max {
                    a.windows.random_walk.1 = Some(positive_flag("rw-max", *v)?);
                }
                if let Some(v) = min_duration {
                    a.min_duration = *v;
                }
            }
            Command::EvalAte { mode, max_dt, .. } => {
                if let Some(m) = mode {
                    cfg.ate.mode = *m;
                }
                if let Some(v) = max_dt {
                    cfg.ate.max_dt = positive_flag("max-dt", *v)?;
                }
            }
            Command::EvalTags { max_dt, .. } => {
                if let Some(v) = max_dt {
                    cfg.tags.max_dt = positive_flag("max-dt", *v)?;
                }
            }
            Command::Register {
                voxel,
                threshold,
                fpfh_radius,
                normal_k,
                no_mutual,
                max_iterations,
                icp_max_iter,
                ..
            } => {
                let r = &mut cfg.register;
                if let Some(v) = voxel {
                    set_voxel(r, positive_flag("voxel", *v)?);
                }
                if let Some(v) = threshold {
                    r.threshold = positive_flag("threshold", *v)?;
                }
                if let Some(v) = fpfh_radius {
                    r.fpfh_radius = positive_flag("fpfh-radius", *v)?;
                }
                if let Some(k) = normal_k {
                    r.normal_k = *k;
                }
                if *no_mutual {
                    r.mutual_filter = false;
                }
                if let Some(n) = max_iterations {
                    r.ransac.max_iterations = *n;
                }
                if let Some(n) = icp_max_iter {
                    r.icp_max_iter = *n;
                }
            }
            Command::Fixtures { allan_duration } => {
                if let Some(v) = allan_duration {
                    cfg.fixtures.allan_duration = positive_flag("allan-duration", *v)?;
                }
            }
            Command::Extract { .. } | Command::Map { .. } | Command::Dump { .. } => {}
        }
        Ok(cfg)
    }
}

/// Runs a parsed command line with a resolved config.
pub fn execute(cli: &Cli, cfg: &RunConfig) -> Result<CmdOutput, CliError> {
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| CliError::Input(e.to_string()).at(&cfg.out_dir))?;
    match &cli.command {
        Command::Extract { mp4 } => cmd_extract(mp4, cfg),
        Command::Allan { imu_csv, .. } => cmd_allan(imu_csv, cfg),
        Command::Map { log, truth } => cmd_map(log, truth.as_deref(), cfg),
        Command::EvalAte {
            estimate,
            reference,
            ..
        } => cmd_eval_ate(estimate, reference, cfg),
        Command::EvalTags {
            trajectory,
            detections,
            ..
        } => cmd_eval_tags(trajectory, detections, cfg),
        Command::Register { source, target, .. } => cmd_register(source, target, cfg),
        Command::Fixtures { .. } => cmd_fixtures(cfg),
        Command::Dump { input, payload } => cmd_dump(input, *payload, cfg),
    }
}

/// Full binary behavior: parse arguments, set up logging, run, print the
/// summary to stdout and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Warn,
        (false, 1) => log::LevelFilter::Info,
        (false, 2) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .try_init();
    let result = cli.resolve_config().and_then(|cfg| execute(&cli, &cfg));
    match result {
        Ok(out) => {
            print!("{}", out.summary);
            0
        }
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("gopro-vi").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("run.cfg");
        std::fs::write(
            &cfg_path,
            "seed = 5\nregister.voxel = 0.2\nregister.threshold = 0.3\nate.mode = se3\n",
        )
        .unwrap();
        let cfg_arg = cfg_path.to_str().unwrap();

        let cli = parse(&["--config", cfg_arg, "register", "a.ply", "b.ply"]);
        let cfg = cli.resolve_config().unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.register.voxel, 0.2);
        assert_eq!(cfg.register.fpfh_radius, 1.0);
        assert_eq!(cfg.register.threshold, 0.3);
        assert_eq!(cfg.ate.mode, AlignMode::Se3);

        let cli = parse(&[
            "register", "a.ply", "b.ply", "--config", cfg_arg, "--seed", "9", "--voxel", "0.05",
        ]);
        let cfg = cli.resolve_config().unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.register.voxel, 0.05);
        assert_eq!(cfg.register.threshold, 0.05);
    }

    #[test]
    fn defaults_match_module_defaults() {
        let cfg = parse(&["map", "x.log"]).resolve_config().unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.register, RegisterParams::default());
        assert_eq!(cfg.allan.windows, FitWindows::default());
    }

    #[test]
    fn bad_config_is_input_error() {
        let kv = KeyValues::parse("register.voxel = -1").unwrap();
        assert_eq!(RunConfig::default().apply(&kv).unwrap_err().exit_code(), 2);
        let kv = KeyValues::parse("nonsense = 1").unwrap();
        assert_eq!(RunConfig::default().apply(&kv).unwrap_err().exit_code(), 2);
        let kv = KeyValues::parse("allan.axes = xx").unwrap();
        assert!(RunConfig::default().apply(&kv).is_err());
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(main_with_args(["gopro-vi", "frobnicate"]), 2);
        assert_eq!(
            main_with_args(["gopro-vi", "eval-ate", "a", "b", "--mode", "affine"]),
            2
        );
    }
}
