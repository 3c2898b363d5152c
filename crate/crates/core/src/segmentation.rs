//! Cutting a synchronized trajectory into fixed-horizon segments.

use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::dataset::SyncedTrajectory;
use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, Pose2D};
use crate::models::WheelCommand;

/// Relative slack when comparing accumulated length or time against the horizon.
const HORIZON_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HorizonMode {
    /// Horizon in meters of ground-truth path.
    Spatial,
    /// Horizon in seconds.
    Temporal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stride {
    /// Next segment starts where the previous one ended.
    NonOverlapping,
    /// One segment per trajectory sample.
    Sliding,
}

impl FromStr for HorizonMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spatial" => Ok(HorizonMode::Spatial),
            "temporal" => Ok(HorizonMode::Temporal),
            _ => Err(Error::invalid(format!("unknown horizon mode `{s}`"))),
        }
    }
}

impl fmt::Display for HorizonMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HorizonMode::Spatial => "spatial",
            HorizonMode::Temporal => "temporal",
        })
    }
}

impl FromStr for Stride {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "non-overlapping" => Ok(Stride::NonOverlapping),
            "sliding" => Ok(Stride::Sliding),
            _ => Err(Error::invalid(format!("unknown stride `{s}`"))),
        }
    }
}

impl fmt::Display for Stride {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stride::NonOverlapping => "non-overlapping",
            Stride::Sliding => "sliding",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonConfig {
    pub mode: HorizonMode,
    pub horizon: f64,
    pub stride: Stride,
    /// A sample is "zero" when both wheel speeds are below this (rad/s).
    pub zero_command_threshold: f64,
    /// Segments with more than this fraction of zero samples are dropped.
    pub zero_command_fraction: f64,
}

impl HorizonConfig {
    pub const DEFAULT_ZERO_THRESHOLD: f64 = 0.05;
    pub const DEFAULT_ZERO_FRACTION: f64 = 0.5;

    /// Non-overlapping spatial windows, as used for training.
    pub fn training(horizon: f64) -> Self {
        HorizonConfig {
            mode: HorizonMode::Spatial,
            horizon,
            stride: Stride::NonOverlapping,
            zero_command_threshold: Self::DEFAULT_ZERO_THRESHOLD,
            zero_command_fraction: Self::DEFAULT_ZERO_FRACTION,
        }
    }

    /// Sliding spatial windows, as used for evaluation.
    pub fn evaluation(horizon: f64) -> Self {
        HorizonConfig {
            stride: Stride::Sliding,
            ..Self::training(horizon)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::invalid(format!(
                "horizon must be > 0, got {}",
                self.horizon
            )));
        }
        if !(self.zero_command_threshold >= 0.0) {
            return Err(Error::invalid("zero-command threshold must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.zero_command_fraction) {
            return Err(Error::invalid("zero-command fraction must be in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start_time: f64,
    pub start_pose: Pose2D,
    pub end_pose: Pose2D,
    /// Commands from the start sample through the cut sample, inclusive.
    pub commands: Vec<WheelCommand>,
    pub path_length: f64,
    pub duration: f64,
    /// Time-weighted means under zero-order hold.
    pub mean_omega_l: f64,
    pub mean_omega_r: f64,
    /// Unwrapped ground-truth heading change over the segment.
    pub heading_change: f64,
}

impl Segment {
    /// Segment with every ground-truth pose moved by `g`.
    pub fn transformed(&self, g: &Pose2D) -> Segment {
        Segment {
            start_pose: g.compose(&self.start_pose),
            end_pose: g.compose(&self.end_pose),
            ..self.clone()
        }
    }
}

fn build_segment(traj: &SyncedTrajectory, start: usize, end: usize) -> Segment {
    let s = &traj.samples()[start..=end];
    let commands: Vec<WheelCommand> = s.iter().map(|x| x.command).collect();
    let duration = s[s.len() - 1].t - s[0].t;
    let (mut wl, mut wr) = (0.0, 0.0);
    for pair in commands.windows(2) {
        let dt = pair[1].t - pair[0].t;
        wl += pair[0].omega_l * dt;
        wr += pair[0].omega_r * dt;
    }
    let heading_change = s
        .windows(2)
        .map(|p| normalize_angle(p[1].pose.theta - p[0].pose.theta))
        .sum();
    Segment {
        start_time: s[0].t,
        start_pose: s[0].pose,
        end_pose: s[s.len() - 1].pose,
        commands,
        path_length: s[s.len() - 1].path_length - s[0].path_length,
        duration,
        mean_omega_l: if duration > 0.0 { wl / duration } else { 0.0 },
        mean_omega_r: if duration > 0.0 { wr / duration } else { 0.0 },
        heading_change,
    }
}

fn is_outlier(seg: &Segment, cfg: &HorizonConfig) -> bool {
    let zero = seg
        .commands
        .iter()
        .filter(|c| c.omega_l.abs().max(c.omega_r.abs()) < cfg.zero_command_threshold)
        .count();
    zero as f64 > cfg.zero_command_fraction * seg.commands.len() as f64
}

/// Index of the first sample after `start` that closes a window.
fn find_cut(
    traj: &SyncedTrajectory,
    start: usize,
    cfg: &HorizonConfig,
    from: usize,
) -> Option<usize> {
    let s = traj.samples();
    let reach = cfg.horizon * (1.0 - HORIZON_EPS);
    let progress = |j: usize| match cfg.mode {
        HorizonMode::Spatial => s[j].path_length - s[start].path_length,
        HorizonMode::Temporal => s[j].t - s[start].t,
    };
    (from.max(start + 1)..s.len()).find(|&j| s[j].anchored && progress(j) >= reach)
}

/// Splits `traj` into segments of horizon `cfg.horizon`.
///
/// Segments start and end on anchored samples (measured ground truth); the
/// commands in between are kept at full rate. A trailing partial window is
/// discarded, and segments dominated by near-zero commands are dropped.
pub fn segment(traj: &SyncedTrajectory, cfg: &HorizonConfig) -> Result<Vec<Segment>> {
    cfg.validate()?;
    if traj.is_empty() {
        return Err(Error::invalid("cannot segment an empty trajectory"));
    }
    let mut windows = Vec::new();
    match cfg.stride {
        Stride::NonOverlapping => {
            let Some(mut start) = traj.samples().iter().position(|s| s.anchored) else {
                return Ok(Vec::new());
            };
            while let Some(end) = find_cut(traj, start, cfg, start + 1) {
                windows.push((start, end));
                start = end;
            }
        }
        Stride::Sliding => {
            // cuts are monotone in the start index
            let mut end = 0;
            for start in (0..traj.len()).filter(|&i| traj.samples()[i].anchored) {
                match find_cut(traj, start, cfg, end) {
                    Some(e) => {
                        windows.push((start, e));
                        end = e;
                    }
                    None => break,
                }
            }
        }
    }
    if windows.is_empty() {
        warn!(
            "horizon {} ({}) exceeds the trajectory ({:.3} m, {:.3} s); no segments",
            cfg.horizon,
            cfg.mode,
            traj.total_length(),
            traj.duration()
        );
    }
    Ok(windows
        .into_iter()
        .map(|(a, b)| build_segment(traj, a, b))
        .filter(|seg| !is_outlier(seg, cfg))
        .collect())
}

/// Number of segments `N` in the loss sum.
pub fn count(segments: &[Segment]) -> usize {
    segments.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synchronize, CommandLog, PoseLog, StampedPose};

    fn line(speed: f64, seconds: f64, omega: f64) -> SyncedTrajectory {
        let n = (seconds / 0.05).round() as usize;
        let cmds = CommandLog::new(
            (0..=n)
                .map(|i| WheelCommand::new(i as f64 * 0.05, omega, omega))
                .collect(),
        )
        .unwrap();
        let poses = PoseLog::new(
            (0..=n)
                .map(|i| {
                    let t = i as f64 * 0.05;
                    StampedPose {
                        t,
                        pose: Pose2D::new(speed * t, 0.0, 0.0),
                    }
                })
                .collect(),
        )
        .unwrap();
        synchronize(&cmds, &poses).unwrap()
    }

    #[test]
    fn five_straight_segments() {
        let traj = line(1.0, 10.0, 3.0);
        let segs = segment(&traj, &HorizonConfig::training(2.0)).unwrap();
        assert_eq!(count(&segs), 5);
        for s in &segs {
            assert!((s.path_length - 2.0).abs() < 1e-9);
            assert_eq!(s.commands.len(), 41);
            assert!((s.mean_omega_l - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sliding_count_matches_scan() {
        let traj = line(1.0, 10.0, 3.0);
        let segs = segment(&traj, &HorizonConfig::evaluation(2.0)).unwrap();
        let s = traj.samples();
        let brute = (0..s.len())
            .filter(|&i| s.last().unwrap().path_length - s[i].path_length >= 2.0 - 1e-9)
            .count();
        assert_eq!(segs.len(), brute);
        assert_eq!(brute, 161);
    }

    #[test]
    fn temporal_mode() {
        let traj = line(0.5, 10.0, 3.0);
        let cfg = HorizonConfig {
            mode: HorizonMode::Temporal,
            ..HorizonConfig::training(2.5)
        };
        let segs = segment(&traj, &cfg).unwrap();
        assert_eq!(segs.len(), 4);
        for s in &segs {
            assert!((s.duration - 2.5).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_commands_are_outliers() {
        let traj = line(1.0, 10.0, 0.0);
        assert!(segment(&traj, &HorizonConfig::training(2.0))
            .unwrap()
            .is_empty());
        assert!(segment(&traj, &HorizonConfig::evaluation(2.0))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn long_horizon_yields_nothing() {
        let traj = line(1.0, 10.0, 3.0);
        assert!(segment(&traj, &HorizonConfig::training(50.0))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn rejects_bad_config() {
        let traj = line(1.0, 10.0, 3.0);
        assert!(segment(&traj, &HorizonConfig::training(0.0)).is_err());
        assert!(segment(&traj, &HorizonConfig::training(-1.0)).is_err());
        let mut cfg = HorizonConfig::training(1.0);
        cfg.zero_command_fraction = 1.5;
        assert!(segment(&traj, &cfg).is_err());
        assert!(segment(&SyncedTrajectory::default(), &HorizonConfig::training(1.0)).is_err());
    }

    #[test]
    fn parses_cli_names() {
        assert_eq!(
            "spatial".parse::<HorizonMode>().unwrap(),
            HorizonMode::Spatial
        );
        assert_eq!("sliding".parse::<Stride>().unwrap(), Stride::Sliding);
        assert_eq!(
            Stride::NonOverlapping
                .to_string()
                .parse::<Stride>()
                .unwrap(),
            Stride::NonOverlapping
        );
        assert!("diagonal".parse::<Stride>().is_err());
    }
}
