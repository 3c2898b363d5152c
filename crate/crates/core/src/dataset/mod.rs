//! Command and ground-truth logs, their time alignment, and a synthetic
//! data generator.

mod io;
mod sim;

pub use io::{
    command_log_csv, load_command_log, load_pose_log, pose_log_csv, write_command_log,
    write_pose_log, COMMAND_HEADER, POSE_HEADER,
};
pub use sim::{
    driving_profile, excitation_profile, simulate, NoiseGate, Saturation, SimScenario,
    COMMAND_PERIOD, DEFAULT_POSE_PERIOD,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, Pose2D};
use crate::models::WheelCommand;

/// Minimum time overlap between command and pose logs.
pub const MIN_OVERLAP: f64 = 1.0;
/// Command and pose stamps closer than this are treated as simultaneous.
pub const ANCHOR_TOLERANCE: f64 = 1e-9;

fn check_increasing(stamps: impl Iterator<Item = f64>, what: &str) -> Result<()> {
    let mut prev = f64::NEG_INFINITY;
    for (i, t) in stamps.enumerate() {
        if !t.is_finite() || t <= prev {
            return Err(Error::invalid(format!(
                "{what} timestamp {t} at index {i} is not strictly increasing"
            )));
        }
        prev = t;
    }
    Ok(())
}

/// Wheel commands with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CommandLog(Vec<WheelCommand>);

impl CommandLog {
    pub fn new(commands: Vec<WheelCommand>) -> Result<Self> {
        check_increasing(commands.iter().map(|c| c.t), "command")?;
        if let Some(c) = commands.iter().find(|c| !c.is_finite()) {
            return Err(Error::invalid(format!("non-finite command {c:?}")));
        }
        Ok(CommandLog(commands))
    }

    pub(crate) fn from_sorted(commands: Vec<WheelCommand>) -> Self {
        CommandLog(commands)
    }

    pub fn as_slice(&self) -> &[WheelCommand] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, WheelCommand> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<WheelCommand> {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StampedPose {
    pub t: f64,
    pub pose: Pose2D,
}

/// Ground-truth poses with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PoseLog(Vec<StampedPose>);

impl PoseLog {
    pub fn new(poses: Vec<StampedPose>) -> Result<Self> {
        check_increasing(poses.iter().map(|p| p.t), "pose")?;
        if let Some(p) = poses.iter().find(|p| !p.pose.is_finite()) {
            return Err(Error::invalid(format!("non-finite pose {p:?}")));
        }
        Ok(PoseLog(poses))
    }

    pub(crate) fn from_sorted(poses: Vec<StampedPose>) -> Self {
        PoseLog(poses)
    }

    pub fn as_slice(&self) -> &[StampedPose] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, StampedPose> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncedSample {
    pub t: f64,
    pub command: WheelCommand,
    pub pose: Pose2D,
    /// Ground-truth distance travelled since the first sample.
    pub path_length: f64,
    /// True when `t` coincides with a ground-truth timestamp, so `pose` is
    /// measured rather than interpolated.
    pub anchored: bool,
}

/// Commands paired with ground truth interpolated at the command times.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SyncedTrajectory {
    samples: Vec<SyncedSample>,
}

impl SyncedTrajectory {
    pub fn samples(&self) -> &[SyncedSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.path_length)
    }

    pub fn duration(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    /// The command log and pose log this trajectory would be synchronized from.
    pub fn to_logs(&self) -> (CommandLog, PoseLog) {
        (
            CommandLog(self.samples.iter().map(|s| s.command).collect()),
            PoseLog(
                self.samples
                    .iter()
                    .map(|s| StampedPose {
                        t: s.t,
                        pose: s.pose,
                    })
                    .collect(),
            ),
        )
    }

    /// Applies a rigid transform to every ground-truth pose.
    pub fn transformed(&self, g: &Pose2D) -> SyncedTrajectory {
        SyncedTrajectory {
            samples: self
                .samples
                .iter()
                .map(|s| SyncedSample {
                    pose: g.compose(&s.pose),
                    ..*s
                })
                .collect(),
        }
    }
}

/// Linear interpolation of position, shortest-arc interpolation of heading.
pub fn interpolate_pose(a: &StampedPose, b: &StampedPose, t: f64) -> Pose2D {
    if t <= a.t {
        return a.pose;
    }
    if t >= b.t {
        return b.pose;
    }
    let s = (t - a.t) / (b.t - a.t);
    let dtheta = normalize_angle(b.pose.theta - a.pose.theta);
    Pose2D::new(
        a.pose.x + s * (b.pose.x - a.pose.x),
        a.pose.y + s * (b.pose.y - a.pose.y),
        a.pose.theta + s * dtheta,
    )
}

/// Resamples ground truth onto the command timestamps inside the common
/// time span of both logs.
///
/// Samples that coincide with a pose timestamp are marked as anchored. If
/// fewer than two samples are, every sample is marked anchored.
pub fn synchronize(cmds: &CommandLog, poses: &PoseLog) -> Result<SyncedTrajectory> {
    let (Some(c0), Some(p0)) = (cmds.0.first(), poses.0.first()) else {
        return Err(Error::Alignment("empty log".into()));
    };
    let start = c0.t.max(p0.t);
    let end = cmds.0.last().unwrap().t.min(poses.0.last().unwrap().t);
    if !(end - start >= MIN_OVERLAP) {
        return Err(Error::Alignment(format!(
            "logs overlap on [{start}, {end}], need at least {MIN_OVERLAP} s"
        )));
    }
    let p = &poses.0;
    let mut j = 0;
    let mut samples: Vec<SyncedSample> = Vec::new();
    for cmd in cmds.0.iter().filter(|c| c.t >= start && c.t <= end) {
        while j + 1 < p.len() && p[j + 1].t <= cmd.t {
            j += 1;
        }
        let pose = if j + 1 < p.len() {
            interpolate_pose(&p[j], &p[j + 1], cmd.t)
        } else {
            p[j].pose
        };
        let anchored = (cmd.t - p[j].t).abs() <= ANCHOR_TOLERANCE
            || p.get(j + 1)
                .is_some_and(|n| (n.t - cmd.t).abs() <= ANCHOR_TOLERANCE);
        let path_length = match samples.last() {
            Some(prev) => prev.path_length + prev.pose.distance(&pose),
            None => 0.0,
        };
        samples.push(SyncedSample {
            t: cmd.t,
            command: *cmd,
            pose,
            path_length,
            anchored,
        });
    }
    if samples.iter().filter(|s| s.anchored).count() < 2 {
        for s in &mut samples {
            s.anchored = true;
        }
    }
    Ok(SyncedTrajectory { samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn straight(n_pose: usize, pose_dt: f64) -> PoseLog {
        PoseLog::new(
            (0..n_pose)
                .map(|i| {
                    let t = i as f64 * pose_dt;
                    StampedPose {
                        t,
                        pose: Pose2D::new(t, 0.0, 0.0),
                    }
                })
                .collect(),
        )
        .unwrap()
    }

    fn commands(n: usize, dt: f64, offset: f64) -> CommandLog {
        CommandLog::new(
            (0..n)
                .map(|i| WheelCommand::new(offset + i as f64 * dt, 1.0, 1.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn interpolates_linear_data_exactly() {
        let traj = synchronize(&commands(41, 0.05, 0.0), &straight(21, 0.1)).unwrap();
        assert_eq!(traj.len(), 41);
        for s in traj.samples() {
            assert_abs_diff_eq!(s.pose.x, s.t, epsilon = 1e-12);
            assert_abs_diff_eq!(s.path_length, s.t, epsilon = 1e-12);
        }
        assert_eq!(traj.samples()[0].path_length, 0.0);
    }

    #[test]
    fn anchors_follow_pose_stamps() {
        let traj = synchronize(&commands(41, 0.05, 0.0), &straight(21, 0.1)).unwrap();
        for (i, s) in traj.samples().iter().enumerate() {
            assert_eq!(s.anchored, i % 2 == 0, "sample {i}");
        }
        // no common stamps at all: everything counts as anchored
        let traj = synchronize(&commands(30, 0.05, 0.025), &straight(21, 0.1)).unwrap();
        assert!(traj.samples().iter().all(|s| s.anchored));
    }

    #[test]
    fn heading_takes_shortest_arc() {
        let poses = PoseLog::new(vec![
            StampedPose {
                t: 0.0,
                pose: Pose2D::new(0.0, 0.0, 3.0),
            },
            StampedPose {
                t: 1.0,
                pose: Pose2D::new(0.0, 0.0, -3.0),
            },
            StampedPose {
                t: 2.0,
                pose: Pose2D::new(0.0, 0.0, -3.0),
            },
        ])
        .unwrap();
        let traj = synchronize(&commands(3, 0.5, 0.0), &poses).unwrap();
        let mid = traj.samples()[1].pose.theta;
        assert_abs_diff_eq!(mid.abs(), PI, epsilon = 1e-12);
    }

    #[test]
    fn commands_outside_overlap_are_dropped() {
        let traj = synchronize(&commands(100, 0.05, -1.0), &straight(21, 0.1)).unwrap();
        assert!(traj.samples().iter().all(|s| s.t >= 0.0 && s.t <= 2.0));
        assert_abs_diff_eq!(traj.samples()[0].t, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn disjoint_logs_fail() {
        let err = synchronize(&commands(20, 0.05, 10.0), &straight(21, 0.1)).unwrap_err();
        assert!(matches!(err, Error::Alignment(_)));
        let err = synchronize(&commands(10, 0.05, 0.0), &straight(21, 0.1)).unwrap_err();
        assert!(matches!(err, Error::Alignment(_)));
    }

    #[test]
    fn resync_is_idempotent() {
        let poses = PoseLog::new(
            (0..40)
                .map(|i| {
                    let t = i as f64 * 0.1;
                    StampedPose {
                        t,
                        pose: Pose2D::new(t.sin() * 3.0, t * t, 1.7 * t),
                    }
                })
                .collect(),
        )
        .unwrap();
        let traj = synchronize(&commands(70, 0.05, 0.02), &poses).unwrap();
        let (c, p) = traj.to_logs();
        let again = synchronize(&c, &p).unwrap();
        assert_eq!(again.len(), traj.len());
        for (a, b) in traj.samples().iter().zip(again.samples()) {
            assert_abs_diff_eq!(a.pose.x, b.pose.x, epsilon = 1e-12);
            assert_abs_diff_eq!(a.pose.y, b.pose.y, epsilon = 1e-12);
            assert_abs_diff_eq!(a.pose.theta, b.pose.theta, epsilon = 1e-12);
            assert_abs_diff_eq!(a.path_length, b.path_length, epsilon = 1e-12);
        }
    }

    #[test]
    fn logs_reject_unsorted_input() {
        assert!(CommandLog::new(vec![
            WheelCommand::new(1.0, 0.0, 0.0),
            WheelCommand::new(0.5, 0.0, 0.0)
        ])
        .is_err());
        assert!(CommandLog::new(vec![WheelCommand::new(0.0, f64::NAN, 0.0)]).is_err());
    }
}
