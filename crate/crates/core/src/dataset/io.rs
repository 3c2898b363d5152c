//! CSV readers and writers for command and pose logs.
//!
//! Command files carry the header `t,omega_l,omega_r` (s, rad/s, rad/s),
//! pose files `t,x,y,theta` (s, m, m, rad).

use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use super::{CommandLog, PoseLog, StampedPose};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::geometry::Pose2D;
use crate::models::WheelCommand;

pub const COMMAND_HEADER: [&str; 3] = ["t", "omega_l", "omega_r"];
pub const POSE_HEADER: [&str; 4] = ["t", "x", "y", "theta"];

#[derive(Deserialize)]
struct PoseRow {
    t: f64,
    x: f64,
    y: f64,
    theta: f64,
}

fn read_rows<T>(
    path: &Path,
    header: &[&str],
    mut check: impl FnMut(&T) -> bool,
) -> Result<Vec<(u64, T)>>
where
    T: for<'de> Deserialize<'de>,
{
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        return Err(Error::EmptyLog { path: path.into() });
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.into(),
        line,
        message,
    };
    let found = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(parse_err(
            1,
            format!(
                "expected header `{}`, found `{}`",
                header.join(","),
                found.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row: T = record
            .deserialize(Some(&found))
            .map_err(|e| parse_err(line, e.to_string()))?;
        if !check(&row) {
            return Err(parse_err(line, "non-finite value".into()));
        }
        rows.push((line, row));
    }
    if rows.is_empty() {
        return Err(Error::EmptyLog { path: path.into() });
    }
    Ok(rows)
}

fn check_monotonic(path: &Path, stamps: impl Iterator<Item = (u64, f64)>) -> Result<()> {
    let mut prev = f64::NEG_INFINITY;
    for (line, t) in stamps {
        if !(t > prev) {
            return Err(Error::NonMonotonic {
                path: path.into(),
                line,
                t,
            });
        }
        prev = t;
    }
    Ok(())
}

pub fn load_command_log(path: &Path) -> Result<CommandLog> {
    let rows = read_rows::<WheelCommand>(path, &COMMAND_HEADER, WheelCommand::is_finite)?;
    check_monotonic(path, rows.iter().map(|(l, c)| (*l, c.t)))?;
    Ok(CommandLog::from_sorted(
        rows.into_iter().map(|(_, c)| c).collect(),
    ))
}

pub fn load_pose_log(path: &Path) -> Result<PoseLog> {
    let rows = read_rows::<PoseRow>(path, &POSE_HEADER, |r| {
        r.t.is_finite() && r.x.is_finite() && r.y.is_finite() && r.theta.is_finite()
    })?;
    check_monotonic(path, rows.iter().map(|(l, r)| (*l, r.t)))?;
    Ok(PoseLog::from_sorted(
        rows.into_iter()
            .map(|(_, r)| StampedPose {
                t: r.t,
                pose: Pose2D::new(r.x, r.y, r.theta),
            })
            .collect(),
    ))
}

pub fn command_log_csv(log: &CommandLog) -> String {
    let mut out = COMMAND_HEADER.join(",");
    out.push('\n');
    for c in log.iter() {
        let _ = writeln!(out, "{},{},{}", c.t, c.omega_l, c.omega_r);
    }
    out
}

pub fn pose_log_csv(log: &PoseLog) -> String {
    let mut out = POSE_HEADER.join(",");
    out.push('\n');
    for s in log.iter() {
        let _ = writeln!(out, "{},{},{},{}", s.t, s.pose.x, s.pose.y, s.pose.theta);
    }
    out
}

pub fn write_command_log(path: &Path, log: &CommandLog) -> Result<()> {
    write_atomic(path, command_log_csv(log).as_bytes())
}

pub fn write_pose_log(path: &Path, log: &PoseLog) -> Result<()> {
    write_atomic(path, pose_log_csv(log).as_bytes())
}
