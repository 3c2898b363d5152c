//! Synthetic skid-steer runs: a "true" model driven by a command profile,
//! with seeded body-frame twist noise and an optional curvature saturation.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{load_command_log, CommandLog, PoseLog, StampedPose};
use crate::error::{Error, Result};
use crate::geometry::{integrate, Pose2D, Twist2D};
use crate::kv::KvDocument;
use crate::models::{KinematicModel, ModelDocument, WheelCommand};

/// Command period of generated profiles (20 Hz).
pub const COMMAND_PERIOD: f64 = 0.05;
/// Ground-truth period of simulated pose logs (10 Hz).
pub const DEFAULT_POSE_PERIOD: f64 = 0.1;

/// Caps the rotation per meter travelled.
///
/// Above `threshold` (rad/m) the excess rotation is multiplied by `gain`;
/// `gain = 0` flattens the response completely.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Saturation {
    pub threshold: f64,
    pub gain: f64,
}

impl Saturation {
    pub fn apply(&self, twist: Twist2D) -> Twist2D {
        let speed = twist.vx.hypot(twist.vy);
        let knee = self.threshold * speed;
        let w = twist.omega.abs();
        if w <= knee {
            return twist;
        }
        Twist2D {
            omega: twist.omega.signum() * (knee + self.gain * (w - knee)),
            ..twist
        }
    }
}

/// Restricts twist noise to commands whose wheel-speed ratio is near `ratio`.
///
/// Both wheels must turn the same way and the faster side must run at
/// `ratio +- tolerance` times the slower one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseGate {
    pub ratio: f64,
    pub tolerance: f64,
}

impl NoiseGate {
    pub fn admits(&self, cmd: &WheelCommand) -> bool {
        let (a, b) = (cmd.omega_l, cmd.omega_r);
        if a * b <= 0.0 {
            return false;
        }
        let (lo, hi) = if a.abs() < b.abs() {
            (a.abs(), b.abs())
        } else {
            (b.abs(), a.abs())
        };
        (hi / lo - self.ratio).abs() <= self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimScenario {
    pub true_model: KinematicModel,
    pub command_profile: CommandLog,
    /// Standard deviations of (vx, vy, omega) noise, per command step.
    pub twist_noise_std: [f64; 3],
    pub angular_saturation: Option<Saturation>,
    pub noise_gate: Option<NoiseGate>,
    pub rng_seed: u64,
    pub pose_period: f64,
    pub start: Pose2D,
}

impl SimScenario {
    pub fn new(true_model: KinematicModel, command_profile: CommandLog, rng_seed: u64) -> Self {
        SimScenario {
            true_model,
            command_profile,
            twist_noise_std: [0.0; 3],
            angular_saturation: None,
            noise_gate: None,
            rng_seed,
            pose_period: DEFAULT_POSE_PERIOD,
            start: Pose2D::IDENTITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self
            .twist_noise_std
            .iter()
            .any(|s| !(s.is_finite() && *s >= 0.0))
        {
            return Err(Error::invalid(format!(
                "noise standard deviations must be finite and >= 0, got {:?}",
                self.twist_noise_std
            )));
        }
        if let Some(s) = self.angular_saturation {
            if !(s.threshold.is_finite()
                && s.threshold >= 0.0
                && s.gain.is_finite()
                && s.gain >= 0.0)
            {
                return Err(Error::invalid(format!("bad saturation {s:?}")));
            }
        }
        if !(self.pose_period.is_finite() && self.pose_period > 0.0) {
            return Err(Error::invalid("pose period must be > 0"));
        }
        if self.command_profile.len() < 2 {
            return Err(Error::invalid("command profile needs at least 2 commands"));
        }
        Ok(())
    }

    /// Reads a scenario from a flat key-value document.
    ///
    /// Recognized keys: `seed`, `pose_period`, `noise.vx|vy|omega`,
    /// `saturation.threshold|gain`, `noise_gate.ratio|tolerance`, the model
    /// document under `model.` and either `profile.file` (relative to
    /// `base_dir`) or `profile.duration`, `profile.speed_limit`, `profile.seed`
    /// and `profile.kind` (`excitation`, the default, or `driving`).
    pub fn from_kv(doc: &KvDocument, base_dir: &Path) -> std::result::Result<Self, String> {
        let model = ModelDocument::from_kv(&doc.section("model"))
            .map_err(|e| format!("model: {e}"))?
            .model;
        let profile_doc = doc.section("profile");
        let profile = if let Some(file) = profile_doc.get("file") {
            load_command_log(&base_dir.join(file)).map_err(|e| e.to_string())?
        } else {
            let generate = match profile_doc.get("kind").unwrap_or("excitation") {
                "excitation" => excitation_profile,
                "driving" => driving_profile,
                other => return Err(format!("unknown profile.kind `{other}`")),
            };
            generate(
                profile_doc.require_value("duration")?,
                profile_doc.require_value("speed_limit")?,
                profile_doc.parse_value("seed")?.unwrap_or(0),
            )
            .map_err(|e| e.to_string())?
        };
        let noise = doc.section("noise");
        let mut scenario = SimScenario::new(model, profile, doc.parse_value("seed")?.unwrap_or(0));
        scenario.twist_noise_std = [
            noise.parse_value("vx")?.unwrap_or(0.0),
            noise.parse_value("vy")?.unwrap_or(0.0),
            noise.parse_value("omega")?.unwrap_or(0.0),
        ];
        let sat = doc.section("saturation");
        if !sat.is_empty() {
            scenario.angular_saturation = Some(Saturation {
                threshold: sat.require_value("threshold")?,
                gain: sat.parse_value("gain")?.unwrap_or(0.0),
            });
        }
        let gate = doc.section("noise_gate");
        if !gate.is_empty() {
            scenario.noise_gate = Some(NoiseGate {
                ratio: gate.require_value("ratio")?,
                tolerance: gate.require_value("tolerance")?,
            });
        }
        if let Some(p) = doc.parse_value("pose_period")? {
            scenario.pose_period = p;
        }
        scenario.validate().map_err(|e| e.to_string())?;
        Ok(scenario)
    }
}

/// Drives the true model through the command profile.
///
/// Returns the command log unchanged and the ground-truth pose log sampled
/// every `pose_period` seconds.
pub fn simulate(scenario: &SimScenario) -> Result<(CommandLog, PoseLog)> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.rng_seed);
    let [sx, sy, sw] = scenario.twist_noise_std;
    let cmds = scenario.command_profile.as_slice();

    let mut pose = scenario.start;
    let mut poses = vec![StampedPose { t: cmds[0].t, pose }];
    let mut last_kept = cmds[0].t;
    for pair in cmds.windows(2) {
        let cmd = &pair[0];
        let mut twist = scenario.true_model.predict_twist(cmd)?;
        if let Some(sat) = &scenario.angular_saturation {
            twist = sat.apply(twist);
        }
        // always draw so the stream does not depend on the gate
        let n: [f64; 3] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        if scenario.noise_gate.is_none_or(|g| g.admits(cmd)) {
            twist.vx += sx * n[0];
            twist.vy += sy * n[1];
            twist.omega += sw * n[2];
        }
        let t = pair[1].t;
        pose = integrate(&pose, &twist, t - cmd.t)?;
        if t - last_kept >= scenario.pose_period - 1e-9 {
            poses.push(StampedPose { t, pose });
            last_kept = t;
        }
    }
    Ok((
        scenario.command_profile.clone(),
        PoseLog::from_sorted(poses),
    ))
}

/// Piecewise-constant wheel commands at 20 Hz covering the box
/// `[-speed_limit, speed_limit]^2`.
///
/// Blocks last 1 to 3 s. Most blocks visit the cells of a 10x10 grid over
/// the box in shuffled order; every fifth block is a straight line and the
/// one after it a zero-radius turn, each with random direction.
pub fn excitation_profile(duration: f64, speed_limit: f64, seed: u64) -> Result<CommandLog> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::invalid(format!(
            "profile duration must be > 0, got {duration}"
        )));
    }
    if !(speed_limit.is_finite() && speed_limit > 0.0) {
        return Err(Error::invalid(format!(
            "speed limit must be > 0, got {speed_limit}"
        )));
    }
    const GRID: usize = 10;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (duration / COMMAND_PERIOD).round() as usize + 1;
    let cell = 2.0 * speed_limit / GRID as f64;
    let mut cells: Vec<usize> = Vec::new();
    let mut commands = Vec::with_capacity(n);
    let mut block = 0usize;
    while commands.len() < n {
        let (wl, wr) = match block % 5 {
            3 => {
                let u = speed_limit * rng.gen_range(0.3..=1.0);
                let u = if rng.gen_bool(0.5) { u } else { -u };
                (u, u)
            }
            4 => {
                let u = speed_limit * rng.gen_range(0.3..=1.0);
                let u = if rng.gen_bool(0.5) { u } else { -u };
                (-u, u)
            }
            _ => {
                if cells.is_empty() {
                    cells = (0..GRID * GRID).collect();
                    cells.shuffle(&mut rng);
                }
                let c = cells.pop().unwrap();
                let (i, j) = (c / GRID, c % GRID);
                (
                    -speed_limit + cell * (i as f64 + rng.gen::<f64>()),
                    -speed_limit + cell * (j as f64 + rng.gen::<f64>()),
                )
            }
        };
        let steps = (rng.gen_range(1.0..=3.0) / COMMAND_PERIOD).round() as usize;
        for _ in 0..steps {
            if commands.len() == n {
                break;
            }
            let t = commands.len() as f64 * COMMAND_PERIOD;
            commands.push(WheelCommand::new(t, wl, wr));
        }
        block += 1;
    }
    CommandLog::new(commands)
}

/// Field-like driving at 20 Hz: mostly forward travel with gentle,
/// zero-mean steering, occasional reversing and short stops.
///
/// Blocks last 3 to 8 s. The wheel-speed difference stays within a quarter
/// of the mean wheel speed.
pub fn driving_profile(duration: f64, speed_limit: f64, seed: u64) -> Result<CommandLog> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::invalid(format!(
            "profile duration must be > 0, got {duration}"
        )));
    }
    if !(speed_limit.is_finite() && speed_limit > 0.0) {
        return Err(Error::invalid(format!(
            "speed limit must be > 0, got {speed_limit}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (duration / COMMAND_PERIOD).round() as usize + 1;
    let mut commands = Vec::with_capacity(n);
    while commands.len() < n {
        let roll: f64 = rng.gen();
        let u = if roll < 0.05 {
            0.0
        } else {
            let u = speed_limit * rng.gen_range(0.3..=1.0);
            if roll < 0.15 {
                -u
            } else {
                u
            }
        };
        let d = u.abs() * rng.gen_range(-0.25..=0.25);
        let steps = (rng.gen_range(3.0..=8.0) / COMMAND_PERIOD).round() as usize;
        for _ in 0..steps {
            if commands.len() == n {
                break;
            }
            let t = commands.len() as f64 * COMMAND_PERIOD;
            commands.push(WheelCommand::new(t, u - d, u + d));
        }
    }
    CommandLog::new(commands)
}
