//! Planar rigid-motion algebra and dead reckoning.
//!
//! Poses are elements of SE(2) stored as `(x, y, theta)` with the heading
//! always normalized to `(-pi, pi]`. Twists are body-frame velocities. All
//! propagation is exact for a twist held constant over the step.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{KinematicModel, WheelCommand};

/// Below this `|omega * dt|` the arc is evaluated with its series expansion.
pub const SERIES_THRESHOLD: f64 = 1e-9;

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(angle: f64) -> f64 {
    let a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a - 2.0 * PI
    } else {
        a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2D {
    pub const IDENTITY: Pose2D = Pose2D {
        x: 0.0,
        y: 0.0,
        theta: 0.0,
    };

    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose2D {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }

    /// Applies `other` expressed in this pose's frame.
    pub fn compose(&self, other: &Pose2D) -> Pose2D {
        let (s, c) = self.theta.sin_cos();
        Pose2D::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )
    }

    pub fn inverse(&self) -> Pose2D {
        let (s, c) = self.theta.sin_cos();
        Pose2D::new(
            -(c * self.x + s * self.y),
            s * self.x - c * self.y,
            -self.theta,
        )
    }

    /// Relative pose `self^-1 * other`.
    pub fn between(&self, other: &Pose2D) -> Pose2D {
        let (s, c) = self.theta.sin_cos();
        let dx = other.x - self.x;
        let dy = other.y - self.y;
        Pose2D::new(c * dx + s * dy, -s * dx + c * dy, other.theta - self.theta)
    }

    pub fn distance(&self, other: &Pose2D) -> f64 {
        (other.x - self.x).hypot(other.y - self.y)
    }
}

pub fn compose(a: &Pose2D, b: &Pose2D) -> Pose2D {
    a.compose(b)
}

pub fn between(a: &Pose2D, b: &Pose2D) -> Pose2D {
    a.between(b)
}

/// Body-frame velocity.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist2D {
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
}

impl Twist2D {
    pub const ZERO: Twist2D = Twist2D {
        vx: 0.0,
        vy: 0.0,
        omega: 0.0,
    };

    pub fn new(vx: f64, vy: f64, omega: f64) -> Self {
        Twist2D { vx, vy, omega }
    }

    pub fn is_finite(&self) -> bool {
        self.vx.is_finite() && self.vy.is_finite() && self.omega.is_finite()
    }

    pub fn scaled(&self, s: f64) -> Twist2D {
        Twist2D::new(self.vx * s, self.vy * s, self.omega * s)
    }
}

/// Body-frame displacement produced by holding `twist` for `dt`.
pub fn exp_twist(twist: &Twist2D, dt: f64) -> Pose2D {
    let phi = twist.omega * dt;
    // sin(phi)/omega and (1 - cos(phi))/omega, both scaled by dt
    let (a, b) = if phi.abs() < SERIES_THRESHOLD {
        (dt * (1.0 - phi * phi / 6.0), dt * phi / 2.0)
    } else {
        let half = (0.5 * phi).sin();
        (phi.sin() / twist.omega, 2.0 * half * half / twist.omega)
    };
    Pose2D::new(
        a * twist.vx - b * twist.vy,
        b * twist.vx + a * twist.vy,
        phi,
    )
}

/// Propagates `pose` by a constant body twist over `dt` along the exact arc.
pub fn integrate(pose: &Pose2D, twist: &Twist2D, dt: f64) -> Result<Pose2D> {
    if !twist.is_finite() {
        return Err(Error::invalid(format!("non-finite twist {twist:?}")));
    }
    if !dt.is_finite() || dt < 0.0 {
        return Err(Error::invalid(format!(
            "time step must be finite and >= 0, got {dt}"
        )));
    }
    Ok(pose.compose(&exp_twist(twist, dt)))
}

/// Single forward-Euler step. Kept for comparison against [`integrate`].
pub fn euler_step(pose: &Pose2D, twist: &Twist2D, dt: f64) -> Pose2D {
    let (s, c) = pose.theta.sin_cos();
    Pose2D::new(
        pose.x + (c * twist.vx - s * twist.vy) * dt,
        pose.y + (s * twist.vx + c * twist.vy) * dt,
        pose.theta + twist.omega * dt,
    )
}

fn check_commands(commands: &[WheelCommand]) -> Result<()> {
    if commands.len() < 2 {
        return Err(Error::invalid(format!(
            "rollout needs at least 2 commands, got {}",
            commands.len()
        )));
    }
    for (i, pair) in commands.windows(2).enumerate() {
        if !(pair[1].t > pair[0].t) {
            return Err(Error::invalid(format!(
                "command timestamps not strictly increasing at index {}: {} -> {}",
                i + 1,
                pair[0].t,
                pair[1].t
            )));
        }
    }
    Ok(())
}

/// Dead-reckons `model` from `start` under zero-order hold on `commands`.
///
/// Returns one pose per command timestamp; the first is `start`.
pub fn rollout(
    model: &KinematicModel,
    start: &Pose2D,
    commands: &[WheelCommand],
) -> Result<Vec<Pose2D>> {
    check_commands(commands)?;
    let mut poses = Vec::with_capacity(commands.len());
    let mut pose = *start;
    poses.push(pose);
    for pair in commands.windows(2) {
        let twist = model.predict_twist(&pair[0])?;
        pose = integrate(&pose, &twist, pair[1].t - pair[0].t)?;
        poses.push(pose);
    }
    Ok(poses)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutEnd {
    pub pose: Pose2D,
    /// Number of predictions whose internal ICR offset was clamped.
    pub clamps: u64,
}

/// Same as [`rollout`] but only keeps the final pose.
pub fn rollout_final(
    model: &KinematicModel,
    start: &Pose2D,
    commands: &[WheelCommand],
) -> Result<RolloutEnd> {
    check_commands(commands)?;
    let mut pose = *start;
    let mut clamps = 0;
    for pair in commands.windows(2) {
        let prediction = model.predict(&pair[0])?;
        clamps += u64::from(prediction.clamped);
        pose = integrate(&pose, &prediction.twist, pair[1].t - pair[0].t)?;
    }
    Ok(RolloutEnd { pose, clamps })
}
