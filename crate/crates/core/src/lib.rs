//! Kinematic odometry models for skid-steer mobile robots.
//!
//! The crate predicts body twists from wheel commands with five models
//! (ideal differential drive, symmetric and asymmetric extended differential
//! drive, radius-of-curvature based, and full linear), dead-reckons them on
//! SE(2), fits their parameters to ground-truth trajectories, and reports
//! per-meter translational and angular errors.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod kv;
pub mod models;
pub mod optimizer;
pub mod segmentation;

mod fsutil;

pub use error::{Error, Result};
pub use geometry::{Pose2D, Twist2D};
pub use models::{ChassisGeometry, KinematicModel, ModelVariant, WheelCommand};
