//! Parameter identification: minimize the summed squared Mahalanobis
//! distance between ground-truth and dead-reckoned segment end poses.

use log::{debug, info};
use nalgebra::Matrix3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, rollout_final};
use crate::models::{Bound, ChassisGeometry, KinematicModel, ModelDocument, ModelVariant};
use crate::optimizer::{self, NelderMeadConfig};
use crate::segmentation::Segment;

/// Weighting of the pose residual `(dx, dy, dtheta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    sigma: Matrix3<f64>,
    sigma_inv: Matrix3<f64>,
}

impl LossConfig {
    pub fn new(sigma: Matrix3<f64>) -> Result<Self> {
        if sigma.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("covariance has non-finite entries"));
        }
        if (sigma - sigma.transpose()).abs().max() > 1e-12 * sigma.abs().max().max(1.0) {
            return Err(Error::invalid("covariance must be symmetric"));
        }
        let chol = sigma
            .cholesky()
            .ok_or_else(|| Error::invalid("covariance must be positive definite"))?;
        Ok(LossConfig {
            sigma,
            sigma_inv: chol.inverse(),
        })
    }

    pub fn identity() -> Self {
        LossConfig {
            sigma: Matrix3::identity(),
            sigma_inv: Matrix3::identity(),
        }
    }

    pub fn sigma(&self) -> &Matrix3<f64> {
        &self.sigma
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::identity()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub seed: u64,
    /// Space-filling starts in addition to the nominal one.
    pub restarts: usize,
    /// Objective evaluations per start.
    pub max_evals: usize,
    pub tolerance: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            seed: 0,
            restarts: 16,
            max_evals: 2000,
            tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub model: KinematicModel,
    pub final_loss: f64,
    /// Simplex iterations of the winning start.
    pub iterations: usize,
    /// Number of starts run, nominal included.
    pub restarts_used: usize,
    pub converged: bool,
    pub seed: u64,
    /// Loss of the nominal (ideal-DD equivalent) parameters.
    pub nominal_loss: f64,
    pub evaluations: usize,
    pub segments: usize,
    /// Clamped ROC predictions over the training set at the final parameters.
    pub clamps: u64,
}

impl CalibrationReport {
    pub fn metadata(&self) -> serde_json::Value {
        serde_json::json!({
            "final_loss": self.final_loss,
            "nominal_loss": self.nominal_loss,
            "iterations": self.iterations,
            "evaluations": self.evaluations,
            "restarts_used": self.restarts_used,
            "converged": self.converged,
            "seed": self.seed,
            "segments": self.segments,
            "clamps": self.clamps,
        })
    }

    pub fn to_document(&self, name: impl Into<String>) -> ModelDocument {
        ModelDocument {
            name: name.into(),
            model: self.model,
            metadata: Some(self.metadata()),
        }
    }
}

/// Final-pose residual of one segment, world frame, heading wrapped.
pub fn segment_residual(model: &KinematicModel, seg: &Segment) -> Result<([f64; 3], u64)> {
    let end = rollout_final(model, &seg.start_pose, &seg.commands)?;
    Ok((
        [
            seg.end_pose.x - end.pose.x,
            seg.end_pose.y - end.pose.y,
            normalize_angle(seg.end_pose.theta - end.pose.theta),
        ],
        end.clamps,
    ))
}

fn mahalanobis(e: &[f64; 3], w: &Matrix3<f64>) -> f64 {
    let mut acc = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            acc += e[i] * w[(i, j)] * e[j];
        }
    }
    acc
}

fn loss_serial(
    model: &KinematicModel,
    segments: &[Segment],
    cfg: &LossConfig,
) -> Result<(f64, u64)> {
    let mut total = 0.0;
    let mut clamps = 0;
    for seg in segments {
        let (e, c) = segment_residual(model, seg)?;
        total += mahalanobis(&e, &cfg.sigma_inv);
        clamps += c;
    }
    Ok((total, clamps))
}

/// Sum over segments of `e^T Sigma^-1 e`.
pub fn loss(model: &KinematicModel, segments: &[Segment], cfg: &LossConfig) -> Result<f64> {
    if segments.is_empty() {
        return Err(Error::invalid("loss needs at least one segment"));
    }
    let terms = segments
        .par_iter()
        .map(|seg| segment_residual(model, seg).map(|(e, _)| mahalanobis(&e, &cfg.sigma_inv)))
        .collect::<Result<Vec<f64>>>()?;
    // fixed summation order keeps the result independent of thread scheduling
    Ok(terms.iter().sum())
}

/// Finite region explored by the optimizer; always inside the model bounds.
///
/// Lengths are expressed relative to the vehicle width `b`, Jacobian
/// coefficients relative to the wheel radius `r`.
pub fn search_box(variant: ModelVariant, geometry: ChassisGeometry) -> Vec<Bound> {
    let ChassisGeometry { r, b } = geometry;
    match variant {
        ModelVariant::IdealDd => vec![],
        ModelVariant::ExtendedDdSymmetric => vec![Bound::UNIT, Bound::new(0.05 * b, 10.0 * b)],
        ModelVariant::ExtendedDdAsymmetric => vec![
            Bound::UNIT,
            Bound::UNIT,
            Bound::new(-10.0 * b, 10.0 * b),
            Bound::new(0.025 * b, 10.0 * b),
            Bound::new(-10.0 * b, -0.025 * b),
        ],
        ModelVariant::RocBased => vec![
            Bound::UNIT,
            Bound::new(-50.0, 50.0),
            Bound::new(-50.0, 50.0),
        ],
        ModelVariant::FullLinear => vec![
            Bound::new(-2.0 * r, 2.0 * r),
            Bound::new(-2.0 * r, 2.0 * r),
            Bound::new(-2.0 * r, 2.0 * r),
            Bound::new(-2.0 * r, 2.0 * r),
            Bound::new(-2.0 * r, 0.0),
            Bound::new(0.0, 2.0 * r),
        ],
    }
}

/// Latin hypercube sample of `count` points in `bounds`.
pub fn latin_hypercube(bounds: &[Bound], count: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; bounds.len()]; count];
    for (d, b) in bounds.iter().enumerate() {
        let mut strata: Vec<usize> = (0..count).collect();
        strata.shuffle(rng);
        for (p, s) in points.iter_mut().zip(strata) {
            let u = (s as f64 + rng.gen::<f64>()) / count as f64;
            p[d] = b.lower + u * (b.upper - b.lower);
        }
    }
    points
}

/// Fits `variant` to the training segments.
///
/// Runs a bounded simplex search from the nominal parameters and from
/// `opt.restarts` Latin-hypercube starts; the lowest loss wins, ties going
/// to the earlier start.
pub fn calibrate(
    variant: ModelVariant,
    geometry: ChassisGeometry,
    segments: &[Segment],
    cfg: &LossConfig,
    opt: &OptimizerConfig,
) -> Result<CalibrationReport> {
    if variant.arity() == 0 {
        return Err(Error::NothingToTrain(variant.name().into()));
    }
    if segments.is_empty() {
        return Err(Error::invalid(
            "no training segments (all removed as outliers?)",
        ));
    }
    let nominal = KinematicModel::nominal(variant, geometry);
    let bounds = search_box(variant, geometry);
    let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
    let mut starts = vec![nominal.param_vector()];
    starts.extend(latin_hypercube(&bounds, opt.restarts, &mut rng));

    let objective = |x: &[f64]| -> f64 {
        match nominal.with_params(x) {
            Ok(m) => loss_serial(&m, segments, cfg).map_or(f64::INFINITY, |(v, _)| v),
            Err(_) => f64::INFINITY,
        }
    };
    let nm = NelderMeadConfig {
        max_evals: opt.max_evals,
        tolerance: opt.tolerance,
        ..NelderMeadConfig::default()
    };
    let runs: Vec<optimizer::Minimum> = starts
        .par_iter()
        .map(|x0| optimizer::minimize(objective, x0, &bounds, &nm))
        .collect();

    let mut best = 0;
    for (i, run) in runs.iter().enumerate() {
        debug!(
            "start {i}: loss {:.6e} after {} evals",
            run.value, run.evaluations
        );
        if run.value < runs[best].value {
            best = i;
        }
    }
    let winner = &runs[best];
    let model = nominal.with_params(&winner.x)?;
    let (final_loss, clamps) = loss_serial(&model, segments, cfg)?;
    let nominal_loss = loss_serial(&nominal, segments, cfg)?.0;
    info!(
        "{variant}: loss {final_loss:.6e} (nominal {nominal_loss:.6e}) from start {best} of {}",
        runs.len()
    );
    Ok(CalibrationReport {
        model,
        final_loss,
        iterations: winner.iterations,
        restarts_used: runs.len(),
        converged: winner.converged,
        seed: opt.seed,
        nominal_loss,
        evaluations: runs.iter().map(|r| r.evaluations).sum(),
        segments: segments.len(),
        clamps,
    })
}
