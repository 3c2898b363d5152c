//! Per-meter prediction errors and the analyses built on them: horizon
//! sweeps, error distributions, rotation response curves and
//! error-versus-command grids.

use std::fmt::Write as _;

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{calibrate, CalibrationReport, LossConfig, OptimizerConfig};
use crate::dataset::SyncedTrajectory;
use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, rollout_final};
use crate::models::{ChassisGeometry, KinematicModel, ModelVariant};
use crate::segmentation::{segment, HorizonConfig, Segment};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSample {
    pub start_time: f64,
    /// Final translation error per meter travelled (m/m).
    pub eps_t: f64,
    /// Final heading error per meter travelled (rad/m).
    pub eps_theta: f64,
    pub path_length: f64,
    pub mean_omega_l: f64,
    pub mean_omega_r: f64,
    /// Mean `omega_r - omega_l` (rad/s).
    pub wheel_speed_difference: f64,
    /// Ideal differential-drive rotation per meter for the mean command;
    /// NaN when the mean command has no forward speed.
    pub commanded_rotation_per_meter: f64,
    /// Ground-truth heading change per meter.
    pub measured_rotation_per_meter: f64,
}

/// Rotation per meter the ideal differential drive would produce for a
/// constant command.
pub fn commanded_rotation_per_meter(geometry: ChassisGeometry, omega_l: f64, omega_r: f64) -> f64 {
    let v = geometry.r * (omega_l + omega_r) / 2.0;
    let w = geometry.r * (omega_r - omega_l) / geometry.b;
    if v.abs() < 1e-12 {
        f64::NAN
    } else {
        w / v.abs()
    }
}

/// Rolls `model` over each segment and measures its final-pose error.
///
/// Segments with zero path length are skipped. Output keeps segment order.
pub fn evaluate(model: &KinematicModel, segments: &[Segment]) -> Result<Vec<ErrorSample>> {
    if segments.is_empty() {
        return Err(Error::invalid("nothing to evaluate: no segments"));
    }
    let geometry = model.geometry();
    let samples = segments
        .par_iter()
        .filter(|s| s.path_length > 0.0)
        .map(|seg| {
            let end = rollout_final(model, &seg.start_pose, &seg.commands)?.pose;
            let l = seg.path_length;
            Ok(ErrorSample {
                start_time: seg.start_time,
                eps_t: seg.end_pose.distance(&end) / l,
                eps_theta: normalize_angle(seg.end_pose.theta - end.theta).abs() / l,
                path_length: l,
                mean_omega_l: seg.mean_omega_l,
                mean_omega_r: seg.mean_omega_r,
                wheel_speed_difference: seg.mean_omega_r - seg.mean_omega_l,
                commanded_rotation_per_meter: commanded_rotation_per_meter(
                    geometry,
                    seg.mean_omega_l,
                    seg.mean_omega_r,
                ),
                measured_rotation_per_meter: seg.heading_change / l,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    debug!("evaluated {} of {} segments", samples.len(), segments.len());
    Ok(samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub count: usize,
}

impl DistributionSummary {
    pub fn iqr(&self) -> f64 {
        self.q75 - self.q25
    }
}

/// Quantile of sorted data with linear interpolation between order statistics.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(values: &[f64]) -> Result<DistributionSummary> {
    if values.is_empty() {
        return Err(Error::invalid("cannot summarize an empty sample"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("cannot summarize NaN values"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(DistributionSummary {
        median: quantile_sorted(&sorted, 0.5),
        q25: quantile_sorted(&sorted, 0.25),
        q75: quantile_sorted(&sorted, 0.75),
        count: sorted.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub eps_t: DistributionSummary,
    pub eps_theta: DistributionSummary,
}

pub fn summarize_samples(samples: &[ErrorSample]) -> Result<MetricSummary> {
    let t: Vec<f64> = samples.iter().map(|s| s.eps_t).collect();
    let th: Vec<f64> = samples.iter().map(|s| s.eps_theta).collect();
    Ok(MetricSummary {
        eps_t: summarize(&t)?,
        eps_theta: summarize(&th)?,
    })
}

/// Translational error statistics over training and evaluation horizons.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonSweep {
    pub variant: ModelVariant,
    pub training_horizons: Vec<f64>,
    pub evaluation_horizons: Vec<f64>,
    /// `cells[i][j]`: eps_t for training horizon `i`, evaluation horizon `j`;
    /// `None` when the evaluation trajectory is shorter than the horizon.
    pub cells: Vec<Vec<Option<DistributionSummary>>>,
    /// Fitted model per training horizon (`None` for the ideal drive).
    pub reports: Vec<Option<CalibrationReport>>,
}

impl HorizonSweep {
    pub fn medians(&self) -> Vec<Vec<f64>> {
        self.grid(|s| s.median)
    }

    pub fn iqrs(&self) -> Vec<Vec<f64>> {
        self.grid(|s| s.iqr())
    }

    fn grid(&self, f: impl Fn(&DistributionSummary) -> f64) -> Vec<Vec<f64>> {
        self.cells
            .iter()
            .map(|row| {
                row.iter()
                    .map(|c| c.as_ref().map_or(f64::NAN, &f))
                    .collect()
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("h_t,h_e,count,median,q25,q75,iqr\n");
        for (i, ht) in self.training_horizons.iter().enumerate() {
            for (j, he) in self.evaluation_horizons.iter().enumerate() {
                match &self.cells[i][j] {
                    Some(s) => {
                        let _ = writeln!(
                            out,
                            "{ht},{he},{},{},{},{},{}",
                            s.count,
                            s.median,
                            s.q25,
                            s.q75,
                            s.iqr()
                        );
                    }
                    None => {
                        let _ = writeln!(out, "{ht},{he},0,,,,");
                    }
                }
            }
        }
        out
    }
}

/// Calibrates once per training horizon and evaluates every fit at every
/// evaluation horizon.
///
/// `train_cfg` and `eval_cfg` provide everything but the horizon length.
#[allow(clippy::too_many_arguments)]
pub fn horizon_sweep(
    variant: ModelVariant,
    geometry: ChassisGeometry,
    train: &SyncedTrajectory,
    eval: &SyncedTrajectory,
    training_horizons: &[f64],
    evaluation_horizons: &[f64],
    train_cfg: &HorizonConfig,
    eval_cfg: &HorizonConfig,
    loss_cfg: &LossConfig,
    opt: &OptimizerConfig,
) -> Result<HorizonSweep> {
    if training_horizons.is_empty() || evaluation_horizons.is_empty() {
        return Err(Error::invalid("horizon lists must be non-empty"));
    }
    let eval_sets = evaluation_horizons
        .iter()
        .map(|&h| {
            segment(
                eval,
                &HorizonConfig {
                    horizon: h,
                    ..*eval_cfg
                },
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let mut cells = Vec::with_capacity(training_horizons.len());
    let mut reports = Vec::with_capacity(training_horizons.len());
    for &ht in training_horizons {
        let (model, report) = if variant.arity() == 0 {
            (KinematicModel::nominal(variant, geometry), None)
        } else {
            let segs = segment(
                train,
                &HorizonConfig {
                    horizon: ht,
                    ..*train_cfg
                },
            )?;
            let report = calibrate(variant, geometry, &segs, loss_cfg, opt)?;
            (report.model, Some(report))
        };
        let row = eval_sets
            .iter()
            .map(|segs| {
                if segs.is_empty() {
                    return Ok(None);
                }
                let samples = evaluate(&model, segs)?;
                let eps: Vec<f64> = samples.iter().map(|s| s.eps_t).collect();
                if eps.is_empty() {
                    Ok(None)
                } else {
                    summarize(&eps).map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        cells.push(row);
        reports.push(report);
    }
    Ok(HorizonSweep {
        variant,
        training_horizons: training_horizons.to_vec(),
        evaluation_horizons: evaluation_horizons.to_vec(),
        cells,
        reports,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationBin {
    pub lower: f64,
    pub upper: f64,
    /// Mean commanded rotation per meter of the samples in the bin.
    pub commanded_mean: f64,
    /// Mean `omega_r - omega_l` in rad/s, sign folded like the rotation.
    pub wheel_speed_difference_mean: f64,
    pub measured: DistributionSummary,
}

impl RotationBin {
    pub fn center(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

/// Measured versus commanded rotation per meter.
///
/// The commanded axis is the magnitude of the ideal-drive rotation per meter;
/// measured values are signed so that positive means "turned the commanded way".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationCurve {
    pub bin_width: f64,
    pub bins: Vec<RotationBin>,
}

/// Two-slope hinge through the origin fitted to a rotation curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KneeFit {
    pub knee: f64,
    pub slope: f64,
    pub slope_after: f64,
    pub residual: f64,
}

/// Bins segments by commanded rotation per meter (bins of `bin_width`,
/// starting at 0) and summarizes the measured rotation per meter.
///
/// Segments without forward motion and empty bins are left out.
pub fn rotation_response(
    segments: &[Segment],
    geometry: ChassisGeometry,
    bin_width: f64,
) -> Result<RotationCurve> {
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(Error::invalid(format!(
            "bin width must be > 0, got {bin_width}"
        )));
    }
    let mut points: Vec<(usize, f64, f64, f64)> = Vec::new();
    for seg in segments.iter().filter(|s| s.path_length > 0.0) {
        let k = commanded_rotation_per_meter(geometry, seg.mean_omega_l, seg.mean_omega_r);
        if !k.is_finite() {
            continue;
        }
        let sign = if k < 0.0 { -1.0 } else { 1.0 };
        let bin = (k.abs() / bin_width).floor() as usize;
        points.push((
            bin,
            k.abs(),
            sign * seg.heading_change / seg.path_length,
            sign * (seg.mean_omega_r - seg.mean_omega_l),
        ));
    }
    points.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut bins = Vec::new();
    for chunk in points.chunk_by(|a, b| a.0 == b.0) {
        let idx = chunk[0].0 as f64;
        let n = chunk.len() as f64;
        let measured: Vec<f64> = chunk.iter().map(|p| p.2).collect();
        bins.push(RotationBin {
            lower: idx * bin_width,
            upper: (idx + 1.0) * bin_width,
            commanded_mean: chunk.iter().map(|p| p.1).sum::<f64>() / n,
            wheel_speed_difference_mean: chunk.iter().map(|p| p.3).sum::<f64>() / n,
            measured: summarize(&measured)?,
        });
    }
    Ok(RotationCurve { bin_width, bins })
}

impl RotationCurve {
    /// Fits `y = a min(x, k) + c max(x - k, 0)` to bin medians, weighting by
    /// bin counts. The knee `k` is searched on a grid 20 times finer than the
    /// bins; `a` and `c` are solved in closed form for each candidate.
    pub fn fit_knee(&self) -> Option<KneeFit> {
        if self.bins.len() < 3 {
            return None;
        }
        let pts: Vec<(f64, f64, f64)> = self
            .bins
            .iter()
            .map(|b| (b.commanded_mean, b.measured.median, b.measured.count as f64))
            .collect();
        let x_max = pts.iter().map(|p| p.0).fold(0.0, f64::max);
        let step = self.bin_width / 20.0;
        let mut best: Option<KneeFit> = None;
        let mut k = step;
        while k < x_max {
            // normal equations for (a, c)
            let (mut suu, mut suv, mut svv, mut suy, mut svy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for &(x, y, w) in &pts {
                let u = x.min(k);
                let v = (x - k).max(0.0);
                suu += w * u * u;
                suv += w * u * v;
                svv += w * v * v;
                suy += w * u * y;
                svy += w * v * y;
            }
            let det = suu * svv - suv * suv;
            if det.abs() > 1e-12 * (suu * svv).max(1e-300) {
                let a = (suy * svv - svy * suv) / det;
                let c = (svy * suu - suy * suv) / det;
                let residual: f64 = pts
                    .iter()
                    .map(|&(x, y, w)| w * (y - a * x.min(k) - c * (x - k).max(0.0)).powi(2))
                    .sum();
                if best.is_none_or(|b| residual < b.residual) {
                    best = Some(KneeFit {
                        knee: k,
                        slope: a,
                        slope_after: c,
                        residual,
                    });
                }
            }
            k += step;
        }
        best
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "bin_lower,bin_upper,commanded_rad_per_m,wheel_speed_difference,count,median,q25,q75\n",
        );
        for b in &self.bins {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                b.lower,
                b.upper,
                b.commanded_mean,
                b.wheel_speed_difference_mean,
                b.measured.count,
                b.measured.median,
                b.measured.q25,
                b.measured.q75
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub count: usize,
    /// Median eps_theta, `None` for empty cells.
    pub median: Option<f64>,
}

/// Median angular error over a regular grid of mean wheel commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandGrid {
    pub resolution: usize,
    pub omega_l_range: (f64, f64),
    pub omega_r_range: (f64, f64),
    /// Row-major, `cells[i * resolution + j]` for omega_l bin `i`, omega_r bin `j`.
    pub cells: Vec<GridCell>,
}

pub const DEFAULT_GRID_RESOLUTION: usize = 20;

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if hi - lo < 1e-9 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn bin_of(v: f64, (lo, hi): (f64, f64), n: usize) -> usize {
    (((v - lo) / (hi - lo) * n as f64).floor().max(0.0) as usize).min(n - 1)
}

/// Grids samples over the observed box of (mean omega_l, mean omega_r).
pub fn error_command_grid(samples: &[ErrorSample], resolution: usize) -> Result<CommandGrid> {
    if samples.is_empty() {
        return Err(Error::invalid("no samples to grid"));
    }
    if resolution == 0 {
        return Err(Error::invalid("grid resolution must be >= 1"));
    }
    let lr = padded_range(samples.iter().map(|s| s.mean_omega_l));
    let rr = padded_range(samples.iter().map(|s| s.mean_omega_r));
    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); resolution * resolution];
    for s in samples {
        let i = bin_of(s.mean_omega_l, lr, resolution);
        let j = bin_of(s.mean_omega_r, rr, resolution);
        buckets[i * resolution + j].push(s.eps_theta);
    }
    let cells = buckets
        .iter()
        .map(|b| GridCell {
            count: b.len(),
            median: summarize(b).ok().map(|s| s.median),
        })
        .collect();
    Ok(CommandGrid {
        resolution,
        omega_l_range: lr,
        omega_r_range: rr,
        cells,
    })
}

impl CommandGrid {
    pub fn cell(&self, i: usize, j: usize) -> &GridCell {
        &self.cells[i * self.resolution + j]
    }

    /// Center of bin `(i, j)` as (omega_l, omega_r).
    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        let n = self.resolution as f64;
        let (l0, l1) = self.omega_l_range;
        let (r0, r1) = self.omega_r_range;
        (
            l0 + (i as f64 + 0.5) * (l1 - l0) / n,
            r0 + (j as f64 + 0.5) * (r1 - r0) / n,
        )
    }

    /// Cell with the largest median among cells holding at least `min_count` samples.
    pub fn argmax(&self, min_count: usize) -> Option<(usize, usize)> {
        let mut best: Option<(usize, f64)> = None;
        for (k, c) in self.cells.iter().enumerate() {
            if let (Some(m), true) = (c.median, c.count >= min_count.max(1)) {
                if best.is_none_or(|(_, b)| m > b) {
                    best = Some((k, m));
                }
            }
        }
        best.map(|(k, _)| (k / self.resolution, k % self.resolution))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,j,omega_l_center,omega_r_center,count,median_eps_theta\n");
        for i in 0..self.resolution {
            for j in 0..self.resolution {
                let (l, r) = self.center(i, j);
                let c = self.cell(i, j);
                let m = c.median.map(|m| m.to_string()).unwrap_or_default();
                let _ = writeln!(out, "{i},{j},{l},{r},{},{m}", c.count);
            }
        }
        out
    }
}

pub fn samples_csv(rows: &[(&str, &[ErrorSample])]) -> String {
    let mut out = String::from(
        "model,start_time,path_length,eps_t,eps_theta,mean_omega_l,mean_omega_r,\
         wheel_speed_difference,commanded_rad_per_m,measured_rad_per_m\n",
    );
    for (name, samples) in rows {
        for s in *samples {
            let _ = writeln!(
                out,
                "{name},{},{},{},{},{},{},{},{},{}",
                s.start_time,
                s.path_length,
                s.eps_t,
                s.eps_theta,
                s.mean_omega_l,
                s.mean_omega_r,
                s.wheel_speed_difference,
                s.commanded_rotation_per_meter,
                s.measured_rotation_per_meter
            );
        }
    }
    out
}
