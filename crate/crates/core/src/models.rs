//! The five skid-steer kinematic models.
//!
//! Every model maps a wheel command `y = [omega_l, omega_r]` to a body twist
//! through a 3x2 Jacobian `J(k)`. The Jacobian is constant for all variants
//! except [`KinematicModel::RocBased`], whose ICR offset depends on the
//! instantaneous curvature of the command.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{Matrix2, Matrix3x2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Twist2D;
use crate::kv::KvDocument;

/// Timestamped wheel angular velocities.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WheelCommand {
    pub t: f64,
    pub omega_l: f64,
    pub omega_r: f64,
}

impl WheelCommand {
    pub fn new(t: f64, omega_l: f64, omega_r: f64) -> Self {
        WheelCommand {
            t,
            omega_l,
            omega_r,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.omega_l.is_finite() && self.omega_r.is_finite()
    }

    fn as_vector(&self) -> Vector2<f64> {
        Vector2::new(self.omega_l, self.omega_r)
    }
}

/// Wheel radius `r` and vehicle width `b`, both in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChassisGeometry {
    pub r: f64,
    pub b: f64,
}

impl ChassisGeometry {
    pub fn new(r: f64, b: f64) -> Result<Self> {
        for (name, value) in [("r", r), ("b", b)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParameter {
                    name: name.into(),
                    value,
                    reason: "must be finite and > 0".into(),
                });
            }
        }
        Ok(ChassisGeometry { r, b })
    }
}

impl Default for ChassisGeometry {
    fn default() -> Self {
        ChassisGeometry { r: 0.3, b: 1.2 }
    }
}

/// Closed interval, endpoints may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bound {
    pub lower: f64,
    pub upper: f64,
}

impl Bound {
    pub const REAL: Bound = Bound::new(f64::NEG_INFINITY, f64::INFINITY);
    pub const UNIT: Bound = Bound::new(0.0, 1.0);
    pub const NON_NEGATIVE: Bound = Bound::new(0.0, f64::INFINITY);
    pub const NON_POSITIVE: Bound = Bound::new(f64::NEG_INFINITY, 0.0);

    pub const fn new(lower: f64, upper: f64) -> Self {
        Bound { lower, upper }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.max(self.lower).min(self.upper)
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.lower, self.upper)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelVariant {
    IdealDd,
    ExtendedDdSymmetric,
    ExtendedDdAsymmetric,
    RocBased,
    FullLinear,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 5] = [
        ModelVariant::IdealDd,
        ModelVariant::ExtendedDdSymmetric,
        ModelVariant::ExtendedDdAsymmetric,
        ModelVariant::RocBased,
        ModelVariant::FullLinear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::IdealDd => "ideal-dd",
            ModelVariant::ExtendedDdSymmetric => "ext-dd-sym",
            ModelVariant::ExtendedDdAsymmetric => "ext-dd-asym",
            ModelVariant::RocBased => "roc",
            ModelVariant::FullLinear => "full-linear",
        }
    }

    /// Parameter names in vector order.
    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            ModelVariant::IdealDd => &[],
            ModelVariant::ExtendedDdSymmetric => &["alpha", "b_hat"],
            ModelVariant::ExtendedDdAsymmetric => &["alpha_l", "alpha_r", "x_v", "y_l", "y_r"],
            ModelVariant::RocBased => &["alpha", "beta1", "beta2"],
            ModelVariant::FullLinear => &[
                "gamma11", "gamma12", "gamma21", "gamma22", "gamma31", "gamma32",
            ],
        }
    }

    pub fn arity(self) -> usize {
        self.param_names().len()
    }

    /// Admissible parameter ranges, in vector order.
    pub fn bounds(self) -> Vec<Bound> {
        match self {
            ModelVariant::IdealDd => vec![],
            ModelVariant::ExtendedDdSymmetric => vec![Bound::UNIT, Bound::NON_NEGATIVE],
            ModelVariant::ExtendedDdAsymmetric => vec![
                Bound::UNIT,
                Bound::UNIT,
                Bound::REAL,
                Bound::NON_NEGATIVE,
                Bound::NON_POSITIVE,
            ],
            ModelVariant::RocBased => vec![Bound::UNIT, Bound::REAL, Bound::REAL],
            ModelVariant::FullLinear => vec![
                Bound::REAL,
                Bound::REAL,
                Bound::REAL,
                Bound::REAL,
                Bound::NON_POSITIVE,
                Bound::NON_NEGATIVE,
            ],
        }
    }

    pub fn is_linear(self) -> bool {
        self != ModelVariant::RocBased
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = ModelVariant::ALL.iter().map(|v| v.name()).collect();
                Error::invalid(format!(
                    "unknown model `{s}`, expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

/// Bounds on the ICR offset computed by the ROC-based model, as multiples of `b`.
pub const ROC_Y0_MIN_FACTOR: f64 = 0.5;
pub const ROC_Y0_MAX_FACTOR: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KinematicModel {
    IdealDd {
        geometry: ChassisGeometry,
    },
    ExtendedDdSymmetric {
        geometry: ChassisGeometry,
        alpha: f64,
        b_hat: f64,
    },
    ExtendedDdAsymmetric {
        geometry: ChassisGeometry,
        alpha_l: f64,
        alpha_r: f64,
        x_v: f64,
        y_l: f64,
        y_r: f64,
    },
    RocBased {
        geometry: ChassisGeometry,
        alpha: f64,
        beta1: f64,
        beta2: f64,
    },
    /// Row-major `[g11, g12, g21, g22, g31, g32]`.
    FullLinear {
        geometry: ChassisGeometry,
        gamma: [f64; 6],
    },
}

/// A twist plus whether the ROC-based ICR offset had to be clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub twist: Twist2D,
    pub clamped: bool,
}

/// Shared tally of clamped ROC predictions.
#[derive(Debug, Default)]
pub struct ClampCounter(AtomicU64);

impl ClampCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&self, n: u64) {
        if n > 0 {
            self.0.fetch_add(n, Ordering::Relaxed);
        }
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

impl KinematicModel {
    pub fn ideal(geometry: ChassisGeometry) -> Self {
        KinematicModel::IdealDd { geometry }
    }

    /// Physically sensible defaults: no slip and ICRs on the wheel tracks,
    /// i.e. every variant reproduces the ideal differential drive.
    pub fn nominal(variant: ModelVariant, geometry: ChassisGeometry) -> Self {
        let ChassisGeometry { r, b } = geometry;
        match variant {
            ModelVariant::IdealDd => KinematicModel::IdealDd { geometry },
            ModelVariant::ExtendedDdSymmetric => KinematicModel::ExtendedDdSymmetric {
                geometry,
                alpha: 1.0,
                b_hat: b,
            },
            ModelVariant::ExtendedDdAsymmetric => KinematicModel::ExtendedDdAsymmetric {
                geometry,
                alpha_l: 1.0,
                alpha_r: 1.0,
                x_v: 0.0,
                y_l: b / 2.0,
                y_r: -b / 2.0,
            },
            ModelVariant::RocBased => KinematicModel::RocBased {
                geometry,
                alpha: 1.0,
                beta1: 0.0,
                beta2: 0.0,
            },
            ModelVariant::FullLinear => KinematicModel::FullLinear {
                geometry,
                gamma: [r / 2.0, r / 2.0, 0.0, 0.0, -r / b, r / b],
            },
        }
    }

    /// Builds a model of `variant` from a parameter vector.
    pub fn from_params(
        variant: ModelVariant,
        geometry: ChassisGeometry,
        params: &[f64],
    ) -> Result<Self> {
        KinematicModel::nominal(variant, geometry).with_params(params)
    }

    pub fn variant(&self) -> ModelVariant {
        match self {
            KinematicModel::IdealDd { .. } => ModelVariant::IdealDd,
            KinematicModel::ExtendedDdSymmetric { .. } => ModelVariant::ExtendedDdSymmetric,
            KinematicModel::ExtendedDdAsymmetric { .. } => ModelVariant::ExtendedDdAsymmetric,
            KinematicModel::RocBased { .. } => ModelVariant::RocBased,
            KinematicModel::FullLinear { .. } => ModelVariant::FullLinear,
        }
    }

    pub fn geometry(&self) -> ChassisGeometry {
        match *self {
            KinematicModel::IdealDd { geometry }
            | KinematicModel::ExtendedDdSymmetric { geometry, .. }
            | KinematicModel::ExtendedDdAsymmetric { geometry, .. }
            | KinematicModel::RocBased { geometry, .. }
            | KinematicModel::FullLinear { geometry, .. } => geometry,
        }
    }

    /// Parameters in the order given by [`ModelVariant::param_names`].
    pub fn param_vector(&self) -> Vec<f64> {
        match *self {
            KinematicModel::IdealDd { .. } => vec![],
            KinematicModel::ExtendedDdSymmetric { alpha, b_hat, .. } => vec![alpha, b_hat],
            KinematicModel::ExtendedDdAsymmetric {
                alpha_l,
                alpha_r,
                x_v,
                y_l,
                y_r,
                ..
            } => vec![alpha_l, alpha_r, x_v, y_l, y_r],
            KinematicModel::RocBased {
                alpha,
                beta1,
                beta2,
                ..
            } => vec![alpha, beta1, beta2],
            KinematicModel::FullLinear { gamma, .. } => gamma.to_vec(),
        }
    }

    /// Copy of this model with its parameters replaced.
    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        let variant = self.variant();
        let names = variant.param_names();
        if params.len() != names.len() {
            return Err(Error::InvalidParameter {
                name: format!("{variant} parameter vector"),
                value: params.len() as f64,
                reason: format!("expected {} entries", names.len()),
            });
        }
        for ((name, bound), &value) in names.iter().zip(variant.bounds()).zip(params) {
            if !value.is_finite() || !bound.contains(value) {
                return Err(Error::InvalidParameter {
                    name: (*name).to_string(),
                    value,
                    reason: format!("outside [{}, {}]", bound.lower, bound.upper),
                });
            }
        }
        let geometry = self.geometry();
        let p = params;
        Ok(match variant {
            ModelVariant::IdealDd => *self,
            ModelVariant::ExtendedDdSymmetric => KinematicModel::ExtendedDdSymmetric {
                geometry,
                alpha: p[0],
                b_hat: p[1],
            },
            ModelVariant::ExtendedDdAsymmetric => KinematicModel::ExtendedDdAsymmetric {
                geometry,
                alpha_l: p[0],
                alpha_r: p[1],
                x_v: p[2],
                y_l: p[3],
                y_r: p[4],
            },
            ModelVariant::RocBased => KinematicModel::RocBased {
                geometry,
                alpha: p[0],
                beta1: p[1],
                beta2: p[2],
            },
            ModelVariant::FullLinear => KinematicModel::FullLinear {
                geometry,
                gamma: [p[0], p[1], p[2], p[3], p[4], p[5]],
            },
        })
    }

    pub fn predict_twist(&self, cmd: &WheelCommand) -> Result<Twist2D> {
        self.predict(cmd).map(|p| p.twist)
    }

    /// Like [`predict_twist`](Self::predict_twist), bumping `counter` on clamps.
    pub fn predict_counted(&self, cmd: &WheelCommand, counter: &ClampCounter) -> Result<Twist2D> {
        let p = self.predict(cmd)?;
        counter.add(u64::from(p.clamped));
        Ok(p.twist)
    }

    pub fn predict(&self, cmd: &WheelCommand) -> Result<Prediction> {
        if !(cmd.omega_l.is_finite() && cmd.omega_r.is_finite()) {
            return Err(Error::invalid(format!("non-finite wheel command {cmd:?}")));
        }
        let (wl, wr) = (cmd.omega_l, cmd.omega_r);
        let mut clamped = false;
        let twist = match *self {
            KinematicModel::IdealDd { geometry: g } => {
                Twist2D::new(g.r * (wl + wr) / 2.0, 0.0, g.r * (wr - wl) / g.b)
            }
            KinematicModel::ExtendedDdSymmetric {
                geometry: g,
                alpha,
                b_hat,
            } => {
                if b_hat == 0.0 {
                    return Err(singular("b_hat", b_hat));
                }
                let ra = g.r * alpha;
                Twist2D::new(ra * (wl + wr) / 2.0, 0.0, ra * (wr - wl) / b_hat)
            }
            KinematicModel::ExtendedDdAsymmetric {
                geometry: g,
                alpha_l,
                alpha_r,
                x_v,
                y_l,
                y_r,
            } => {
                let spread = y_l - y_r;
                if spread == 0.0 {
                    return Err(singular("y_l - y_r", spread));
                }
                let k = g.r / spread;
                let sl = alpha_l * wl;
                let sr = alpha_r * wr;
                Twist2D::new(
                    k * (y_l * sr - y_r * sl),
                    k * x_v * (sl - sr),
                    k * (sr - sl),
                )
            }
            KinematicModel::RocBased {
                geometry: g,
                alpha,
                beta1,
                beta2,
            } => {
                let ra = g.r * alpha;
                if wl == wr {
                    Twist2D::new(ra * wl, 0.0, 0.0)
                } else {
                    let (y0, c) = roc_icr_offset(g.b, beta1, beta2, roc_lambda(wl, wr));
                    clamped = c;
                    Twist2D::new(ra * (wl + wr) / 2.0, 0.0, ra * (wr - wl) / (2.0 * y0))
                }
            }
            KinematicModel::FullLinear { gamma: g, .. } => Twist2D::new(
                g[0] * wl + g[1] * wr,
                g[2] * wl + g[3] * wr,
                g[4] * wl + g[5] * wr,
            ),
        };
        Ok(Prediction { twist, clamped })
    }

    /// Constant Jacobian of the linear variants; `None` for the ROC-based model.
    pub fn jacobian(&self) -> Option<Matrix3x2<f64>> {
        match *self {
            KinematicModel::IdealDd { geometry: g } => {
                Some(Matrix3x2::new(0.5, 0.5, 0.0, 0.0, -1.0 / g.b, 1.0 / g.b) * g.r)
            }
            KinematicModel::ExtendedDdSymmetric {
                geometry: g,
                alpha,
                b_hat,
            } => {
                Some(Matrix3x2::new(0.5, 0.5, 0.0, 0.0, -1.0 / b_hat, 1.0 / b_hat) * (g.r * alpha))
            }
            KinematicModel::ExtendedDdAsymmetric {
                geometry: g,
                alpha_l,
                alpha_r,
                x_v,
                y_l,
                y_r,
            } => {
                let icr = Matrix3x2::new(-y_r, y_l, x_v, -x_v, -1.0, 1.0);
                let slip = Matrix2::from_diagonal(&Vector2::new(alpha_l, alpha_r));
                Some(icr * slip * (g.r / (y_l - y_r)))
            }
            KinematicModel::RocBased { .. } => None,
            KinematicModel::FullLinear { gamma: g, .. } => {
                Some(Matrix3x2::new(g[0], g[1], g[2], g[3], g[4], g[5]))
            }
        }
    }

    /// Full linear model with the same Jacobian, for every linear variant.
    pub fn to_full_linear(&self) -> Option<Result<KinematicModel>> {
        let j = self.jacobian()?;
        let gamma = [
            j[(0, 0)],
            j[(0, 1)],
            j[(1, 0)],
            j[(1, 1)],
            j[(2, 0)],
            j[(2, 1)],
        ];
        Some(KinematicModel::from_params(
            ModelVariant::FullLinear,
            self.geometry(),
            &gamma,
        ))
    }

    /// Applies the Jacobian as a matrix product (linear variants only).
    pub fn apply_jacobian(&self, cmd: &WheelCommand) -> Option<Twist2D> {
        let v = self.jacobian()? * cmd.as_vector();
        Some(Twist2D::new(v[0], v[1], v[2]))
    }
}

fn singular(name: &str, value: f64) -> Error {
    Error::InvalidParameter {
        name: name.into(),
        value,
        reason: "makes the Jacobian singular".into(),
    }
}

/// Normalized path curvature variable `|(wr + wl) / (wr - wl)|`.
pub fn roc_lambda(omega_l: f64, omega_r: f64) -> f64 {
    ((omega_r + omega_l) / (omega_r - omega_l)).abs()
}

/// ICR offset `y0` of the ROC-based model, clamped to `[b/2, 100 b]`.
///
/// Returns the offset and whether clamping was applied.
pub fn roc_icr_offset(b: f64, beta1: f64, beta2: f64, lambda: f64) -> (f64, bool) {
    let denom = 1.0 + beta2 * lambda.sqrt();
    let ratio = if beta1 == 0.0 { 0.0 } else { beta1 / denom };
    let y0 = b / 2.0 * (1.0 + ratio);
    let lo = ROC_Y0_MIN_FACTOR * b;
    let hi = ROC_Y0_MAX_FACTOR * b;
    if y0.is_nan() || y0 < lo {
        (lo, true)
    } else if y0 > hi {
        (hi, true)
    } else {
        (y0, false)
    }
}

/// Instantaneous centers of rotation of the body and of each wheel set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcrEstimate {
    pub c_v: (f64, f64),
    pub c_l: (f64, f64),
    pub c_r: (f64, f64),
}

/// Locates the body and track ICRs from an observed twist.
pub fn icr_positions(
    twist: &Twist2D,
    cmd: &WheelCommand,
    alpha_l: f64,
    alpha_r: f64,
    r: f64,
) -> Result<IcrEstimate> {
    if !(twist.omega.abs() > 1e-9) {
        return Err(Error::DegenerateMotion(format!(
            "angular rate {} too small, ICR is at infinity",
            twist.omega
        )));
    }
    let w = twist.omega;
    let x_v = -twist.vy / w;
    Ok(IcrEstimate {
        c_v: (x_v, twist.vx / w),
        c_l: (x_v, alpha_l * (r * cmd.omega_l - twist.vx) / w),
        c_r: (x_v, alpha_r * (r * cmd.omega_r - twist.vx) / w),
    })
}

/// A model together with a label and optional free-form metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDocument {
    pub name: String,
    pub model: KinematicModel,
    pub metadata: Option<serde_json::Value>,
}

impl ModelDocument {
    pub fn new(name: impl Into<String>, model: KinematicModel) -> Self {
        ModelDocument {
            name: name.into(),
            model,
            metadata: None,
        }
    }

    pub fn to_kv(&self) -> KvDocument {
        let variant = self.model.variant();
        let g = self.model.geometry();
        let mut doc = KvDocument::new();
        doc.push("name", &self.name);
        doc.push("variant", variant);
        doc.push("geometry.r", g.r);
        doc.push("geometry.b", g.b);
        for (name, value) in variant.param_names().iter().zip(self.model.param_vector()) {
            doc.push(format!("param.{name}"), value);
        }
        for (name, bound) in variant.param_names().iter().zip(variant.bounds()) {
            doc.push(format!("bounds.{name}"), bound);
        }
        if let Some(meta) = &self.metadata {
            doc.push("metadata", meta);
        }
        doc
    }

    pub fn from_kv(doc: &KvDocument) -> std::result::Result<Self, String> {
        let variant: ModelVariant = doc
            .require("variant")?
            .parse()
            .map_err(|e: Error| e.to_string())?;
        let geometry = ChassisGeometry::new(
            doc.require_value("geometry.r")?,
            doc.require_value("geometry.b")?,
        )
        .map_err(|e| e.to_string())?;
        let mut params = Vec::with_capacity(variant.arity());
        for (name, bound) in variant.param_names().iter().zip(variant.bounds()) {
            params.push(doc.require_value::<f64>(&format!("param.{name}"))?);
            if let Some(text) = doc.get(&format!("bounds.{name}")) {
                if text != bound.to_string() {
                    return Err(format!(
                        "bounds.{name} = `{text}` does not match the {variant} bounds `{bound}`"
                    ));
                }
            }
        }
        let model =
            KinematicModel::from_params(variant, geometry, &params).map_err(|e| e.to_string())?;
        let metadata = match doc.get("metadata") {
            Some(text) => {
                Some(serde_json::from_str(text).map_err(|e| format!("metadata is not JSON: {e}"))?)
            }
            None => None,
        };
        Ok(ModelDocument {
            name: doc.get("name").unwrap_or(variant.name()).to_string(),
            model,
            metadata,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let kv = KvDocument::parse(&text).map_err(|e| Error::Parse {
            path: path.into(),
            line: e.line,
            message: e.message,
        })?;
        ModelDocument::from_kv(&kv).map_err(|message| Error::Parse {
            path: path.into(),
            line: 0,
            message,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn geom() -> ChassisGeometry {
        ChassisGeometry::new(0.3, 1.2).unwrap()
    }

    fn cmd(wl: f64, wr: f64) -> WheelCommand {
        WheelCommand::new(0.0, wl, wr)
    }

    fn assert_twist(t: Twist2D, vx: f64, vy: f64, w: f64, eps: f64) {
        assert_abs_diff_eq!(t.vx, vx, epsilon = eps);
        assert_abs_diff_eq!(t.vy, vy, epsilon = eps);
        assert_abs_diff_eq!(t.omega, w, epsilon = eps);
    }

    #[test]
    fn ideal_dd_examples() {
        let m = KinematicModel::ideal(geom());
        assert_twist(
            m.predict_twist(&cmd(2.0, 2.0)).unwrap(),
            0.6,
            0.0,
            0.0,
            1e-12,
        );
        assert_twist(
            m.predict_twist(&cmd(-1.0, 1.0)).unwrap(),
            0.0,
            0.0,
            0.5,
            1e-12,
        );
    }

    #[test]
    fn roc_example_and_lambda() {
        let m = KinematicModel::from_params(ModelVariant::RocBased, geom(), &[0.80, 1.36, -0.18])
            .unwrap();
        assert_eq!(roc_lambda(1.0, 3.0), 2.0);
        let (y0, clamped) = roc_icr_offset(1.2, 1.36, -0.18, 2.0);
        assert!(!clamped);
        assert_abs_diff_eq!(y0, 1.694_653_216_468_52, epsilon = 1e-12);
        let p = m.predict(&cmd(1.0, 3.0)).unwrap();
        assert!(!p.clamped);
        assert_twist(p.twist, 0.48, 0.0, 0.141621895068381, 1e-12);
    }

    #[test]
    fn roc_straight_line_bypasses_offset() {
        let m = KinematicModel::from_params(ModelVariant::RocBased, geom(), &[0.8, 1.36, -0.18])
            .unwrap();
        let p = m.predict(&cmd(2.0, 2.0)).unwrap();
        assert!(!p.clamped);
        assert_twist(p.twist, 0.3 * 0.8 * 2.0, 0.0, 0.0, 1e-15);
    }

    #[test]
    fn roc_clamps_near_singular_denominator() {
        // 1 - 0.18 sqrt(lambda) vanishes near lambda = 30.86
        let (y0, c) = roc_icr_offset(1.2, 1.36, -0.18, 30.8);
        assert!(c);
        assert_eq!(y0, 120.0);
        let (y0, c) = roc_icr_offset(1.2, 1.36, -0.18, 40.0);
        assert!(c);
        assert_eq!(y0, 0.6);
        let counter = ClampCounter::new();
        let m = KinematicModel::from_params(ModelVariant::RocBased, geom(), &[0.8, 1.36, -0.18])
            .unwrap();
        // (39 + 41) / (41 - 39) = 40, past the singularity
        let t = m.predict_counted(&cmd(39.0, 41.0), &counter).unwrap();
        assert_eq!(counter.get(), 1);
        assert!(t.omega > 0.0 && t.omega.is_finite());
        m.predict_counted(&cmd(1.0, 3.0), &counter).unwrap();
        assert_eq!(counter.get(), 1);
    }

    #[test]
    fn icr_examples() {
        let icr = icr_positions(
            &Twist2D::new(1.0, 0.0, 0.5),
            &cmd(1.0 / 0.3, 0.0),
            1.0,
            1.0,
            0.3,
        )
        .unwrap();
        assert_abs_diff_eq!(icr.c_v.0, 0.0);
        assert_abs_diff_eq!(icr.c_v.1, 2.0);
        assert_abs_diff_eq!(icr.c_l.1, 0.0, epsilon = 1e-12);

        let icr =
            icr_positions(&Twist2D::new(0.0, 0.0, 1.0), &cmd(-2.0, 2.0), 1.0, 1.0, 0.3).unwrap();
        assert_abs_diff_eq!(icr.c_v.1, 0.0);
        assert_abs_diff_eq!(icr.c_l.1, -0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(icr.c_r.1, 0.6, epsilon = 1e-12);
        assert_eq!(icr.c_l.0, icr.c_v.0);
        assert_eq!(icr.c_r.0, icr.c_v.0);

        assert!(matches!(
            icr_positions(
                &Twist2D::new(1.0, 0.0, 1e-12),
                &cmd(1.0, 1.0),
                1.0,
                1.0,
                0.3
            ),
            Err(Error::DegenerateMotion(_))
        ));
    }

    #[test]
    fn param_vectors() {
        let sym = KinematicModel::nominal(ModelVariant::ExtendedDdSymmetric, geom());
        assert_eq!(sym.param_vector().len(), 2);
        assert!(KinematicModel::ideal(geom()).param_vector().is_empty());
        let err = sym.with_params(&[1.2, 2.0]).unwrap_err();
        match err {
            Error::InvalidParameter { name, .. } => assert_eq!(name, "alpha"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(sym.with_params(&[0.5]).is_err());
        assert!(sym.with_params(&[0.5, f64::NAN]).is_err());
        // inclusive bounds
        assert!(sym.with_params(&[0.0, 2.0]).is_ok());
        assert!(sym.with_params(&[1.0, 2.0]).is_ok());
        let asym = KinematicModel::nominal(ModelVariant::ExtendedDdAsymmetric, geom());
        let err = asym.with_params(&[0.9, 0.9, 0.0, 1.0, 0.5]).unwrap_err();
        assert!(err.to_string().contains("y_r"));
        for v in ModelVariant::ALL {
            assert_eq!(v.bounds().len(), v.arity());
            let m = KinematicModel::nominal(v, geom());
            assert_eq!(m.with_params(&m.param_vector()).unwrap(), m);
        }
    }

    #[test]
    fn degenerate_widths_error() {
        let sym =
            KinematicModel::from_params(ModelVariant::ExtendedDdSymmetric, geom(), &[0.5, 0.0])
                .unwrap();
        assert!(sym.predict(&cmd(1.0, 2.0)).is_err());
        let asym = KinematicModel::from_params(
            ModelVariant::ExtendedDdAsymmetric,
            geom(),
            &[0.5, 0.5, 0.0, 0.0, 0.0],
        )
        .unwrap();
        assert!(asym.predict(&cmd(1.0, 2.0)).is_err());
    }

    #[test]
    fn nominal_models_match_ideal() {
        let ideal = KinematicModel::ideal(geom());
        for v in ModelVariant::ALL {
            let m = KinematicModel::nominal(v, geom());
            for (wl, wr) in [(1.0, 2.0), (-3.0, 0.5), (2.0, 2.0), (0.0, 0.0)] {
                let a = m.predict_twist(&cmd(wl, wr)).unwrap();
                let b = ideal.predict_twist(&cmd(wl, wr)).unwrap();
                assert_twist(a, b.vx, b.vy, b.omega, 1e-12);
            }
        }
    }

    #[test]
    fn non_finite_command_rejected() {
        for v in ModelVariant::ALL {
            let m = KinematicModel::nominal(v, geom());
            assert!(m.predict(&cmd(f64::NAN, 1.0)).is_err());
        }
    }

    #[test]
    fn document_round_trip_is_bit_exact() {
        let m = KinematicModel::from_params(
            ModelVariant::ExtendedDdAsymmetric,
            geom(),
            &[0.81, 0.1 + 0.2, -2.71, 3.0, -1.0 / 3.0],
        )
        .unwrap();
        let mut doc = ModelDocument::new("snow", m);
        doc.metadata = Some(serde_json::json!({"final_loss": 0.25}));
        let text = doc.to_kv().render();
        let back = ModelDocument::from_kv(&KvDocument::parse(&text).unwrap()).unwrap();
        assert_eq!(back, doc);
        for (a, b) in back.model.param_vector().iter().zip(m.param_vector()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn document_rejects_bad_input() {
        let bad = "variant = ext-dd-sym\ngeometry.r = 0.3\ngeometry.b = 1.2\nparam.alpha = 1.5\nparam.b_hat = 2\n";
        assert!(ModelDocument::from_kv(&KvDocument::parse(bad).unwrap()).is_err());
        let missing = "variant = roc\ngeometry.r = 0.3\ngeometry.b = 1.2\nparam.alpha = 0.5\n";
        assert!(ModelDocument::from_kv(&KvDocument::parse(missing).unwrap()).is_err());
        let tampered = "variant = ext-dd-sym\ngeometry.r = 0.3\ngeometry.b = 1.2\nparam.alpha = 0.5\nparam.b_hat = 2\nbounds.alpha = 0 2\n";
        assert!(ModelDocument::from_kv(&KvDocument::parse(tampered).unwrap()).is_err());
    }

    proptest! {
        #[test]
        fn zero_command_gives_zero_twist(v in 0usize..5, a in 0.05..1.0f64, w in 0.2..5.0f64) {
            let variant = ModelVariant::ALL[v];
            let m = KinematicModel::nominal(variant, geom());
            let mut p = m.param_vector();
            if !p.is_empty() { p[0] = if variant == ModelVariant::FullLinear { w } else { a }; }
            let m = m.with_params(&p).unwrap();
            let t = m.predict_twist(&cmd(0.0, 0.0)).unwrap();
            prop_assert_eq!(t, Twist2D::ZERO);
        }

        #[test]
        fn linear_variants_are_linear(
            wl1 in -10.0..10.0f64, wr1 in -10.0..10.0f64,
            wl2 in -10.0..10.0f64, wr2 in -10.0..10.0f64,
            s in -3.0..3.0f64,
            alpha_l in 0.1..1.0f64, alpha_r in 0.1..1.0f64, x_v in -3.0..3.0f64,
            y_l in 0.1..5.0f64, y_r in -5.0..-0.1f64,
        ) {
            let m = KinematicModel::from_params(
                ModelVariant::ExtendedDdAsymmetric, geom(), &[alpha_l, alpha_r, x_v, y_l, y_r]).unwrap();
            let models = [m, KinematicModel::ideal(geom()), m.to_full_linear().unwrap().unwrap()];
            for m in models {
                let a = m.predict_twist(&cmd(wl1, wr1)).unwrap();
                let b = m.predict_twist(&cmd(wl2, wr2)).unwrap();
                let c = m.predict_twist(&cmd(s * wl1 + wl2, s * wr1 + wr2)).unwrap();
                prop_assert!((c.vx - (s * a.vx + b.vx)).abs() < 1e-10);
                prop_assert!((c.vy - (s * a.vy + b.vy)).abs() < 1e-10);
                prop_assert!((c.omega - (s * a.omega + b.omega)).abs() < 1e-10);
            }
        }

        #[test]
        fn roc_is_positively_homogeneous(
            wl in -10.0..10.0f64, wr in -10.0..10.0f64, s in 0.01..20.0f64,
            alpha in 0.1..1.0f64, beta1 in -2.0..5.0f64, beta2 in -0.5..5.0f64,
        ) {
            let m = KinematicModel::from_params(ModelVariant::RocBased, geom(), &[alpha, beta1, beta2]).unwrap();
            let a = m.predict_twist(&cmd(wl, wr)).unwrap();
            let b = m.predict_twist(&cmd(s * wl, s * wr)).unwrap();
            let scale = 1e-9 * (1.0 + a.vx.abs().max(a.omega.abs()) * s);
            prop_assert!((b.vx - s * a.vx).abs() < scale);
            prop_assert!((b.omega - s * a.omega).abs() < scale);
        }
    }
}
