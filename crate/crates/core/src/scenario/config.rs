//! Scenario files.
//!
//! Scenarios are TOML documents. Unknown keys are rejected, and every error
//! names the offending field path. Physical units are part of the field
//! names (`_s`, `_hz`, `_m`, `_deg`, `_mps`, `_radps`).

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::{Matrix2, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::depth::{DepthObserverGains, Integrator, InverseDepthBounds};
use crate::error::{Error, Result};
use crate::geometry::{CameraPoint, SE2Pose, UnicycleInput};
use crate::relpose::{InnovationModel, NoiseConfig};
use crate::sim::VisibilityPolicy;
use crate::PointId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub duration_s: f64,
    #[serde(default = "default_rate")]
    pub rate_hz: f64,
    #[serde(default)]
    pub seed: u64,
    pub robot_a: RobotConfig,
    /// Second robot. Depth-only scenarios may leave it out.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robot_b: Option<RobotConfig>,
    pub points: Vec<PointConfig>,
    #[serde(default)]
    pub observer: ObserverConfig,
    /// Relative-pose filter. Absent means no pose estimation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ekf: Option<EkfConfig>,
    #[serde(default)]
    pub noise: MeasurementNoise,
    #[serde(default)]
    pub visibility: VisibilityConfig,
    #[serde(default)]
    pub transport: TransportConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

fn default_rate() -> f64 {
    20.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseConfig {
    pub x_m: f64,
    pub y_m: f64,
    pub theta_deg: f64,
}

impl PoseConfig {
    pub fn to_pose(self) -> SE2Pose {
        SE2Pose::new(self.x_m, self.y_m, self.theta_deg.to_radians())
    }
}

impl Default for PoseConfig {
    fn default() -> Self {
        Self {
            x_m: 0.0,
            y_m: 0.0,
            theta_deg: 0.0,
        }
    }
}

/// Piecewise-constant input: each segment holds from `start_s` until the next one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSegment {
    #[serde(default)]
    pub start_s: f64,
    pub v_mps: f64,
    #[serde(default)]
    pub w_radps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotConfig {
    #[serde(default)]
    pub initial_pose: PoseConfig,
    pub inputs: Vec<InputSegment>,
}

impl RobotConfig {
    /// Input in effect at time `t`.
    pub fn input_at(&self, t: f64) -> UnicycleInput {
        let mut current = UnicycleInput::default();
        for seg in &self.inputs {
            // small slack so segment starts that are multiples of dt are hit exactly
            if seg.start_s <= t + 1e-9 {
                current = UnicycleInput::new(seg.v_mps, seg.w_radps);
            } else {
                break;
            }
        }
        current
    }

    fn validate(&self, path: &str) -> Result<()> {
        if self.inputs.is_empty() {
            return Err(Error::config(format!("{path}.inputs"), "at least one segment required"));
        }
        let mut prev = f64::NEG_INFINITY;
        for (i, seg) in self.inputs.iter().enumerate() {
            let p = format!("{path}.inputs[{i}]");
            if !(seg.start_s.is_finite() && seg.v_mps.is_finite() && seg.w_radps.is_finite()) {
                return Err(Error::config(p, "values must be finite"));
            }
            if seg.start_s <= prev {
                return Err(Error::config(format!("{p}.start_s"), "segments must be strictly increasing in time"));
            }
            prev = seg.start_s;
        }
        let pose = self.initial_pose;
        if !(pose.x_m.is_finite() && pose.y_m.is_finite() && pose.theta_deg.is_finite()) {
            return Err(Error::config(format!("{path}.initial_pose"), "values must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointConfig {
    pub id: u32,
    /// `[x, y, z]` in robot A's camera frame at `t = 0`.
    pub camera_a_m: [f64; 3],
    /// Overrides `observer.initial_depth_error_m` for this point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_depth_error_m: Option<f64>,
}

impl PointConfig {
    pub fn camera_point(&self) -> CameraPoint {
        CameraPoint::new(self.camera_a_m[0], self.camera_a_m[1], self.camera_a_m[2])
    }
}

/// Observer gain `H`: a scalar multiple of the identity or a full 2x2 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GainMatrix {
    Scalar(f64),
    Matrix([[f64; 2]; 2]),
}

impl GainMatrix {
    pub fn to_matrix(self) -> Matrix2<f64> {
        match self {
            GainMatrix::Scalar(k) => Matrix2::identity() * k,
            GainMatrix::Matrix(m) => Matrix2::new(m[0][0], m[0][1], m[1][0], m[1][1]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntegratorKind {
    Euler,
    Rk4,
}

impl From<IntegratorKind> for Integrator {
    fn from(k: IntegratorKind) -> Self {
        match k {
            IntegratorKind::Euler => Integrator::Euler,
            IntegratorKind::Rk4 => Integrator::Rk4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObserverConfig {
    pub h: GainMatrix,
    pub alpha: f64,
    pub lambda: f64,
    pub chi_min: f64,
    pub chi_max: f64,
    pub integrator: IntegratorKind,
    /// Prior depth minus true depth at the first sighting of each point.
    pub initial_depth_error_m: f64,
}

impl Default for ObserverConfig {
    fn default() -> Self {
        Self {
            h: GainMatrix::Scalar(2.5),
            alpha: 1.0,
            lambda: 120.0,
            chi_min: 0.01,
            chi_max: 10.0,
            integrator: IntegratorKind::Euler,
            initial_depth_error_m: 1.0,
        }
    }
}

impl ObserverConfig {
    pub fn gains(&self) -> Result<DepthObserverGains> {
        DepthObserverGains::new(self.h.to_matrix(), self.alpha, self.lambda)
            .map_err(|e| Error::config("observer", e.to_string()))
    }

    pub fn bounds(&self) -> Result<InverseDepthBounds> {
        InverseDepthBounds::new(self.chi_min, self.chi_max)
            .map_err(|e| Error::config("observer.chi_min", e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimators {
    /// Only robot A estimates the pose of B.
    A,
    /// Both robots estimate each other.
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InnovationKind {
    Position,
    Velocity,
}

impl From<InnovationKind> for InnovationModel {
    fn from(k: InnovationKind) -> Self {
        match k {
            InnovationKind::Position => InnovationModel::PositionLevel,
            InnovationKind::Velocity => InnovationModel::VelocityLevel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EkfConfig {
    pub estimators: Estimators,
    pub innovation: InnovationKind,
    /// Initial estimate minus true relative pose.
    pub initial_offset: PoseConfig,
    /// Initial standard deviations; `P0` is diagonal.
    pub initial_std: PoseConfig,
    /// Diagonal of the process noise density.
    pub q_diag: [f64; 3],
    /// Diagonal of the measurement covariance.
    pub r_diag: [f64; 2],
    pub gate_threshold: f64,
    /// Reset `P` to `P0` after this many consecutive fully-rejected update cycles.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reinflate_after: Option<u32>,
    /// Peer estimates older than this are not fused.
    pub staleness_limit_s: f64,
    /// Propagate peer estimates to the local time with their rates.
    pub extrapolate_peer: bool,
    /// Depth spread of an unexcited point; shrinks as the point is excited.
    /// Zero treats the transmitted depths as exact.
    pub depth_prior_std_m: f64,
}

impl Default for EkfConfig {
    fn default() -> Self {
        Self {
            estimators: Estimators::A,
            innovation: InnovationKind::Position,
            initial_offset: PoseConfig {
                x_m: 1.5,
                y_m: 1.5,
                theta_deg: 15.0,
            },
            initial_std: PoseConfig {
                x_m: 1.5,
                y_m: 1.5,
                theta_deg: 15.0,
            },
            q_diag: [1e-4, 1e-4, 1e-5],
            r_diag: [1e-2, 1e-2],
            gate_threshold: 9.21,
            reinflate_after: None,
            staleness_limit_s: 0.2,
            extrapolate_peer: true,
            depth_prior_std_m: 1.0,
        }
    }
}

impl EkfConfig {
    pub fn noise(&self) -> Result<NoiseConfig> {
        let q = self.q_diag;
        let r = self.r_diag;
        let n = NoiseConfig {
            q_process: Matrix3::from_diagonal(&Vector3::new(q[0], q[1], q[2])),
            r_meas: Matrix2::new(r[0], 0.0, 0.0, r[1]),
            gate_threshold: self.gate_threshold,
        };
        n.validate().map_err(|e| Error::config("ekf", e.to_string()))?;
        Ok(n)
    }

    pub fn initial_covariance_diag(&self) -> Vector3<f64> {
        let s = self.initial_std;
        Vector3::new(s.x_m * s.x_m, s.y_m * s.y_m, s.theta_deg.to_radians().powi(2))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasurementNoise {
    /// Std of additive noise on normalized image coordinates.
    pub sigma_s: f64,
    /// Std of the noise on the inputs reported to the estimators.
    pub sigma_u: f64,
}

impl Default for MeasurementNoise {
    fn default() -> Self {
        Self {
            sigma_s: 0.0,
            sigma_u: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VisibilityConfig {
    pub fov_half_angle_deg: f64,
    pub min_depth_m: f64,
}

impl Default for VisibilityConfig {
    fn default() -> Self {
        Self {
            fov_half_angle_deg: 45.0,
            min_depth_m: 0.1,
        }
    }
}

impl VisibilityConfig {
    pub fn policy(&self) -> Result<VisibilityPolicy> {
        let p = VisibilityPolicy {
            fov_half_angle: self.fov_half_angle_deg.to_radians(),
            min_depth: self.min_depth_m,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    Inproc,
    Udp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransportConfig {
    pub kind: TransportKind,
    pub loss_rate: f64,
    pub delay_steps: u64,
    /// Loopback ports for the UDP transport; `0` picks a free port.
    pub port_a: u16,
    pub port_b: u16,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            kind: TransportKind::Inproc,
            loss_rate: 0.0,
            delay_steps: 0,
            port_a: 0,
            port_b: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Window of the excitation integral.
    pub pe_window_s: f64,
    pub depth_threshold_m: f64,
    pub depth_threshold_rel: f64,
    pub position_threshold_m: f64,
    pub heading_threshold_deg: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            pe_window_s: 1.0,
            depth_threshold_m: 0.05,
            depth_threshold_rel: 0.05,
            position_threshold_m: 0.1,
            heading_threshold_deg: 2.0,
        }
    }
}

fn positive(v: f64, path: &str) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(path, "must be finite and > 0"))
    }
}

fn non_negative(v: f64, path: &str) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::config(path, "must be finite and >= 0"))
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::config("", e.message().to_string()))?;
        let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { String::new() } else { path };
            Error::config(path, e.into_inner().message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("", e.to_string()))
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.rate_hz
    }

    /// Number of steps; the run produces `steps() + 1` records including `t = 0`.
    pub fn steps(&self) -> usize {
        (self.duration_s * self.rate_hz).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        positive(self.duration_s, "duration_s")?;
        positive(self.rate_hz, "rate_hz")?;
        self.robot_a.validate("robot_a")?;
        if let Some(b) = &self.robot_b {
            b.validate("robot_b")?;
        }
        if self.points.is_empty() {
            return Err(Error::config("points", "at least one point required"));
        }
        let mut ids = BTreeSet::new();
        for (i, p) in self.points.iter().enumerate() {
            if !ids.insert(p.id) {
                return Err(Error::config(format!("points[{i}].id"), format!("duplicate id {}", p.id)));
            }
            if !p.camera_a_m.iter().all(|v| v.is_finite()) {
                return Err(Error::config(format!("points[{i}].camera_a_m"), "values must be finite"));
            }
            if let Some(e) = p.initial_depth_error_m {
                if !e.is_finite() {
                    return Err(Error::config(format!("points[{i}].initial_depth_error_m"), "must be finite"));
                }
            }
        }
        self.observer.gains()?;
        self.observer.bounds()?;
        if !self.observer.initial_depth_error_m.is_finite() {
            return Err(Error::config("observer.initial_depth_error_m", "must be finite"));
        }
        if let Some(ekf) = &self.ekf {
            if self.robot_b.is_none() {
                return Err(Error::config("ekf", "pose estimation needs robot_b"));
            }
            if self.points.len() < 2 {
                return Err(Error::config("points", "pose estimation needs at least two points"));
            }
            ekf.noise()?;
            positive(ekf.initial_std.x_m, "ekf.initial_std.x_m")?;
            positive(ekf.initial_std.y_m, "ekf.initial_std.y_m")?;
            positive(ekf.initial_std.theta_deg, "ekf.initial_std.theta_deg")?;
            positive(ekf.staleness_limit_s, "ekf.staleness_limit_s")?;
            non_negative(ekf.depth_prior_std_m, "ekf.depth_prior_std_m")?;
            if ekf.reinflate_after == Some(0) {
                return Err(Error::config("ekf.reinflate_after", "must be >= 1"));
            }
        }
        non_negative(self.noise.sigma_s, "noise.sigma_s")?;
        non_negative(self.noise.sigma_u, "noise.sigma_u")?;
        self.visibility
            .policy()
            .map_err(|e| Error::config("visibility", e.to_string()))?;
        let t = &self.transport;
        if !(t.loss_rate.is_finite() && (0.0..1.0).contains(&t.loss_rate)) {
            return Err(Error::config("transport.loss_rate", "must be in [0, 1)"));
        }
        let m = &self.metrics;
        positive(m.pe_window_s, "metrics.pe_window_s")?;
        positive(m.depth_threshold_m, "metrics.depth_threshold_m")?;
        positive(m.depth_threshold_rel, "metrics.depth_threshold_rel")?;
        positive(m.position_threshold_m, "metrics.position_threshold_m")?;
        positive(m.heading_threshold_deg, "metrics.heading_threshold_deg")?;
        Ok(())
    }

    pub fn point_ids(&self) -> Vec<PointId> {
        self.points.iter().map(|p| PointId(p.id)).collect()
    }
}

/// Replaces the value at a dotted path such as `observer.lambda` or
/// `robot_a.inputs.0.v_mps` and re-validates the result.
pub fn set_parameter(config: &ScenarioConfig, path: &str, value: toml::Value) -> Result<ScenarioConfig> {
    let mut root = toml::Value::try_from(config).map_err(|e| Error::config(path, e.to_string()))?;
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(path, "empty path segment"));
    }
    let (last, parents) = parts.split_last().expect("split always yields one part");
    let mut node = &mut root;
    for part in parents {
        node = child(node, part).ok_or_else(|| Error::config(path, format!("no such field `{part}`")))?;
    }
    match node {
        toml::Value::Table(t) => {
            t.insert((*last).to_string(), value);
        }
        toml::Value::Array(a) => {
            let i: usize = last
                .parse()
                .map_err(|_| Error::config(path, format!("`{last}` is not an index")))?;
            let slot = a
                .get_mut(i)
                .ok_or_else(|| Error::config(path, format!("index {i} out of range")))?;
            *slot = value;
        }
        _ => return Err(Error::config(path, "parent is not a table or array")),
    }
    let text = toml::to_string(&root).map_err(|e| Error::config(path, e.to_string()))?;
    ScenarioConfig::from_toml_str(&text)
}

fn child<'a>(node: &'a mut toml::Value, key: &str) -> Option<&'a mut toml::Value> {
    match node {
        toml::Value::Table(t) => t.get_mut(key),
        toml::Value::Array(a) => a.get_mut(key.parse::<usize>().ok()?),
        _ => None,
    }
}

/// Parses a command-line value as a TOML value, falling back to a plain string.
pub fn parse_value(text: &str) -> toml::Value {
    let doc = format!("v = {text}");
    toml::from_str::<toml::Table>(&doc)
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()))
}
