//! Extended Kalman filter for the planar pose of robot B expressed in the body
//! frame of robot A, `xi = (r_x, r_y, theta)`.
//!
//! The process model follows from differentiating `R(theta_A)^T (r_B - r_A)`
//! under unicycle motion of both robots:
//!
//! ```text
//! xi_dot = [ v_B cos(theta) - v_A + w_A r_y,
//!            v_B sin(theta) - w_A r_x,
//!            w_B - w_A ]
//! ```
//!
//! Measurements come from points seen by both robots. Each robot turns its
//! feature and inverse-depth estimate into a ground-plane point `m`; the
//! points satisfy `m_A = r + R(theta) m_B`. Two innovation models are
//! available: the position-level constraint itself and its time derivative.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    camera_to_planar, skew_scalar, unproject, wrap_angle, NormalizedFeature, PlanarPoint, Rot2,
    SE2Pose, UnicycleInput,
};
use crate::PointId;

pub type RelPoseState = SE2Pose;

/// 3x3 covariance, kept symmetric after every operation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Covariance3(pub Matrix3<f64>);

impl Covariance3 {
    pub fn from_diagonal(d: Vector3<f64>) -> Self {
        Self(Matrix3::from_diagonal(&d))
    }

    pub fn symmetrized(m: Matrix3<f64>) -> Self {
        Self((m + m.transpose()) * 0.5)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.0
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (self.0 - self.0.transpose()).abs().max() <= tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    /// Process noise density (per second).
    pub q_process: Matrix3<f64>,
    /// Innovation noise for one point.
    pub r_meas: Matrix2<f64>,
    /// Mahalanobis gate on `y^T S^-1 y`.
    pub gate_threshold: f64,
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        let q_ok = self
            .q_process
            .symmetric_eigenvalues()
            .iter()
            .all(|&e| e >= -1e-12);
        let r_ok = self
            .r_meas
            .symmetric_eigenvalues()
            .iter()
            .all(|&e| e >= -1e-12);
        if !q_ok || (self.q_process - self.q_process.transpose()).abs().max() > 1e-12 {
            return Err(Error::config("ekf.q_process", "must be symmetric PSD"));
        }
        if !r_ok || (self.r_meas - self.r_meas.transpose()).abs().max() > 1e-12 {
            return Err(Error::config("ekf.r_meas", "must be symmetric PSD"));
        }
        if !(self.gate_threshold > 0.0) {
            return Err(Error::config("ekf.gate_threshold", "must be > 0"));
        }
        Ok(())
    }
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            q_process: Matrix3::from_diagonal(&Vector3::new(1e-4, 1e-4, 1e-5)),
            r_meas: Matrix2::identity() * 1e-2,
            // chi-square 99% quantile, 2 degrees of freedom
            gate_threshold: 9.21,
        }
    }
}

/// One robot's estimate of a shared point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointEstimate {
    pub s: NormalizedFeature,
    pub s_rate: Option<Vector2<f64>>,
    pub chi: f64,
    pub chi_rate: Option<f64>,
    pub timestamp: f64,
    /// Variance of the depth `1 / chi` in m^2; zero treats the depth as exact.
    pub depth_var: f64,
}

impl PointEstimate {
    /// Ground-plane position of the point in the robot's body frame.
    pub fn planar_point(&self) -> Result<PlanarPoint> {
        if !(self.chi.is_finite() && self.chi > 0.0) {
            return Err(Error::NonPositiveDepth(1.0 / self.chi));
        }
        Ok(camera_to_planar(unproject(self.s, 1.0 / self.chi)?))
    }

    /// Covariance of [`planar_point`](Self::planar_point) induced by the depth
    /// variance: `m = z (1, -x)`, so `dm/dz = (1, -x)`.
    pub fn planar_covariance(&self) -> Matrix2<f64> {
        let g = Vector2::new(1.0, -self.s.x);
        g * g.transpose() * self.depth_var
    }

    /// Time derivative of [`planar_point`](Self::planar_point) from the feature
    /// and inverse-depth rates: `m = z (1, -x)`, `z_dot = -chi_dot / chi^2`.
    pub fn planar_velocity(&self, id: PointId) -> Result<Vector2<f64>> {
        let (Some(s_rate), Some(chi_rate)) = (self.s_rate, self.chi_rate) else {
            return Err(Error::MissingRates(id.0));
        };
        let z = 1.0 / self.chi;
        let z_dot = -chi_rate / (self.chi * self.chi);
        Ok(Vector2::new(z_dot, -z_dot * self.s.x - z * s_rate.x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointPairObservation {
    pub point_id: PointId,
    pub a: PointEstimate,
    pub b: PointEstimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnovationModel {
    #[default]
    PositionLevel,
    VelocityLevel,
}

/// Residual `y = z - h(xi)` and the measurement Jacobian `H = dh/dxi`, so that
/// `y(xi + d) ≈ y(xi) - H d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Innovation {
    pub residual: Vector2<f64>,
    pub jacobian: Matrix2x3<f64>,
    /// Residual covariance contributed by the point estimates themselves,
    /// added to the configured measurement noise.
    pub point_covariance: Matrix2<f64>,
}

pub fn relpose_dynamics(xi: &RelPoseState, u_a: UnicycleInput, u_b: UnicycleInput) -> Vector3<f64> {
    let (s, c) = xi.theta.sin_cos();
    Vector3::new(
        u_b.v_d * c - u_a.v_d + u_a.w_theta * xi.y,
        u_b.v_d * s - u_a.w_theta * xi.x,
        u_b.w_theta - u_a.w_theta,
    )
}

pub fn relpose_jacobian(xi: &RelPoseState, u_a: UnicycleInput, u_b: UnicycleInput) -> Matrix3<f64> {
    let (s, c) = xi.theta.sin_cos();
    let w = u_a.w_theta;
    let v = u_b.v_d;
    Matrix3::new(0.0, w, -v * s, -w, 0.0, v * c, 0.0, 0.0, 0.0)
}

fn check_input(u: UnicycleInput, what: &'static str) -> Result<()> {
    if u.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteInput(what))
    }
}

/// Euler step of the process model with `P <- Phi P Phi^T + Q dt`, `Phi = I + F dt`.
pub fn ekf_predict(
    xi: &RelPoseState,
    p: &Covariance3,
    u_a: UnicycleInput,
    u_b: UnicycleInput,
    dt: f64,
    q_process: &Matrix3<f64>,
) -> Result<(RelPoseState, Covariance3)> {
    check_input(u_a, "u_a")?;
    check_input(u_b, "u_b")?;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::NonFiniteInput("dt"));
    }
    if !xi.is_finite() {
        return Err(Error::NonFiniteInput("state"));
    }
    let f = relpose_dynamics(xi, u_a, u_b);
    let phi = Matrix3::identity() + relpose_jacobian(xi, u_a, u_b) * dt;
    let next = SE2Pose::new(xi.x + f.x * dt, xi.y + f.y * dt, xi.theta + f.z * dt);
    let p_next = phi * p.0 * phi.transpose() + q_process * dt;
    Ok((next, Covariance3::symmetrized(p_next)))
}

/// Where a point seen at `m_a` by robot A appears in robot B's frame: `R^T(theta) (m_a - r)`.
pub fn predict_point_in_b(xi: &RelPoseState, m_a: PlanarPoint) -> PlanarPoint {
    PlanarPoint::from_vector(xi.rotation().apply_transpose(m_a.to_vector() - xi.translation()))
}

/// `d R^T(theta) / d theta`.
fn d_rot_transpose(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(-s, c, -c, -s)
}

pub fn innovation_position(xi: &RelPoseState, obs: &PointPairObservation) -> Result<Innovation> {
    let m_a = obs.a.planar_point()?.to_vector();
    let m_b = obs.b.planar_point()?.to_vector();
    let d = m_a - xi.translation();
    let predicted = xi.rotation().apply_transpose(d);
    let rt = xi.rotation().matrix().transpose();
    let mut jacobian = Matrix2x3::zeros();
    jacobian.fixed_view_mut::<2, 2>(0, 0).copy_from(&(-rt));
    jacobian.set_column(2, &(d_rot_transpose(xi.theta) * d));
    let point_covariance = obs.b.planar_covariance() + rt * obs.a.planar_covariance() * rt.transpose();
    Ok(Innovation {
        residual: m_b - predicted,
        jacobian,
        point_covariance,
    })
}

/// Differentiated constraint: `S(theta_dot) m_B + m_B_dot = R^T(theta) (m_A_dot - r_dot)`,
/// with `r_dot` from the process model and `theta_dot = w_B - w_A`.
pub fn innovation_velocity(
    xi: &RelPoseState,
    obs: &PointPairObservation,
    u_a: UnicycleInput,
    u_b: UnicycleInput,
) -> Result<Innovation> {
    let m_b = obs.b.planar_point()?.to_vector();
    let m_a_dot = obs.a.planar_velocity(obs.point_id)?;
    let m_b_dot = obs.b.planar_velocity(obs.point_id)?;
    let theta_dot = u_b.w_theta - u_a.w_theta;
    let pi = skew_scalar(theta_dot) * m_b + m_b_dot;

    let f = relpose_dynamics(xi, u_a, u_b);
    let r_dot = Vector2::new(f.x, f.y);
    let rot = Rot2::new(xi.theta);
    let d = m_a_dot - r_dot;
    let predicted = rot.apply_transpose(d);

    let rt = rot.matrix().transpose();
    // dr_dot/dr and dr_dot/dtheta from the process Jacobian
    let fj = relpose_jacobian(xi, u_a, u_b);
    let dr_dot_dr: Matrix2<f64> = fj.fixed_view::<2, 2>(0, 0).into_owned();
    let dr_dot_dth = Vector2::new(fj[(0, 2)], fj[(1, 2)]);
    let mut jacobian = Matrix2x3::zeros();
    jacobian
        .fixed_view_mut::<2, 2>(0, 0)
        .copy_from(&(-rt * dr_dot_dr));
    jacobian.set_column(2, &(d_rot_transpose(xi.theta) * d - rt * dr_dot_dth));
    // depth uncertainty is only propagated for the position-level model
    Ok(Innovation {
        residual: pi - predicted,
        jacobian,
        point_covariance: Matrix2::zeros(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpdateOutcome {
    Accepted {
        state: RelPoseState,
        covariance: Covariance3,
        mahalanobis_sq: f64,
    },
    Rejected {
        mahalanobis_sq: f64,
    },
}

/// Gated EKF correction with a Joseph-form covariance update.
pub fn ekf_update(
    xi: &RelPoseState,
    p: &Covariance3,
    innovation: &Innovation,
    r_meas: &Matrix2<f64>,
    gate_threshold: f64,
) -> Result<UpdateOutcome> {
    let y = innovation.residual;
    let h = innovation.jacobian;
    if !(y.iter().all(|v| v.is_finite()) && h.iter().all(|v| v.is_finite())) {
        return Err(Error::NonFiniteInput("innovation"));
    }
    let r = r_meas + innovation.point_covariance;
    let s = h * p.0 * h.transpose() + r;
    let det = s.determinant();
    if !(det.is_finite() && det.abs() > f64::EPSILON * s.norm_squared()) {
        return Err(Error::SingularInnovation);
    }
    let s_inv = s.try_inverse().ok_or(Error::SingularInnovation)?;
    let d2 = (y.transpose() * s_inv * y)[(0, 0)];
    if d2 > gate_threshold {
        return Ok(UpdateOutcome::Rejected { mahalanobis_sq: d2 });
    }
    let k = p.0 * h.transpose() * s_inv;
    let dx = k * y;
    let state = SE2Pose::new(xi.x + dx.x, xi.y + dx.y, wrap_angle(xi.theta + dx.z));
    let ikh = Matrix3::identity() - k * h;
    let p_next = ikh * p.0 * ikh.transpose() + k * r * k.transpose();
    Ok(UpdateOutcome::Accepted {
        state,
        covariance: Covariance3::symmetrized(p_next),
        mahalanobis_sq: d2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct EkfStats {
    pub predictions: u64,
    pub updates: u64,
    pub rejections: u64,
    pub reinflations: u64,
}

/// Stateful wrapper around the predict/update functions.
#[derive(Debug, Clone)]
pub struct RelPoseEkf {
    pub state: RelPoseState,
    pub covariance: Covariance3,
    pub noise: NoiseConfig,
    pub model: InnovationModel,
    initial_covariance: Covariance3,
    /// Consecutive fully-rejected update cycles before the covariance is reset
    /// to its initial value. `None` disables the reset.
    pub reinflate_after: Option<u32>,
    rejected_cycles: u32,
    pub stats: EkfStats,
}

impl RelPoseEkf {
    pub fn new(state: RelPoseState, covariance: Covariance3, noise: NoiseConfig) -> Self {
        Self {
            state,
            covariance,
            noise,
            model: InnovationModel::default(),
            initial_covariance: covariance,
            reinflate_after: None,
            rejected_cycles: 0,
            stats: EkfStats::default(),
        }
    }

    pub fn with_model(mut self, model: InnovationModel) -> Self {
        self.model = model;
        self
    }

    pub fn with_reinflation(mut self, cycles: Option<u32>) -> Self {
        self.reinflate_after = cycles;
        self
    }

    pub fn predict(&mut self, u_a: UnicycleInput, u_b: UnicycleInput, dt: f64) -> Result<()> {
        let (xi, p) = ekf_predict(&self.state, &self.covariance, u_a, u_b, dt, &self.noise.q_process)?;
        self.state = xi;
        self.covariance = p;
        self.stats.predictions += 1;
        Ok(())
    }

    pub fn innovation(
        &self,
        obs: &PointPairObservation,
        u_a: UnicycleInput,
        u_b: UnicycleInput,
    ) -> Result<Innovation> {
        match self.model {
            InnovationModel::PositionLevel => innovation_position(&self.state, obs),
            InnovationModel::VelocityLevel => innovation_velocity(&self.state, obs, u_a, u_b),
        }
    }

    /// Sequential per-point updates in ascending point id order. Returns the
    /// number of accepted updates.
    pub fn update_all(
        &mut self,
        observations: &[PointPairObservation],
        u_a: UnicycleInput,
        u_b: UnicycleInput,
    ) -> Result<usize> {
        let mut sorted: Vec<&PointPairObservation> = observations.iter().collect();
        sorted.sort_by_key(|o| o.point_id);
        let mut accepted = 0;
        for obs in sorted {
            let innov = self.innovation(obs, u_a, u_b)?;
            match ekf_update(
                &self.state,
                &self.covariance,
                &innov,
                &self.noise.r_meas,
                self.noise.gate_threshold,
            )? {
                UpdateOutcome::Accepted {
                    state, covariance, ..
                } => {
                    self.state = state;
                    self.covariance = covariance;
                    self.stats.updates += 1;
                    accepted += 1;
                }
                UpdateOutcome::Rejected { mahalanobis_sq } => {
                    log::debug!(
                        "rejected point {} update, d2 = {mahalanobis_sq:.3}",
                        obs.point_id.0
                    );
                    self.stats.rejections += 1;
                }
            }
        }
        if !observations.is_empty() {
            if accepted == 0 {
                self.rejected_cycles += 1;
            } else {
                self.rejected_cycles = 0;
            }
            if let Some(limit) = self.reinflate_after {
                if self.rejected_cycles >= limit {
                    self.covariance = self.initial_covariance;
                    self.rejected_cycles = 0;
                    self.stats.reinflations += 1;
                }
            }
        }
        Ok(accepted)
    }
}
