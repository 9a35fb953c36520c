//! Nonlinear observer for the inverse depth of a tracked point.
//!
//! For a camera on a unicycle (forward speed `v_d` along the optical axis,
//! heading rate `w_theta`), the normalized coordinates `s = (x, y)` and the
//! inverse depth `chi = 1 / z_bar` of a static point evolve as
//!
//! ```text
//! s_dot   = f_m(s, u) + Omega(s, u)^T chi
//! chi_dot = f_u(s, u, chi)
//!
//! f_m   = w_theta * [1 + x^2, x y]
//! Omega = v_d * [x, y]
//! f_u   = v_d chi^2 + x w_theta chi
//! ```
//!
//! The observer keeps estimates `(s_hat, chi_hat)` and drives them with the
//! feature error `s_tilde = s - s_hat`:
//!
//! ```text
//! s_hat_dot   = f_m(s, u) + Omega^T chi_hat + H s_tilde
//! chi_hat_dot = f_u(s, u, chi_hat) + lambda * Omega * (alpha I) * s_tilde
//! ```
//!
//! The inverse depth is only observable while `Omega` is persistently
//! exciting, i.e. while the point is away from the image center and the
//! vehicle translates.

use std::collections::VecDeque;

use nalgebra::{Matrix2, Matrix3, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{NormalizedFeature, UnicycleInput};

/// Observer gains: `H` (2x2 SPD), `Q = alpha I` and the scalar `lambda`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthObserverGains {
    h: Matrix2<f64>,
    alpha: f64,
    lambda: f64,
}

impl DepthObserverGains {
    pub fn new(h: Matrix2<f64>, alpha: f64, lambda: f64) -> Result<Self> {
        if !h.iter().all(|v| v.is_finite()) || (h[(0, 1)] - h[(1, 0)]).abs() > 1e-12 {
            return Err(Error::InvalidGains("H must be finite and symmetric".into()));
        }
        // a symmetric 2x2 matrix is positive definite iff trace > 0 and det > 0
        if h.trace() <= 0.0 || h.determinant() <= 0.0 {
            return Err(Error::InvalidGains("H must be positive definite".into()));
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidGains(format!("alpha must be > 0, got {alpha}")));
        }
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidGains(format!("lambda must be > 0, got {lambda}")));
        }
        Ok(Self { h, alpha, lambda })
    }

    /// `H = h_scale * I`.
    pub fn isotropic(h_scale: f64, alpha: f64, lambda: f64) -> Result<Self> {
        Self::new(Matrix2::identity() * h_scale, alpha, lambda)
    }

    pub fn h(&self) -> &Matrix2<f64> {
        &self.h
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

impl Default for DepthObserverGains {
    fn default() -> Self {
        Self {
            h: Matrix2::identity() * 2.5,
            alpha: 1.0,
            lambda: 120.0,
        }
    }
}

/// Clamp range for the inverse-depth estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseDepthBounds {
    pub chi_min: f64,
    pub chi_max: f64,
}

impl InverseDepthBounds {
    pub fn new(chi_min: f64, chi_max: f64) -> Result<Self> {
        if !(chi_min > 0.0 && chi_max > chi_min && chi_max.is_finite()) {
            return Err(Error::InvalidGains(format!(
                "inverse depth bounds must satisfy 0 < min < max, got [{chi_min}, {chi_max}]"
            )));
        }
        Ok(Self { chi_min, chi_max })
    }

    pub fn clamp(&self, chi: f64) -> f64 {
        chi.clamp(self.chi_min, self.chi_max)
    }

    pub fn contains(&self, chi: f64) -> bool {
        chi >= self.chi_min && chi <= self.chi_max
    }
}

impl Default for InverseDepthBounds {
    fn default() -> Self {
        Self {
            chi_min: 0.01,
            chi_max: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    #[default]
    Euler,
    /// Classic RK4 with the measurement and input held over the step.
    Rk4,
}

/// The three pieces of the feature/inverse-depth dynamics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureDynamics {
    pub f_m: Vector2<f64>,
    /// Row vector `Omega`, stored as a column.
    pub omega: Vector2<f64>,
    pub f_u: f64,
}

pub fn eval_dynamics(s: NormalizedFeature, u: UnicycleInput, chi: f64) -> FeatureDynamics {
    let (x, y) = (s.x, s.y);
    FeatureDynamics {
        f_m: Vector2::new(1.0 + x * x, x * y) * u.w_theta,
        omega: Vector2::new(x, y) * u.v_d,
        f_u: u.v_d * chi * chi + x * u.w_theta * chi,
    }
}

/// Instantaneous excitation `|Omega|^2 = (x^2 + y^2) v_d^2`.
pub fn pe_excitation(s: NormalizedFeature, u: UnicycleInput) -> f64 {
    (s.x * s.x + s.y * s.y) * u.v_d * u.v_d
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthObserverState {
    pub s_hat: NormalizedFeature,
    pub chi_hat: f64,
    pub gains: DepthObserverGains,
    pub bounds: InverseDepthBounds,
    pub integrator: Integrator,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObserverStepOutput {
    pub new_state: DepthObserverState,
    /// Right-hand sides evaluated at the pre-step state.
    pub s_hat_rate: Vector2<f64>,
    pub chi_hat_rate: f64,
}

impl DepthObserverState {
    /// Starts the observer at the first measurement with a prior depth guess.
    pub fn new(
        first_measurement: NormalizedFeature,
        prior_depth: f64,
        gains: DepthObserverGains,
        bounds: InverseDepthBounds,
    ) -> Result<Self> {
        if !first_measurement.is_finite() {
            return Err(Error::NonFiniteInput("first measurement"));
        }
        if !(prior_depth.is_finite() && prior_depth > 0.0) {
            return Err(Error::NonPositiveDepth(prior_depth));
        }
        Ok(Self {
            s_hat: first_measurement,
            chi_hat: bounds.clamp(1.0 / prior_depth),
            gains,
            bounds,
            integrator: Integrator::Euler,
        })
    }

    pub fn with_integrator(mut self, integrator: Integrator) -> Self {
        self.integrator = integrator;
        self
    }

    pub fn depth_estimate(&self) -> f64 {
        depth_estimate(self)
    }

    /// Observer right-hand side at `(s_hat, chi_hat)`.
    fn rates(
        &self,
        s_hat: Vector2<f64>,
        chi_hat: f64,
        s_meas: NormalizedFeature,
        u: UnicycleInput,
    ) -> (Vector2<f64>, f64) {
        let dyn_ = eval_dynamics(s_meas, u, chi_hat);
        let s_tilde = s_meas.to_vector() - s_hat;
        let s_rate = dyn_.f_m + dyn_.omega * chi_hat + self.gains.h * s_tilde;
        let chi_rate =
            dyn_.f_u + self.gains.lambda * self.gains.alpha * dyn_.omega.dot(&s_tilde);
        (s_rate, chi_rate)
    }
}

pub fn observer_step(
    state: &DepthObserverState,
    s_meas: NormalizedFeature,
    u: UnicycleInput,
    dt: f64,
) -> Result<ObserverStepOutput> {
    if !s_meas.is_finite() {
        return Err(Error::NonFiniteInput("feature measurement"));
    }
    if !u.is_finite() {
        return Err(Error::NonFiniteInput("input"));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::NonFiniteInput("dt"));
    }
    let s0 = state.s_hat.to_vector();
    let c0 = state.chi_hat;
    let (s_rate, chi_rate) = state.rates(s0, c0, s_meas, u);

    let (s1, c1) = match state.integrator {
        Integrator::Euler => (s0 + s_rate * dt, c0 + chi_rate * dt),
        Integrator::Rk4 => {
            let (k1s, k1c) = (s_rate, chi_rate);
            let (k2s, k2c) = state.rates(s0 + k1s * (dt / 2.0), c0 + k1c * dt / 2.0, s_meas, u);
            let (k3s, k3c) = state.rates(s0 + k2s * (dt / 2.0), c0 + k2c * dt / 2.0, s_meas, u);
            let (k4s, k4c) = state.rates(s0 + k3s * dt, c0 + k3c * dt, s_meas, u);
            (
                s0 + (k1s + k2s * 2.0 + k3s * 2.0 + k4s) * (dt / 6.0),
                c0 + (k1c + 2.0 * k2c + 2.0 * k3c + k4c) * dt / 6.0,
            )
        }
    };
    if !(s1.iter().all(|v| v.is_finite()) && c1.is_finite()) {
        return Err(Error::NonFiniteInput("observer state diverged"));
    }

    let mut new_state = *state;
    new_state.s_hat = NormalizedFeature::from_vector(s1);
    new_state.chi_hat = state.bounds.clamp(c1);
    Ok(ObserverStepOutput {
        new_state,
        s_hat_rate: s_rate,
        chi_hat_rate: chi_rate,
    })
}

/// Depth along the optical axis implied by the inverse-depth estimate.
pub fn depth_estimate(state: &DepthObserverState) -> f64 {
    1.0 / state.chi_hat
}

/// Sliding-window integral of `|Omega|^2`, the excitation level seen by the
/// scalar inverse-depth estimate over the last `window_seconds`.
#[derive(Debug, Clone)]
pub struct ExcitationWindow {
    capacity: usize,
    samples: VecDeque<f64>,
    dt: f64,
}

impl ExcitationWindow {
    pub fn new(window_seconds: f64, dt: f64) -> Self {
        let capacity = ((window_seconds / dt).round() as usize).max(1);
        Self {
            capacity,
            samples: VecDeque::with_capacity(capacity),
            dt,
        }
    }

    pub fn push(&mut self, s: NormalizedFeature, u: UnicycleInput) {
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(pe_excitation(s, u));
    }

    pub fn integral(&self) -> f64 {
        self.samples.iter().sum::<f64>() * self.dt
    }

    pub fn is_full(&self) -> bool {
        self.samples.len() == self.capacity
    }
}

/// Covariance of the observer error `e = (s - s_hat, chi - chi_hat)` under
/// the linearized error dynamics
///
/// ```text
/// e_dot = [ -H                      Omega ] e
///         [ -alpha lambda Omega^T    a    ]
/// ```
///
/// with `a = 2 v chi_hat + x w`, the derivative of `f_u` in `chi`. It starts
/// with all the uncertainty in the inverse depth and is propagated with the
/// same Euler transition the observer uses, so it tracks how much of the
/// initial depth error the observer has removed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObserverErrorCovariance(pub Matrix3<f64>);

impl ObserverErrorCovariance {
    /// Uncertainty of a fresh observer whose prior depth has standard deviation `depth_std`.
    pub fn initial(chi_hat: f64, depth_std: f64) -> Self {
        // dchi = -chi^2 dz
        let chi_std = depth_std * chi_hat * chi_hat;
        let mut m = Matrix3::zeros();
        m[(2, 2)] = chi_std * chi_std;
        Self(m)
    }

    /// Error-dynamics matrix at the given estimate.
    pub fn dynamics(gains: &DepthObserverGains, s: NormalizedFeature, chi_hat: f64, u: UnicycleInput) -> Matrix3<f64> {
        let omega = eval_dynamics(s, u, chi_hat).omega;
        let al = gains.alpha() * gains.lambda();
        let h = gains.h();
        Matrix3::new(
            -h[(0, 0)],
            -h[(0, 1)],
            omega.x,
            -h[(1, 0)],
            -h[(1, 1)],
            omega.y,
            -al * omega.x,
            -al * omega.y,
            2.0 * u.v_d * chi_hat + s.x * u.w_theta,
        )
    }

    pub fn propagate(
        &mut self,
        gains: &DepthObserverGains,
        s: NormalizedFeature,
        chi_hat: f64,
        u: UnicycleInput,
        dt: f64,
    ) {
        let phi = Matrix3::identity() + Self::dynamics(gains, s, chi_hat, u) * dt;
        let next = phi * self.0 * phi.transpose();
        self.0 = (next + next.transpose()) * 0.5;
    }

    pub fn chi_variance(&self) -> f64 {
        self.0[(2, 2)].max(0.0)
    }

    /// Variance of the depth `1 / chi_hat` to first order.
    pub fn depth_variance(&self, chi_hat: f64) -> f64 {
        self.chi_variance() / chi_hat.powi(4)
    }
}
