//! Planar and camera-frame geometry shared by the estimators and the simulator.
//!
//! Frame conventions:
//!
//! * camera frame: `x` right, `y` down, `z` forward along the optical axis;
//! * vehicle frame: `X` forward (camera `z`), `Y` left (camera `-x`).
//!
//! With these conventions a positive heading rate turns the vehicle
//! counter-clockwise, which corresponds to a camera angular velocity of
//! `-w_theta` around its `y` axis.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Heading rates below this magnitude are integrated with the straight-line limit.
pub const STRAIGHT_LINE_EPS: f64 = 1e-9;

/// Wraps an angle into `(-pi, pi]`. `-pi` maps to `+pi`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    // rem_euclid can return 2*pi for tiny negative inputs
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

/// Planar rotation by `angle` radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rot2 {
    pub angle: f64,
}

impl Rot2 {
    pub fn new(angle: f64) -> Self {
        Self { angle }
    }

    pub fn matrix(&self) -> Matrix2<f64> {
        let (s, c) = self.angle.sin_cos();
        Matrix2::new(c, -s, s, c)
    }

    pub fn inverse(&self) -> Self {
        Self::new(-self.angle)
    }

    pub fn apply(&self, v: Vector2<f64>) -> Vector2<f64> {
        let (s, c) = self.angle.sin_cos();
        Vector2::new(c * v.x - s * v.y, s * v.x + c * v.y)
    }

    /// Applies the transpose (inverse) rotation.
    pub fn apply_transpose(&self, v: Vector2<f64>) -> Vector2<f64> {
        let (s, c) = self.angle.sin_cos();
        Vector2::new(c * v.x + s * v.y, -s * v.x + c * v.y)
    }
}

/// Free-function form of [`Rot2::apply`].
pub fn rot2_apply(r: Rot2, v: Vector2<f64>) -> Vector2<f64> {
    r.apply(v)
}

/// The skew matrix `[[0, -a], [a, 0]]` such that `d/dt R(a) = R(a) S(a_dot)`.
pub fn skew_scalar(a_dot: f64) -> Matrix2<f64> {
    Matrix2::new(0.0, -a_dot, a_dot, 0.0)
}

/// Planar pose. `theta` is kept in `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SE2Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl SE2Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn identity() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn translation(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn rotation(&self) -> Rot2 {
        Rot2::new(self.theta)
    }

    /// `self ∘ other`: `other` expressed in the frame of `self`, mapped outward.
    pub fn compose(&self, other: &SE2Pose) -> SE2Pose {
        let t = self.translation() + self.rotation().apply(other.translation());
        SE2Pose::new(t.x, t.y, self.theta + other.theta)
    }

    pub fn inverse(&self) -> SE2Pose {
        let t = -self.rotation().apply_transpose(self.translation());
        SE2Pose::new(t.x, t.y, -self.theta)
    }

    /// Maps a point expressed in this pose's frame into the parent frame.
    pub fn transform_point(&self, p: Vector2<f64>) -> Vector2<f64> {
        self.translation() + self.rotation().apply(p)
    }

    /// Maps a parent-frame point into this pose's frame.
    pub fn inverse_transform_point(&self, p: Vector2<f64>) -> Vector2<f64> {
        self.rotation().apply_transpose(p - self.translation())
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }
}

/// A point in a camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPoint {
    pub x_bar: f64,
    pub y_bar: f64,
    pub z_bar: f64,
}

impl CameraPoint {
    pub fn new(x_bar: f64, y_bar: f64, z_bar: f64) -> Self {
        Self { x_bar, y_bar, z_bar }
    }
}

/// Normalized image coordinates `(x_bar / z_bar, y_bar / z_bar)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NormalizedFeature {
    pub x: f64,
    pub y: f64,
}

impl NormalizedFeature {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn from_vector(v: Vector2<f64>) -> Self {
        Self::new(v.x, v.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Unicycle command: forward speed along the optical axis and heading rate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UnicycleInput {
    pub v_d: f64,
    pub w_theta: f64,
}

impl UnicycleInput {
    pub fn new(v_d: f64, w_theta: f64) -> Self {
        Self { v_d, w_theta }
    }

    pub fn is_finite(&self) -> bool {
        self.v_d.is_finite() && self.w_theta.is_finite()
    }
}

/// Point in the vehicle's ground plane: `px` forward, `py` left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarPoint {
    pub px: f64,
    pub py: f64,
}

impl PlanarPoint {
    pub fn new(px: f64, py: f64) -> Self {
        Self { px, py }
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.px, self.py)
    }

    pub fn from_vector(v: Vector2<f64>) -> Self {
        Self::new(v.x, v.y)
    }
}

pub fn project(p: CameraPoint) -> Result<NormalizedFeature> {
    if p.z_bar.is_nan() || p.z_bar <= 0.0 {
        return Err(Error::NonPositiveDepth(p.z_bar));
    }
    Ok(NormalizedFeature::new(p.x_bar / p.z_bar, p.y_bar / p.z_bar))
}

pub fn unproject(s: NormalizedFeature, z_bar: f64) -> Result<CameraPoint> {
    if z_bar.is_nan() || z_bar <= 0.0 {
        return Err(Error::NonPositiveDepth(z_bar));
    }
    Ok(CameraPoint::new(s.x * z_bar, s.y * z_bar, z_bar))
}

/// Drops the vertical camera axis: `(px, py) = (z_bar, -x_bar)`.
pub fn camera_to_planar(p: CameraPoint) -> PlanarPoint {
    PlanarPoint::new(p.z_bar, -p.x_bar)
}

/// Inverse of [`camera_to_planar`] given the vertical coordinate.
pub fn planar_to_camera(m: PlanarPoint, y_bar: f64) -> CameraPoint {
    CameraPoint::new(-m.py, y_bar, m.px)
}

/// Exact integration of the unicycle model over `dt` with constant input.
pub fn unicycle_step(pose: SE2Pose, u: UnicycleInput, dt: f64) -> SE2Pose {
    let th = pose.theta;
    let w = u.w_theta;
    if w.abs() < STRAIGHT_LINE_EPS {
        let d = u.v_d * dt;
        let (s, c) = th.sin_cos();
        return SE2Pose::new(pose.x + d * c, pose.y + d * s, th + w * dt);
    }
    let th1 = th + w * dt;
    let k = u.v_d / w;
    SE2Pose::new(
        pose.x + k * (th1.sin() - th.sin()),
        pose.y - k * (th1.cos() - th.cos()),
        th1,
    )
}

/// Pose of `b` expressed in the frame of `a`.
pub fn relative_pose(a: &SE2Pose, b: &SE2Pose) -> SE2Pose {
    let r = a.rotation().apply_transpose(b.translation() - a.translation());
    SE2Pose::new(r.x, r.y, b.theta - a.theta)
}
