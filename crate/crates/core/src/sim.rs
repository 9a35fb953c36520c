//! Ground-truth world: two unicycle robots, static points, and camera
//! measurements with optional Gaussian noise.
//!
//! World points are stored as a ground-plane position plus a vertical
//! offset measured downward (the camera `y` axis). Cameras sit at the
//! vehicle origin with zero height, so the vertical offset maps directly to
//! the camera `y_bar` coordinate.

use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    camera_to_planar, planar_to_camera, project, relative_pose, unicycle_step, CameraPoint,
    NormalizedFeature, PlanarPoint, SE2Pose, UnicycleInput,
};
use crate::{AgentId, PointId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldPoint {
    pub id: PointId,
    /// Ground-plane position in the inertial frame.
    pub ground: [f64; 2],
    /// Offset below the camera plane (camera `y_bar`).
    pub down: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub pose_a: SE2Pose,
    pub pose_b: SE2Pose,
    pub points: Vec<WorldPoint>,
    pub time: f64,
}

impl WorldState {
    /// Builds a world from points given in robot A's camera frame at `t = 0`.
    pub fn from_camera_points(
        pose_a: SE2Pose,
        pose_b: SE2Pose,
        points: &[(PointId, CameraPoint)],
    ) -> Result<Self> {
        let mut out = Vec::with_capacity(points.len());
        for &(id, p) in points {
            if out.iter().any(|w: &WorldPoint| w.id == id) {
                return Err(Error::config("points", format!("duplicate point id {}", id.0)));
            }
            let g = pose_a.transform_point(camera_to_planar(p).to_vector());
            out.push(WorldPoint {
                id,
                ground: [g.x, g.y],
                down: p.y_bar,
            });
        }
        Ok(Self {
            pose_a,
            pose_b,
            points: out,
            time: 0.0,
        })
    }

    pub fn pose(&self, agent: AgentId) -> SE2Pose {
        match agent {
            AgentId::A => self.pose_a,
            AgentId::B => self.pose_b,
        }
    }

    pub fn point(&self, id: PointId) -> Result<&WorldPoint> {
        self.points
            .iter()
            .find(|p| p.id == id)
            .ok_or(Error::UnknownPoint(id.0))
    }

    /// The point expressed in the given agent's camera frame.
    pub fn camera_point(&self, agent: AgentId, id: PointId) -> Result<CameraPoint> {
        let p = self.point(id)?;
        Ok(camera_point_of(&self.pose(agent), p))
    }
}

fn camera_point_of(pose: &SE2Pose, p: &WorldPoint) -> CameraPoint {
    let body = pose.inverse_transform_point(Vector2::new(p.ground[0], p.ground[1]));
    planar_to_camera(PlanarPoint::from_vector(body), p.down)
}

/// Advances both robots with exact arc integration.
pub fn world_step(world: &WorldState, u_a: UnicycleInput, u_b: UnicycleInput, dt: f64) -> WorldState {
    WorldState {
        pose_a: unicycle_step(world.pose_a, u_a, dt),
        pose_b: unicycle_step(world.pose_b, u_b, dt),
        points: world.points.clone(),
        time: world.time + dt,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    /// Std of additive noise on normalized coordinates.
    pub sigma_s: f64,
    /// Std of additive noise on both input channels.
    pub sigma_u: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            sigma_s: 0.0,
            sigma_u: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VisibilityPolicy {
    /// Half-angle of the (square) field of view, applied on both image axes.
    pub fov_half_angle: f64,
    pub min_depth: f64,
}

impl Default for VisibilityPolicy {
    fn default() -> Self {
        Self {
            fov_half_angle: 45f64.to_radians(),
            min_depth: 0.1,
        }
    }
}

impl VisibilityPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.fov_half_angle > 0.0 && self.fov_half_angle < std::f64::consts::FRAC_PI_2) {
            return Err(Error::config("visibility.fov_half_angle", "must be in (0, pi/2)"));
        }
        if !(self.min_depth > 0.0) {
            return Err(Error::config("visibility.min_depth", "must be > 0"));
        }
        Ok(())
    }

    pub fn is_visible(&self, p: &CameraPoint) -> bool {
        if !(p.z_bar >= self.min_depth) {
            return false;
        }
        // small slack so points placed exactly on the boundary stay visible
        let limit = self.fov_half_angle.tan() * (1.0 + 1e-12);
        (p.x_bar / p.z_bar).abs() <= limit && (p.y_bar / p.z_bar).abs() <= limit
    }
}

/// Seeded Gaussian noise source. One instance per consumer keeps streams independent.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    rng: ChaCha8Rng,
    sigma: f64,
}

impl NoiseSource {
    pub fn new(seed: u64, stream: u64, sigma: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, sigma }
    }

    pub fn sample(&mut self) -> f64 {
        if self.sigma == 0.0 {
            return 0.0;
        }
        // sigma validated non-negative and finite by the config layer
        Normal::new(0.0, self.sigma)
            .map(|n| n.sample(&mut self.rng))
            .unwrap_or(0.0)
    }

    pub fn perturb_input(&mut self, u: UnicycleInput) -> UnicycleInput {
        let dv = self.sample();
        let dw = self.sample();
        UnicycleInput::new(u.v_d + dv, u.w_theta + dw)
    }
}

/// Measurements for one agent, sorted by point id. Invisible points are omitted.
pub fn observe(
    world: &WorldState,
    agent: AgentId,
    noise: &mut NoiseSource,
    policy: &VisibilityPolicy,
) -> Vec<(PointId, NormalizedFeature)> {
    let pose = world.pose(agent);
    let mut ids: Vec<&WorldPoint> = world.points.iter().collect();
    ids.sort_by_key(|p| p.id);
    let mut out = Vec::new();
    for p in ids {
        let c = camera_point_of(&pose, p);
        if !policy.is_visible(&c) {
            continue;
        }
        let Ok(s) = project(c) else { continue };
        let nx = noise.sample();
        let ny = noise.sample();
        out.push((p.id, NormalizedFeature::new(s.x + nx, s.y + ny)));
    }
    out
}

/// True depth of a point for an agent and the true pose of the other agent in
/// this agent's frame.
pub fn ground_truth(world: &WorldState, id: PointId, agent: AgentId) -> Result<(f64, SE2Pose)> {
    let c = world.camera_point(agent, id)?;
    if c.z_bar <= 0.0 {
        return Err(Error::NotVisible(id.0));
    }
    Ok((c.z_bar, true_relative_pose(world, agent)))
}

/// Pose of the other robot expressed in `agent`'s body frame.
pub fn true_relative_pose(world: &WorldState, agent: AgentId) -> SE2Pose {
    match agent {
        AgentId::A => relative_pose(&world.pose_a, &world.pose_b),
        AgentId::B => relative_pose(&world.pose_b, &world.pose_a),
    }
}
