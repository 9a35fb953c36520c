//! Lock-step execution of a scenario.

use std::collections::BTreeMap;
use std::time::Duration;

use rayon::prelude::*;
use serde::Serialize;

use crate::agent::{AgentConfig, AgentCounters, AgentState, InProcTransport, LinkStats, LossyTransport, Transport, UdpTransport};
use crate::depth::{pe_excitation, ExcitationWindow};
use crate::error::Result;
use crate::geometry::{wrap_angle, SE2Pose};
use crate::relpose::{Covariance3, EkfStats, RelPoseEkf};
use crate::sim::{observe, true_relative_pose, world_step, NoiseSource, WorldState};
use crate::{AgentId, PointId};

use super::config::{set_parameter, Estimators, ScenarioConfig, TransportKind};

/// How long a lock-step UDP poll waits for the peer's datagram.
const UDP_RECEIVE_WAIT: Duration = Duration::from_millis(20);

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DepthRecord {
    pub agent: AgentId,
    pub point_id: PointId,
    pub z_true: f64,
    pub z_est: f64,
    /// `z_est - z_true`.
    pub error: f64,
    /// Depth standard deviation from the observer's error covariance.
    pub depth_std: f64,
    /// Instantaneous excitation `|Omega|^2`.
    pub pe: f64,
    /// Excitation integrated over the configured window.
    pub pe_window: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoseRecord {
    pub estimate: SE2Pose,
    pub truth: SE2Pose,
    /// `estimate - truth`, heading wrapped.
    pub error: [f64; 3],
    pub covariance_trace: f64,
    pub updates: u64,
    pub rejections: u64,
}

impl PoseRecord {
    pub fn position_error(&self) -> f64 {
        self.error[0].abs().max(self.error[1].abs())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    pub depth: Vec<DepthRecord>,
    /// True pose of B in A's frame (absent without a second robot).
    pub truth: Option<SE2Pose>,
    pub pose_a: Option<PoseRecord>,
    pub pose_b: Option<PoseRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AgentRunStats {
    pub agent: AgentId,
    pub counters: AgentCounters,
    pub link: LinkStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ekf: Option<EkfStats>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub config: ScenarioConfig,
    pub records: Vec<StepRecord>,
    pub agents: Vec<AgentRunStats>,
}

impl RunReport {
    /// Depth error series `(time, z_true, error)` of one point seen by one agent.
    pub fn depth_series(&self, agent: AgentId, id: PointId) -> Vec<(f64, f64, f64)> {
        self.records
            .iter()
            .flat_map(|r| {
                r.depth
                    .iter()
                    .filter(move |d| d.agent == agent && d.point_id == id)
                    .map(move |d| (r.time, d.z_true, d.error))
            })
            .collect()
    }

    /// Pose records of the filter run by `agent`.
    pub fn pose_series(&self, agent: AgentId) -> Vec<(f64, PoseRecord)> {
        self.records
            .iter()
            .filter_map(|r| {
                let p = match agent {
                    AgentId::A => r.pose_a,
                    AgentId::B => r.pose_b,
                }?;
                Some((r.time, p))
            })
            .collect()
    }
}

type Link = LossyTransport<Box<dyn Transport + Send>>;

fn make_links(cfg: &ScenarioConfig) -> Result<(Link, Link)> {
    let t = &cfg.transport;
    let (a, b): (Box<dyn Transport + Send>, Box<dyn Transport + Send>) = match t.kind {
        TransportKind::Inproc => {
            let (a, b) = InProcTransport::pair();
            (Box::new(a), Box::new(b))
        }
        TransportKind::Udp => {
            let mut a = UdpTransport::bind(t.port_a, t.port_b)?.with_receive_wait(UDP_RECEIVE_WAIT);
            let b = UdpTransport::bind(t.port_b, a.local_port()?)?.with_receive_wait(UDP_RECEIVE_WAIT);
            a.set_peer_port(b.local_port()?);
            (Box::new(a), Box::new(b))
        }
    };
    let seed = cfg.seed ^ 0x6c69_6e6b;
    Ok((
        LossyTransport::new(a, t.loss_rate, t.delay_steps, seed)?,
        LossyTransport::new(b, t.loss_rate, t.delay_steps, seed.wrapping_add(1))?,
    ))
}

fn make_agent(cfg: &ScenarioConfig, world: &WorldState, id: AgentId) -> Result<AgentState> {
    let mut ac = AgentConfig::new(id);
    ac.gains = cfg.observer.gains()?;
    ac.bounds = cfg.observer.bounds()?;
    ac.integrator = cfg.observer.integrator.into();
    let ekf = match &cfg.ekf {
        Some(e) if id == AgentId::A || e.estimators == Estimators::Both => {
            ac.staleness_limit = e.staleness_limit_s;
            ac.extrapolate_peer = e.extrapolate_peer;
            ac.depth_prior_std = e.depth_prior_std_m;
            let truth = true_relative_pose(world, id);
            let off = e.initial_offset.to_pose();
            let start = SE2Pose::new(truth.x + off.x, truth.y + off.y, truth.theta + off.theta);
            let p0 = Covariance3::from_diagonal(e.initial_covariance_diag());
            Some(
                RelPoseEkf::new(start, p0, e.noise()?)
                    .with_model(e.innovation.into())
                    .with_reinflation(e.reinflate_after),
            )
        }
        _ => None,
    };
    Ok(AgentState::new(ac, ekf))
}

fn pose_record(agent: &AgentState, truth: SE2Pose) -> Option<PoseRecord> {
    let ekf = agent.ekf.as_ref()?;
    let est = ekf.state;
    Some(PoseRecord {
        estimate: est,
        truth,
        error: [est.x - truth.x, est.y - truth.y, wrap_angle(est.theta - truth.theta)],
        covariance_trace: ekf.covariance.trace(),
        updates: ekf.stats.updates,
        rejections: ekf.stats.rejections,
    })
}

struct Side {
    id: AgentId,
    agent: AgentState,
    link: Link,
    meas_noise: NoiseSource,
    input_noise: NoiseSource,
    windows: BTreeMap<PointId, ExcitationWindow>,
}

/// Runs one scenario to completion. Records are taken at every step
/// including `t = 0` and `t = duration`.
pub fn run(cfg: &ScenarioConfig) -> Result<RunReport> {
    cfg.validate()?;
    let dt = cfg.dt();
    let steps = cfg.steps();
    let policy = cfg.visibility.policy()?;
    let pose_a = cfg.robot_a.initial_pose.to_pose();
    let robot_b = cfg.robot_b.as_ref();
    // without a second robot, B is parked at A's start and never observes
    let pose_b = robot_b.map(|b| b.initial_pose.to_pose()).unwrap_or(pose_a);
    let points: Vec<(PointId, _)> = cfg.points.iter().map(|p| (PointId(p.id), p.camera_point())).collect();
    let mut world = WorldState::from_camera_points(pose_a, pose_b, &points)?;

    let depth_error: BTreeMap<PointId, f64> = cfg
        .points
        .iter()
        .map(|p| {
            (
                PointId(p.id),
                p.initial_depth_error_m.unwrap_or(cfg.observer.initial_depth_error_m),
            )
        })
        .collect();

    let (link_a, link_b) = make_links(cfg)?;
    let mut sides = vec![Side {
        id: AgentId::A,
        agent: make_agent(cfg, &world, AgentId::A)?,
        link: link_a,
        meas_noise: NoiseSource::new(cfg.seed, 1, cfg.noise.sigma_s),
        input_noise: NoiseSource::new(cfg.seed, 3, cfg.noise.sigma_u),
        windows: BTreeMap::new(),
    }];
    if robot_b.is_some() {
        sides.push(Side {
            id: AgentId::B,
            agent: make_agent(cfg, &world, AgentId::B)?,
            link: link_b,
            meas_noise: NoiseSource::new(cfg.seed, 2, cfg.noise.sigma_s),
            input_noise: NoiseSource::new(cfg.seed, 4, cfg.noise.sigma_u),
            windows: BTreeMap::new(),
        });
    }

    let mut records = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 * dt;
        let u_a = cfg.robot_a.input_at(t);
        let u_b = robot_b.map(|b| b.input_at(t)).unwrap_or_default();

        let mut reported = Vec::with_capacity(sides.len());
        for side in sides.iter_mut() {
            let u = if side.id == AgentId::A { u_a } else { u_b };
            let meas = observe(&world, side.id, &mut side.meas_noise, &policy);
            for (id, _) in &meas {
                if side.agent.observers.contains_key(id) {
                    continue;
                }
                let z = world.camera_point(side.id, *id)?.z_bar;
                let err = depth_error.get(id).copied().unwrap_or(0.0);
                let prior = (z + err).max(1.0 / cfg.observer.chi_max);
                side.agent.config.prior_depths.insert(*id, prior);
            }
            let u_rep = side.input_noise.perturb_input(u);
            side.agent.publish(t, &meas, u_rep, dt, &mut side.link)?;
            reported.push(u_rep);
        }
        for side in sides.iter_mut() {
            side.agent.fuse(&mut side.link)?;
        }

        let mut depth = Vec::new();
        for (side, u_rep) in sides.iter_mut().zip(&reported) {
            for est in &side.agent.current {
                let z_true = world.camera_point(side.id, est.point_id)?.z_bar;
                let z_est = est.state.depth_estimate();
                let pe = pe_excitation(est.measurement, *u_rep);
                let window = side
                    .windows
                    .entry(est.point_id)
                    .or_insert_with(|| ExcitationWindow::new(cfg.metrics.pe_window_s, dt));
                window.push(est.measurement, *u_rep);
                depth.push(DepthRecord {
                    agent: side.id,
                    point_id: est.point_id,
                    z_true,
                    z_est,
                    error: z_est - z_true,
                    depth_std: est.depth_var.sqrt(),
                    pe,
                    pe_window: window.integral(),
                });
            }
        }
        let has_b = robot_b.is_some();
        let truth = has_b.then(|| true_relative_pose(&world, AgentId::A));
        let pose_a = pose_record(&sides[0].agent, true_relative_pose(&world, AgentId::A));
        let pose_b = sides
            .get(1)
            .and_then(|s| pose_record(&s.agent, true_relative_pose(&world, AgentId::B)));
        records.push(StepRecord {
            step: k,
            time: t,
            depth,
            truth,
            pose_a,
            pose_b,
        });

        if k < steps {
            world = world_step(&world, u_a, u_b, dt);
        }
    }

    let agents = sides
        .iter()
        .map(|s| AgentRunStats {
            agent: s.id,
            counters: s.agent.counters,
            link: s.link.stats,
            ekf: s.agent.ekf.as_ref().map(|e| e.stats),
        })
        .collect();
    Ok(RunReport {
        config: cfg.clone(),
        records,
        agents,
    })
}

/// One run per value of the parameter at `path`, in parallel. Every run uses
/// the base config's seed.
pub fn sweep(cfg: &ScenarioConfig, path: &str, values: &[toml::Value]) -> Result<Vec<RunReport>> {
    let configs = values
        .iter()
        .map(|v| set_parameter(cfg, path, v.clone()))
        .collect::<Result<Vec<_>>>()?;
    if configs.iter().any(|c| c.transport.kind == TransportKind::Udp && (c.transport.port_a != 0 || c.transport.port_b != 0)) {
        // fixed ports cannot be shared by concurrent runs
        return configs.iter().map(run).collect();
    }
    configs.par_iter().map(run).collect()
}
