//! Per-agent estimation loop.
//!
//! Each step an agent
//!
//! 1. runs one depth observer per visible point,
//! 2. publishes an [`EstimateMessage`] with its input and per-point estimates,
//! 3. drains the transport and caches the newest peer message,
//! 4. if it carries a relative-pose filter: predicts with both inputs and,
//!    when a fresh peer message shares at least two points with the local
//!    estimates, applies one update per shared point.
//!
//! [`AgentState::publish`] covers 1–2 and [`AgentState::fuse`] covers 3–4,
//! so a lock-step harness can let both agents publish before either fuses.

pub mod transport;
pub mod wire;

use std::collections::BTreeMap;

use serde::Serialize;

use crate::depth::{
    observer_step, DepthObserverGains, DepthObserverState, InverseDepthBounds, Integrator, ObserverErrorCovariance,
};
use crate::error::{Error, Result};
use crate::geometry::{NormalizedFeature, UnicycleInput};
use crate::relpose::{PointEstimate, PointPairObservation, RelPoseEkf};
use crate::{AgentId, PointId};

pub use transport::{lossy_transport, InProcTransport, LinkStats, LossyTransport, Transport, UdpTransport};
pub use wire::{deserialize, serialize, EstimateMessage, PointReport, PROTOCOL_VERSION};

/// Minimum number of shared points before the pose filter is updated.
pub const MIN_SHARED_POINTS: usize = 2;

#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub id: AgentId,
    pub gains: DepthObserverGains,
    pub bounds: InverseDepthBounds,
    pub integrator: Integrator,
    /// Initial depth guess per point; points without one use `default_prior_depth`.
    pub prior_depths: BTreeMap<PointId, f64>,
    pub default_prior_depth: f64,
    /// Peer data older than this (relative to the local clock) is not fused.
    pub staleness_limit: f64,
    /// Extrapolate peer estimates to the local time with their transmitted rates.
    pub extrapolate_peer: bool,
    /// Standard deviation of the prior depth of a new point. Each observer's
    /// error covariance is propagated from it (see [`ObserverErrorCovariance`])
    /// and the resulting depth variance weights the pose update. The peer is
    /// assumed to run the same gains. Zero treats all depths as exact.
    pub depth_prior_std: f64,
}

impl AgentConfig {
    pub fn new(id: AgentId) -> Self {
        Self {
            id,
            gains: DepthObserverGains::default(),
            bounds: InverseDepthBounds::default(),
            integrator: Integrator::Euler,
            prior_depths: BTreeMap::new(),
            default_prior_depth: 5.0,
            staleness_limit: 0.2,
            extrapolate_peer: true,
            depth_prior_std: 1.0,
        }
    }
}

/// Longest Euler step used when replaying the peer's error covariance over a gap.
const MAX_REPLAY_STEP: f64 = 0.05;

/// The peer's observer error covariance for one point, replayed from its messages.
#[derive(Debug, Clone, Copy, PartialEq)]
struct PeerTrack {
    covariance: ObserverErrorCovariance,
    /// Estimate and input from the latest message, held until the next one.
    last: Option<(NormalizedFeature, f64, UnicycleInput)>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AgentCounters {
    pub messages_sent: u64,
    pub messages_received: u64,
    pub malformed: u64,
    /// Peer messages with seq not above the cached one.
    pub out_of_order: u64,
    pub stale_skips: u64,
    /// Fresh peer messages sharing fewer than the minimum number of points.
    pub insufficient_points: u64,
    pub fusion_cycles: u64,
}

/// Local per-point estimate at the time of the current step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalEstimate {
    pub point_id: PointId,
    pub measurement: NormalizedFeature,
    pub state: DepthObserverState,
    pub report: PointReport,
    /// Depth variance of the pre-step estimate.
    pub depth_var: f64,
}

#[derive(Debug)]
pub struct AgentState {
    pub config: AgentConfig,
    pub observers: BTreeMap<PointId, DepthObserverState>,
    pub latest_local: Option<EstimateMessage>,
    pub peer_cache: Option<EstimateMessage>,
    pub ekf: Option<RelPoseEkf>,
    pub counters: AgentCounters,
    /// Estimates produced this step (pre-step observer values).
    pub current: Vec<LocalEstimate>,
    local_uncertainty: BTreeMap<PointId, ObserverErrorCovariance>,
    peer_tracks: BTreeMap<PointId, PeerTrack>,
    peer_clock: Option<f64>,
    time: Option<f64>,
    pending_dt: Option<f64>,
    next_seq: u64,
    last_input: Option<UnicycleInput>,
    interval_input: Option<UnicycleInput>,
    /// Peer input in effect over the interval being predicted.
    peer_input: UnicycleInput,
    last_fused_seq: Option<u64>,
}

impl AgentState {
    pub fn new(config: AgentConfig, ekf: Option<RelPoseEkf>) -> Self {
        Self {
            config,
            observers: BTreeMap::new(),
            latest_local: None,
            peer_cache: None,
            ekf,
            counters: AgentCounters::default(),
            current: Vec::new(),
            local_uncertainty: BTreeMap::new(),
            peer_tracks: BTreeMap::new(),
            peer_clock: None,
            time: None,
            pending_dt: None,
            next_seq: 1,
            last_input: None,
            interval_input: None,
            peer_input: UnicycleInput::default(),
            last_fused_seq: None,
        }
    }

    pub fn id(&self) -> AgentId {
        self.config.id
    }

    pub fn time(&self) -> Option<f64> {
        self.time
    }

    /// Steps the observers with measurements taken at `time` and publishes
    /// the resulting estimates. `u` is the input applied over `[time, time + dt)`.
    pub fn publish<T: Transport + ?Sized>(
        &mut self,
        time: f64,
        measurements: &[(PointId, NormalizedFeature)],
        u: UnicycleInput,
        dt: f64,
        transport: &mut T,
    ) -> Result<()> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::NonFiniteInput("dt"));
        }
        let elapsed = self.time.map(|t| time - t);
        self.pending_dt = elapsed.filter(|e| *e > 0.0);
        self.time = Some(time);

        self.current.clear();
        for &(id, s) in measurements {
            let state = match self.observers.get(&id) {
                Some(st) => *st,
                None => {
                    let prior = self
                        .config
                        .prior_depths
                        .get(&id)
                        .copied()
                        .unwrap_or(self.config.default_prior_depth);
                    DepthObserverState::new(s, prior, self.config.gains, self.config.bounds)?
                        .with_integrator(self.config.integrator)
                }
            };
            let out = observer_step(&state, s, u, dt)?;
            self.observers.insert(id, out.new_state);
            let cov = self
                .local_uncertainty
                .entry(id)
                .or_insert_with(|| ObserverErrorCovariance::initial(state.chi_hat, self.config.depth_prior_std));
            let depth_var = cov.depth_variance(state.chi_hat);
            cov.propagate(&self.config.gains, s, state.chi_hat, u, dt);
            self.current.push(LocalEstimate {
                point_id: id,
                measurement: s,
                state,
                report: PointReport {
                    point_id: id,
                    s,
                    s_rate: out.s_hat_rate,
                    chi: state.chi_hat,
                    chi_rate: out.chi_hat_rate,
                },
                depth_var,
            });
        }
        self.current.sort_by_key(|e| e.point_id);

        let msg = EstimateMessage::new(
            self.config.id,
            self.next_seq,
            time,
            u,
            self.current.iter().map(|e| e.report).collect(),
        );
        self.next_seq += 1;
        transport.send(&wire::serialize(&msg))?;
        self.counters.messages_sent += 1;
        self.latest_local = Some(msg);

        // the EKF predicts over the interval that ended now, with the input
        // that was applied during it
        self.interval_input = self.last_input.replace(u);
        Ok(())
    }

    /// Drains the transport, then predicts and updates the pose filter.
    pub fn fuse<T: Transport + ?Sized>(&mut self, transport: &mut T) -> Result<()> {
        self.receive(transport)?;

        let Some(now) = self.time else {
            return Ok(());
        };
        let Some(mut ekf) = self.ekf.take() else {
            return Ok(());
        };
        let result = self.fuse_into(&mut ekf, now);
        self.ekf = Some(ekf);
        result
    }

    fn fuse_into(&mut self, ekf: &mut RelPoseEkf, now: f64) -> Result<()> {
        if let (Some(dt), Some(u_a)) = (self.pending_dt.take(), self.interval_input) {
            ekf.predict(u_a, self.peer_input, dt)?;
        }
        if let Some(peer) = &self.peer_cache {
            self.peer_input = peer.u;
        }

        let Some(peer) = self.peer_cache.as_ref() else {
            return Ok(());
        };
        if self.last_fused_seq.is_some_and(|s| peer.seq <= s) {
            return Ok(());
        }
        let age = now - peer.timestamp;
        if age.abs() > self.config.staleness_limit {
            self.counters.stale_skips += 1;
            self.last_fused_seq = Some(peer.seq);
            return Ok(());
        }
        let dt_peer = if self.config.extrapolate_peer { age } else { 0.0 };
        let peer_tracks = &self.peer_tracks;
        let observations: Vec<PointPairObservation> = self
            .current
            .iter()
            .filter_map(|local| {
                let p = peer.point(local.point_id)?;
                Some(PointPairObservation {
                    point_id: local.point_id,
                    a: PointEstimate {
                        s: local.report.s,
                        s_rate: Some(local.report.s_rate),
                        chi: local.report.chi,
                        chi_rate: Some(local.report.chi_rate),
                        timestamp: now,
                        depth_var: local.depth_var,
                    },
                    b: PointEstimate {
                        s: NormalizedFeature::from_vector(p.s.to_vector() + p.s_rate * dt_peer),
                        s_rate: Some(p.s_rate),
                        chi: self.config.bounds.clamp(p.chi + p.chi_rate * dt_peer),
                        chi_rate: Some(p.chi_rate),
                        timestamp: peer.timestamp,
                        depth_var: peer_tracks
                            .get(&local.point_id)
                            .map_or(0.0, |t| t.covariance.depth_variance(p.chi)),
                    },
                })
            })
            .collect();
        self.last_fused_seq = Some(peer.seq);
        if observations.len() < MIN_SHARED_POINTS {
            self.counters.insufficient_points += 1;
            return Ok(());
        }
        let u_a = self.last_input.unwrap_or_default();
        ekf.update_all(&observations, u_a, peer.u)?;
        self.counters.fusion_cycles += 1;
        Ok(())
    }

    fn receive<T: Transport + ?Sized>(&mut self, transport: &mut T) -> Result<()> {
        for datagram in transport.poll()? {
            self.counters.messages_received += 1;
            let msg = match wire::deserialize(&datagram) {
                Ok(m) => m,
                Err(e) => {
                    log::warn!("agent {:?}: dropping datagram: {e}", self.config.id);
                    self.counters.malformed += 1;
                    continue;
                }
            };
            if msg.agent_id == self.config.id {
                self.counters.malformed += 1;
                continue;
            }
            match &self.peer_cache {
                Some(cached) if msg.seq <= cached.seq => self.counters.out_of_order += 1,
                _ => {
                    self.track_peer_uncertainty(&msg);
                    self.peer_cache = Some(msg);
                }
            }
        }
        Ok(())
    }

    /// Replays the peer's error covariance over the gap since the previous
    /// accepted message, holding that message's values; lost messages widen the gap.
    fn track_peer_uncertainty(&mut self, msg: &EstimateMessage) {
        let gap = self.peer_clock.map_or(0.0, |t| (msg.timestamp - t).max(0.0));
        self.peer_clock = Some(msg.timestamp);
        // tolerance keeps a gap of exactly one replay step from splitting in two
        let steps = (gap / MAX_REPLAY_STEP - 1e-9).ceil().max(1.0);
        let h = gap / steps;
        for track in self.peer_tracks.values_mut() {
            if let Some((s, chi, u)) = track.last.take() {
                if h > 0.0 {
                    for _ in 0..steps as usize {
                        track.covariance.propagate(&self.config.gains, s, chi, u, h);
                    }
                }
            }
        }
        for p in &msg.points {
            let std = self.config.depth_prior_std;
            let track = self.peer_tracks.entry(p.point_id).or_insert_with(|| PeerTrack {
                covariance: ObserverErrorCovariance::initial(p.chi, std),
                last: None,
            });
            track.last = Some((p.s, p.chi, msg.u));
        }
    }

    /// Depth variance of this agent's estimate of a point (pre-step).
    pub fn local_depth_variance(&self, id: PointId) -> Option<f64> {
        self.current.iter().find(|e| e.point_id == id).map(|e| e.depth_var)
    }

    /// Depth variance of the peer's latest estimate of a point.
    pub fn peer_depth_variance(&self, id: PointId) -> Option<f64> {
        let chi = self.peer_cache.as_ref()?.point(id)?.chi;
        Some(self.peer_tracks.get(&id)?.covariance.depth_variance(chi))
    }

    /// Full step: [`publish`](Self::publish) followed by [`fuse`](Self::fuse).
    pub fn agent_step<T: Transport + ?Sized>(
        &mut self,
        time: f64,
        measurements: &[(PointId, NormalizedFeature)],
        u: UnicycleInput,
        dt: f64,
        transport: &mut T,
    ) -> Result<()> {
        self.publish(time, measurements, u, dt, transport)?;
        self.fuse(transport)
    }
}

#[cfg(test)]
mod tests {
    use nalgebra::{Vector2, Vector3};

    use super::*;
    use crate::geometry::SE2Pose;
    use crate::relpose::{Covariance3, NoiseConfig};

    const DT: f64 = 0.05;

    fn ekf() -> RelPoseEkf {
        let p0 = Covariance3::from_diagonal(Vector3::new(0.1, 0.1, 0.01));
        RelPoseEkf::new(SE2Pose::new(2.0, 1.0, 0.2), p0, NoiseConfig::default())
    }

    fn agent_a(with_ekf: bool) -> AgentState {
        AgentState::new(AgentConfig::new(AgentId::A), with_ekf.then(ekf))
    }

    fn feats(ids: &[u32]) -> Vec<(PointId, NormalizedFeature)> {
        ids.iter()
            .map(|&i| (PointId(i), NormalizedFeature::new(0.1 * i as f64, 0.05)))
            .collect()
    }

    fn peer_msg(seq: u64, timestamp: f64, ids: &[u32]) -> Vec<u8> {
        let points = ids
            .iter()
            .map(|&i| PointReport {
                point_id: PointId(i),
                s: NormalizedFeature::new(-0.1 * i as f64, 0.05),
                s_rate: Vector2::zeros(),
                chi: 0.2,
                chi_rate: 0.0,
            })
            .collect();
        serialize(&EstimateMessage::new(AgentId::B, seq, timestamp, UnicycleInput::new(0.1, 0.0), points))
    }

    #[test]
    fn seq_strictly_increases() {
        let (mut mine, mut peer) = InProcTransport::pair();
        let mut a = agent_a(false);
        for k in 0..5 {
            a.agent_step(k as f64 * DT, &feats(&[1, 2]), UnicycleInput::new(0.1, 0.0), DT, &mut mine)
                .unwrap();
        }
        let seqs: Vec<u64> = peer.poll().unwrap().iter().map(|d| deserialize(d).unwrap().seq).collect();
        assert_eq!(seqs, vec![1, 2, 3, 4, 5]);
        assert_eq!(a.counters.messages_sent, 5);
    }

    #[test]
    fn dead_reckoning_without_peer() {
        let (mut mine, _peer) = InProcTransport::pair();
        let mut a = agent_a(true);
        let u = UnicycleInput::new(0.1, 0.05);
        let mut oracle = ekf();
        let mut traces = Vec::new();
        for k in 0..100 {
            a.agent_step(k as f64 * DT, &feats(&[1, 2]), u, DT, &mut mine).unwrap();
            if k > 0 {
                // peer input unknown: treated as zero
                let elapsed = k as f64 * DT - (k - 1) as f64 * DT;
                oracle.predict(u, UnicycleInput::default(), elapsed).unwrap();
            }
            traces.push(a.ekf.as_ref().unwrap().covariance.trace());
        }
        let e = a.ekf.as_ref().unwrap();
        assert_eq!(e.state, oracle.state);
        assert_eq!(e.stats.updates, 0);
        assert_eq!(e.stats.predictions, 99);
        assert!(traces.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(a.counters.fusion_cycles, 0);
    }

    #[test]
    fn stale_peer_message_is_cached_but_not_fused() {
        let (mut mine, mut peer) = InProcTransport::pair();
        let mut a = agent_a(true);
        a.agent_step(0.0, &feats(&[1, 2]), UnicycleInput::default(), DT, &mut mine).unwrap();
        peer.send(&peer_msg(1, 0.5 - 0.25, &[1, 2])).unwrap();
        a.agent_step(0.5, &feats(&[1, 2]), UnicycleInput::default(), DT, &mut mine).unwrap();
        assert_eq!(a.peer_cache.as_ref().unwrap().seq, 1);
        assert_eq!(a.counters.stale_skips, 1);
        assert_eq!(a.ekf.as_ref().unwrap().stats.updates, 0);

        peer.send(&peer_msg(2, 0.55, &[1, 2])).unwrap();
        a.agent_step(0.55, &feats(&[1, 2]), UnicycleInput::default(), DT, &mut mine).unwrap();
        assert_eq!(a.counters.fusion_cycles, 1);
        assert_eq!(a.ekf.as_ref().unwrap().stats.updates + a.ekf.as_ref().unwrap().stats.rejections, 2);
    }

    #[test]
    fn older_seq_never_replaces_cache() {
        let (mut mine, mut peer) = InProcTransport::pair();
        let mut a = agent_a(true);
        peer.send(&peer_msg(5, 0.0, &[1, 2])).unwrap();
        peer.send(&peer_msg(3, 0.0, &[1, 2, 3])).unwrap();
        peer.send(&peer_msg(5, 0.0, &[1])).unwrap();
        a.agent_step(0.0, &feats(&[1, 2, 3]), UnicycleInput::default(), DT, &mut mine).unwrap();
        let cached = a.peer_cache.as_ref().unwrap();
        assert_eq!((cached.seq, cached.points.len()), (5, 2));
        assert_eq!(a.counters.out_of_order, 2);
        assert_eq!(a.counters.fusion_cycles, 1);

        // same message is not fused twice
        a.agent_step(DT, &feats(&[1, 2, 3]), UnicycleInput::default(), DT, &mut mine).unwrap();
        assert_eq!(a.counters.fusion_cycles, 1);
    }

    #[test]
    fn one_shared_point_is_not_enough() {
        let (mut mine, mut peer) = InProcTransport::pair();
        let mut a = agent_a(true);
        peer.send(&peer_msg(1, 0.0, &[1, 7])).unwrap();
        a.agent_step(0.0, &feats(&[1, 2]), UnicycleInput::default(), DT, &mut mine).unwrap();
        assert_eq!(a.counters.insufficient_points, 1);
        assert_eq!(a.ekf.as_ref().unwrap().stats.updates, 0);
    }

    #[test]
    fn malformed_and_echoed_datagrams_are_counted() {
        let (mut mine, mut peer) = InProcTransport::pair();
        let mut a = agent_a(false);
        peer.send(&[1, 2, 3]).unwrap();
        let mut own = deserialize(&peer_msg(1, 0.0, &[1])).unwrap();
        own.agent_id = AgentId::A;
        peer.send(&serialize(&own)).unwrap();
        a.agent_step(0.0, &feats(&[1]), UnicycleInput::default(), DT, &mut mine).unwrap();
        assert_eq!(a.counters.messages_received, 2);
        assert_eq!(a.counters.malformed, 2);
        assert!(a.peer_cache.is_none());
    }

    #[test]
    fn missing_points_skip_their_observers() {
        let (mut mine, _peer) = InProcTransport::pair();
        let mut a = agent_a(false);
        a.agent_step(0.0, &feats(&[1, 2]), UnicycleInput::new(0.1, 0.0), DT, &mut mine).unwrap();
        let frozen = a.observers[&PointId(2)];
        a.agent_step(DT, &feats(&[1]), UnicycleInput::new(0.1, 0.0), DT, &mut mine).unwrap();
        assert_eq!(a.observers[&PointId(2)], frozen);
        assert_eq!(a.current.len(), 1);
        assert_eq!(a.latest_local.as_ref().unwrap().points.len(), 1);
    }

    #[test]
    fn rejects_non_positive_dt() {
        let (mut mine, _peer) = InProcTransport::pair();
        let mut a = agent_a(false);
        assert!(a.agent_step(0.0, &feats(&[1]), UnicycleInput::default(), 0.0, &mut mine).is_err());
    }

    #[test]
    fn peer_uncertainty_matches_local_replay() {
        // B's own depth variance and A's replay of it from B's messages agree
        let (mut ta, mut tb) = InProcTransport::pair();
        let mut a = agent_a(false);
        let mut b = AgentState::new(AgentConfig::new(AgentId::B), None);
        let u = UnicycleInput::new(0.1, 0.0);
        let mut prior_b = None;
        for k in 0..200 {
            let t = k as f64 * DT;
            // point (3, 0.3, 6) approached head-on; prior depth is 5
            let z = 6.0 - u.v_d * t;
            let s = NormalizedFeature::new(3.0 / z, 0.3 / z);
            b.publish(t, &[(PointId(3), s)], u, DT, &mut tb).unwrap();
            a.publish(t, &[], u, DT, &mut ta).unwrap();
            a.fuse(&mut ta).unwrap();
            let replay = a.peer_depth_variance(PointId(3)).unwrap();
            let own = b.local_depth_variance(PointId(3)).unwrap();
            assert!((replay - own).abs() <= 1e-9 * own.max(1e-12), "step {k}: {replay} vs {own}");
            prior_b.get_or_insert(own);
        }
        // excitation has shrunk the variance
        assert!(b.local_depth_variance(PointId(3)).unwrap() < 0.1 * prior_b.unwrap());
    }
}
