//! The two agents in separate threads, talking over loopback UDP. Each thread
//! steps its own copy of the (deterministic) world, so the only thing the
//! agents share is the datagrams.
//!
//! cargo run --release --example udp_agents [-- <port a> <port b>]

use std::thread;
use std::time::Duration;

use coloc::agent::{AgentConfig, AgentState, UdpTransport};
use coloc::geometry::SE2Pose;
use coloc::relpose::{Covariance3, RelPoseEkf};
use coloc::scenario::{preset, ScenarioConfig};
use coloc::sim::{observe, true_relative_pose, world_step, NoiseSource, WorldState};
use coloc::{AgentId, PointId};

fn agent_loop(cfg: ScenarioConfig, id: AgentId, mut link: UdpTransport) -> coloc::Result<Option<[f64; 3]>> {
    let points: Vec<_> = cfg.points.iter().map(|p| (PointId(p.id), p.camera_point())).collect();
    let robot_b = cfg.robot_b.clone().expect("two-robot scenario");
    let mut world = WorldState::from_camera_points(
        cfg.robot_a.initial_pose.to_pose(),
        robot_b.initial_pose.to_pose(),
        &points,
    )?;
    let policy = cfg.visibility.policy()?;
    let mut noise = NoiseSource::new(cfg.seed, 1, 0.0);

    let mut ac = AgentConfig::new(id);
    ac.gains = cfg.observer.gains()?;
    for p in &points {
        let z = world.camera_point(id, p.0)?.z_bar;
        ac.prior_depths.insert(p.0, z + cfg.observer.initial_depth_error_m);
    }
    let ekf = match (&cfg.ekf, id) {
        (Some(e), AgentId::A) => {
            let truth = true_relative_pose(&world, id);
            let off = e.initial_offset.to_pose();
            let start = SE2Pose::new(truth.x + off.x, truth.y + off.y, truth.theta + off.theta);
            Some(RelPoseEkf::new(start, Covariance3::from_diagonal(e.initial_covariance_diag()), e.noise()?))
        }
        _ => None,
    };
    let mut agent = AgentState::new(ac, ekf);

    let dt = cfg.dt();
    for k in 0..=cfg.steps() {
        let t = k as f64 * dt;
        let (u_a, u_b) = (cfg.robot_a.input_at(t), robot_b.input_at(t));
        let u = if id == AgentId::A { u_a } else { u_b };
        let meas = observe(&world, id, &mut noise, &policy);
        agent.agent_step(t, &meas, u, dt, &mut link)?;
        world = world_step(&world, u_a, u_b, dt);
    }
    let truth = true_relative_pose(&world, id);
    Ok(agent.ekf.map(|e| {
        [e.state.x - truth.x, e.state.y - truth.y, (e.state.theta - truth.theta).to_degrees()]
    }))
}

fn main() -> coloc::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<u16>().expect("port"));
    let (port_a, port_b) = (args.next().unwrap_or(0), args.next().unwrap_or(0));
    let wait = Duration::from_millis(50);
    let mut a = UdpTransport::bind(port_a, port_b)?.with_receive_wait(wait);
    let b = UdpTransport::bind(port_b, a.local_port()?)?.with_receive_wait(wait);
    a.set_peer_port(b.local_port()?);
    println!("A on {}, B on {}", a.local_port()?, b.local_port()?);

    let cfg = preset("relpose-gazebo")?;
    let cfg_b = cfg.clone();
    let handle_b = thread::spawn(move || agent_loop(cfg_b, AgentId::B, b));
    let err_a = agent_loop(cfg, AgentId::A, a)?;
    handle_b.join().expect("agent B thread")?;

    if let Some([x, y, th]) = err_a {
        println!("final error of A's estimate: ({x:+.4}, {y:+.4}) m, {th:+.3}°");
    }
    Ok(())
}
