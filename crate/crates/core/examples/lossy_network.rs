//! The relative-pose scenario over a link that drops and delays messages,
//! compared with the lossless run.
//!
//! cargo run --release --example lossy_network [-- <loss rate> <delay steps>]

use coloc::scenario::{preset, run, summarize};
use coloc::AgentId;

fn main() -> coloc::Result<()> {
    let mut args = std::env::args().skip(1);
    let loss: f64 = args.next().map_or(0.1, |a| a.parse().expect("loss rate"));
    let delay: u64 = args.next().map_or(2, |a| a.parse().expect("delay steps"));

    for (label, loss, delay) in [("lossless", 0.0, 0), ("lossy", loss, delay)] {
        let mut cfg = preset("relpose-gazebo")?;
        cfg.transport.loss_rate = loss;
        cfg.transport.delay_steps = delay;
        let s = summarize(&run(&cfg)?);
        let pose = s.relpose(AgentId::A).expect("A runs a filter");
        let a = &s.agents[0];
        println!(
            "{label:<9} loss {loss:.2} delay {delay}: B->A delivered {}/{}, stale {}, \
             converged {:?} s, final ({:+.3}, {:+.3}) m {:+.2}°",
            s.agents[1].link.sent - s.agents[1].link.dropped,
            s.agents[1].link.sent,
            a.counters.stale_skips,
            pose.convergence_time_s,
            pose.final_error_x_m,
            pose.final_error_y_m,
            pose.final_error_theta_deg
        );
    }
    Ok(())
}
