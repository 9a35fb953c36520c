//! Simulated counterpart of the physical two-robot run: both robots turn,
//! the filter starts 60 degrees off.
//!
//! cargo run --release --example experiment_params

use coloc::scenario::{preset, run, summarize};
use coloc::AgentId;

fn main() -> coloc::Result<()> {
    let report = run(&preset("experiment-params")?)?;
    let s = summarize(&report);
    for d in &s.depth {
        println!(
            "robot {} p{}: depth error {:+.3} -> {:+.4} m",
            d.agent, d.point_id.0, d.initial_error_m, d.final_error_m
        );
    }
    for (t, p) in report.pose_series(AgentId::A).iter().step_by(80) {
        println!("t {t:5.1}  |r error| {:.4} m  theta error {:+.3}°", p.position_error(), p.error[2].to_degrees());
    }
    Ok(())
}
