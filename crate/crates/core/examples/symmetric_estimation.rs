//! Both robots run a pose filter. A's estimate of B and B's estimate of A
//! should end up mutually inverse.
//!
//! cargo run --release --example symmetric_estimation

use coloc::scenario::{parse_value, preset, run, set_parameter};
use coloc::AgentId;

fn main() -> coloc::Result<()> {
    let cfg = set_parameter(&preset("relpose-gazebo")?, "ekf.estimators", parse_value("\"both\""))?;
    let report = run(&cfg)?;
    let a = report.pose_series(AgentId::A);
    let b = report.pose_series(AgentId::B);
    for ((t, pa), (_, pb)) in a.iter().zip(&b).step_by(100) {
        let loop_ = pa.estimate.compose(&pb.estimate);
        println!(
            "t {t:5.1}  A->B ({:+.3}, {:+.3}, {:+.2}°)  composed with B->A: ({:+.4}, {:+.4}, {:+.3}°)",
            pa.estimate.x,
            pa.estimate.y,
            pa.estimate.theta.to_degrees(),
            loop_.x,
            loop_.y,
            loop_.theta.to_degrees()
        );
    }
    Ok(())
}
