//! Robot A estimates the pose of robot B from shared depth estimates of two
//! points, starting 1.5 m and 15 degrees off.
//!
//! cargo run --release --example relative_pose

use coloc::scenario::{preset, run, summarize};
use coloc::AgentId;

fn main() -> coloc::Result<()> {
    let report = run(&preset("relpose-gazebo")?)?;
    println!("{:>6} {:>9} {:>9} {:>10} {:>10}", "t", "err x", "err y", "err theta", "trace P");
    for (t, p) in report.pose_series(AgentId::A).iter().step_by(40) {
        println!(
            "{t:6.1} {:+9.4} {:+9.4} {:+9.3}° {:10.2e}",
            p.error[0],
            p.error[1],
            p.error[2].to_degrees(),
            p.covariance_trace
        );
    }
    let s = summarize(&report);
    let pose = s.relpose(AgentId::A).expect("A runs a filter");
    println!(
        "converged (0.1 m, 2°) at {:?} s; {} updates, {} rejected",
        pose.convergence_time_s, pose.updates, pose.rejections
    );
    Ok(())
}
