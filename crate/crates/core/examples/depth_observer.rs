//! One inverse-depth observer tracking a single point while the robot drives
//! straight at it, next to the error covariance that predicts its accuracy.
//!
//! cargo run --example depth_observer

use coloc::depth::{observer_step, DepthObserverGains, DepthObserverState, InverseDepthBounds, ObserverErrorCovariance};
use coloc::geometry::{project, CameraPoint, UnicycleInput};

fn main() -> coloc::Result<()> {
    let dt = 0.05;
    let u = UnicycleInput::new(0.1, 0.0);
    let gains = DepthObserverGains::isotropic(2.5, 1.0, 120.0)?;
    // point 2 m right of the optical axis, 0.5 m below, 6 m ahead
    let (x, y, z0) = (2.0, 0.5, 6.0);

    let s0 = project(CameraPoint::new(x, y, z0))?;
    let mut obs = DepthObserverState::new(s0, z0 + 1.0, gains, InverseDepthBounds::default())?;
    let mut cov = ObserverErrorCovariance::initial(obs.chi_hat, 1.0);

    println!("{:>6} {:>8} {:>8} {:>9} {:>8}", "t", "z_true", "z_est", "error", "std");
    for k in 0..=400 {
        let t = k as f64 * dt;
        let z = z0 - u.v_d * t;
        let s = project(CameraPoint::new(x, y, z))?;
        if k % 40 == 0 {
            let est = obs.depth_estimate();
            let std = cov.depth_variance(obs.chi_hat).sqrt();
            println!("{t:6.1} {z:8.3} {est:8.3} {:+9.4} {std:8.4}", est - z);
        }
        cov.propagate(&gains, s, obs.chi_hat, u, dt);
        obs = observer_step(&obs, s, u, dt)?.new_state;
    }
    Ok(())
}
