//! Oracles and check routines shared by the integration tests and the
//! acceptance suite. Ground truth here is computed from first principles
//! (trigonometry and hand-differentiated kinematics), never through the
//! crate's own projection or simulator code.

#![allow(dead_code)]

use std::f64::consts::PI;

use coloc::agent::{EstimateMessage, PointReport};
use coloc::depth::{observer_step, DepthObserverGains, DepthObserverState, InverseDepthBounds};
use coloc::geometry::{NormalizedFeature, SE2Pose, UnicycleInput};
use coloc::relpose::{
    innovation_position, innovation_velocity, relpose_dynamics, relpose_jacobian, Covariance3, NoiseConfig,
    PointEstimate, PointPairObservation, RelPoseEkf,
};
use coloc::scenario::PoseRecord;
use coloc::{AgentId, PointId};
use nalgebra::{Matrix2x3, Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn wrap(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// Inertial planar pose `(x, y, heading)`.
pub type Pose = (f64, f64, f64);

/// A ground point expressed in a robot's body frame (X forward, Y left).
pub fn body(pose: Pose, g: Vector2<f64>) -> Vector2<f64> {
    let (s, c) = pose.2.sin_cos();
    let d = g - Vector2::new(pose.0, pose.1);
    Vector2::new(c * d.x + s * d.y, -s * d.x + c * d.y)
}

/// What a perfectly converged observer reports for a ground point while the
/// robot drives with `u`, rates included.
pub fn exact_estimate(pose: Pose, g: Vector2<f64>, down: f64, u: UnicycleInput) -> Option<PointEstimate> {
    let m = body(pose, g);
    // camera x right (= -Y), y down, z forward (= X)
    let (x, y, z) = (-m.y, down, m.x);
    if z < 0.5 || (x / z).abs() > 2.0 || (y / z).abs() > 2.0 {
        return None;
    }
    // a static point seen from a unicycle: m_dot = -(v, 0) - w x m
    let (mx_dot, my_dot) = (-u.v_d + u.w_theta * m.y, -u.w_theta * m.x);
    let (x_dot, y_dot, z_dot) = (-my_dot, 0.0, mx_dot);
    Some(PointEstimate {
        s: NormalizedFeature::new(x / z, y / z),
        s_rate: Some(Vector2::new((x_dot * z - x * z_dot) / (z * z), (y_dot * z - y * z_dot) / (z * z))),
        chi: 1.0 / z,
        chi_rate: Some(-z_dot / (z * z)),
        timestamp: 0.0,
        depth_var: 0.0,
    })
}

/// Pose of B in A's frame.
pub fn true_xi(a: Pose, b: Pose) -> SE2Pose {
    let r = body(a, Vector2::new(b.0, b.1));
    SE2Pose::new(r.x, r.y, wrap(b.2 - a.2))
}

pub struct PairConfig {
    pub pose_a: Pose,
    pub pose_b: Pose,
    pub xi: SE2Pose,
    pub u_a: UnicycleInput,
    pub u_b: UnicycleInput,
    pub obs: Vec<PointPairObservation>,
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

/// Random two-robot layout with `n` points visible to both robots.
pub fn random_pair_config(rng: &mut ChaCha8Rng, n: usize) -> PairConfig {
    loop {
        let pose_a = (uniform(rng, -5.0, 5.0), uniform(rng, -5.0, 5.0), uniform(rng, -PI, PI));
        let pose_b = (
            pose_a.0 + uniform(rng, -4.0, 4.0),
            pose_a.1 + uniform(rng, -4.0, 4.0),
            wrap(pose_a.2 + uniform(rng, -1.2, 1.2)),
        );
        let u_a = UnicycleInput::new(uniform(rng, -0.3, 0.3), uniform(rng, -0.3, 0.3));
        let u_b = UnicycleInput::new(uniform(rng, -0.3, 0.3), uniform(rng, -0.3, 0.3));
        let mut obs = Vec::new();
        for attempt in 0..50 {
            if obs.len() == n {
                break;
            }
            let (range, bearing) = (uniform(rng, 2.0, 10.0), pose_a.2 + uniform(rng, -0.9, 0.9));
            let g = Vector2::new(pose_a.0 + range * bearing.cos(), pose_a.1 + range * bearing.sin());
            let down = uniform(rng, -1.0, 1.0);
            let (Some(a), Some(b)) = (
                exact_estimate(pose_a, g, down, u_a),
                exact_estimate(pose_b, g, down, u_b),
            ) else {
                continue;
            };
            obs.push(PointPairObservation {
                point_id: PointId(attempt + 1),
                a,
                b,
            });
        }
        if obs.len() == n {
            return PairConfig {
                pose_a,
                pose_b,
                xi: true_xi(pose_a, pose_b),
                u_a,
                u_b,
                obs,
            };
        }
    }
}

/// Largest residual component of both innovation models at ground truth.
pub fn ground_truth_residuals(samples: usize, seed: u64) -> (f64, f64) {
    let mut rng = rng(seed);
    let (mut pos, mut vel) = (0.0f64, 0.0f64);
    for _ in 0..samples {
        let c = random_pair_config(&mut rng, 2);
        for o in &c.obs {
            let p = innovation_position(&c.xi, o).unwrap().residual;
            let v = innovation_velocity(&c.xi, o, c.u_a, c.u_b).unwrap().residual;
            pos = pos.max(p.amax());
            vel = vel.max(v.amax());
        }
    }
    (pos, vel)
}

fn perturbed(xi: &SE2Pose, i: usize, h: f64) -> SE2Pose {
    let mut v = [xi.x, xi.y, xi.theta];
    v[i] += h;
    SE2Pose::new(v[0], v[1], v[2])
}

fn rel_err<const R: usize>(
    analytic: &nalgebra::SMatrix<f64, R, 3>,
    numeric: &nalgebra::SMatrix<f64, R, 3>,
) -> f64 {
    (analytic - numeric).norm() / analytic.norm().max(1e-12)
}

/// Worst relative Frobenius error of the process Jacobian and both measurement
/// Jacobians against central differences.
pub fn jacobian_errors(states: usize, seed: u64) -> [f64; 3] {
    let h = 1e-6;
    let mut rng = rng(seed);
    let mut worst = [0.0f64; 3];
    for _ in 0..states {
        let c = random_pair_config(&mut rng, 1);
        let xi = SE2Pose::new(
            c.xi.x + uniform(&mut rng, -1.0, 1.0),
            c.xi.y + uniform(&mut rng, -1.0, 1.0),
            c.xi.theta + uniform(&mut rng, -0.5, 0.5),
        );
        let o = &c.obs[0];

        let mut f_fd = Matrix3::zeros();
        let mut hp_fd = Matrix2x3::zeros();
        let mut hv_fd = Matrix2x3::zeros();
        for i in 0..3 {
            let (p, m) = (perturbed(&xi, i, h), perturbed(&xi, i, -h));
            f_fd.set_column(i, &((relpose_dynamics(&p, c.u_a, c.u_b) - relpose_dynamics(&m, c.u_a, c.u_b)) / (2.0 * h)));
            // residual y = z - h(xi), so dh/dxi = -dy/dxi
            let dp = innovation_position(&p, o).unwrap().residual - innovation_position(&m, o).unwrap().residual;
            hp_fd.set_column(i, &(-dp / (2.0 * h)));
            let dv = innovation_velocity(&p, o, c.u_a, c.u_b).unwrap().residual
                - innovation_velocity(&m, o, c.u_a, c.u_b).unwrap().residual;
            hv_fd.set_column(i, &(-dv / (2.0 * h)));
        }
        let f = relpose_jacobian(&xi, c.u_a, c.u_b);
        let hp = innovation_position(&xi, o).unwrap().jacobian;
        let hv = innovation_velocity(&xi, o, c.u_a, c.u_b).unwrap().jacobian;
        worst[0] = worst[0].max(rel_err(&f, &f_fd));
        worst[1] = worst[1].max(rel_err(&hp, &hp_fd));
        worst[2] = worst[2].max(rel_err(&hv, &hv_fd));
    }
    worst
}

/// Runs predict/update cycles on random geometry with noisy, occasionally
/// wild observations. Returns the smallest covariance eigenvalue and the
/// largest asymmetry seen.
pub fn covariance_health(cycles: usize, seed: u64) -> (f64, f64) {
    let mut rng = rng(seed);
    let p0 = Covariance3::from_diagonal(Vector3::new(2.25, 2.25, 15f64.to_radians().powi(2)));
    let mut ekf = RelPoseEkf::new(SE2Pose::new(1.0, -1.0, 0.3), p0, NoiseConfig::default());
    let (mut min_eig, mut max_asym) = (f64::INFINITY, 0.0f64);
    for k in 0..cycles {
        let mut c = random_pair_config(&mut rng, 2);
        for o in c.obs.iter_mut() {
            let scale = if k % 97 == 0 { 5.0 } else { 0.01 };
            o.b.s = NormalizedFeature::new(
                o.b.s.x + scale * uniform(&mut rng, -1.0, 1.0),
                o.b.s.y + scale * uniform(&mut rng, -1.0, 1.0),
            );
            o.a.depth_var = uniform(&mut rng, 0.0, 0.5);
            o.b.depth_var = uniform(&mut rng, 0.0, 0.5);
        }
        ekf.predict(c.u_a, c.u_b, 0.05).unwrap();
        // keep the state near the sampled truth so the geometry stays sensible
        if k % 50 == 0 {
            ekf.state = c.xi;
        }
        let _ = ekf.update_all(&c.obs, c.u_a, c.u_b);
        let p = ekf.covariance.matrix();
        min_eig = min_eig.min(ekf.covariance.min_eigenvalue());
        max_asym = max_asym.max((p - p.transpose()).amax());
    }
    (min_eig, max_asym)
}

/// Steps observers with adversarial inputs and counts steps whose inverse
/// depth left the bounds.
pub fn chi_bound_violations(steps: usize, seed: u64) -> usize {
    let mut rng = rng(seed);
    let bounds = InverseDepthBounds::default();
    let gains = DepthObserverGains::isotropic(2.5, 1.0, 120.0).unwrap();
    let mut violations = 0;
    let mut state = DepthObserverState::new(NormalizedFeature::new(0.5, 0.1), 5.0, gains, bounds).unwrap();
    for _ in 0..steps {
        let big = |r: &mut ChaCha8Rng| {
            let mag = 10f64.powf(uniform(r, -3.0, 4.0));
            if r.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        };
        let s = NormalizedFeature::new(big(&mut rng), big(&mut rng));
        let u = UnicycleInput::new(big(&mut rng), big(&mut rng));
        let dt = 10f64.powf(uniform(&mut rng, -4.0, 0.0));
        match observer_step(&state, s, u, dt) {
            Ok(out) => {
                if !bounds.contains(out.new_state.chi_hat) {
                    violations += 1;
                }
                state = out.new_state;
            }
            Err(_) => {
                state = DepthObserverState::new(NormalizedFeature::new(0.5, 0.1), 5.0, gains, bounds).unwrap();
            }
        }
        if !bounds.contains(state.chi_hat) {
            violations += 1;
        }
    }
    violations
}

/// Maxima over consecutive blocks of `block_s` seconds.
pub fn block_maxima(series: &[(f64, f64)], block_s: f64) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for &(t, v) in series {
        let b = (t / block_s + 1e-9).floor() as usize;
        if out.len() <= b {
            out.resize(b + 1, 0.0);
        }
        out[b] = out[b].max(v);
    }
    out
}

pub fn non_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] <= w[0])
}

/// Position (max abs component) and heading (degrees) error series.
pub fn pose_error_series(series: &[(f64, PoseRecord)]) -> (Vec<(f64, f64)>, Vec<(f64, f64)>) {
    (
        series.iter().map(|(t, p)| (*t, p.position_error())).collect(),
        series.iter().map(|(t, p)| (*t, p.error[2].abs().to_degrees())).collect(),
    )
}

/// Block maxima are non-increasing from their peak on. Returns the start
/// time of the peak block, or `None` if they rise again afterwards.
pub fn monotone_after_peak(series: &[(f64, f64)], block_s: f64) -> Option<f64> {
    let blocks = block_maxima(series, block_s);
    let peak = blocks
        .iter()
        .enumerate()
        .fold(0, |best, (i, v)| if *v > blocks[best] { i } else { best });
    non_increasing(&blocks[peak..]).then_some(peak as f64 * block_s)
}

/// Fixed message for the golden wire test.
pub fn golden_message() -> EstimateMessage {
    EstimateMessage::new(
        AgentId::B,
        42,
        2.1,
        UnicycleInput::new(0.08, -0.05),
        vec![
            PointReport {
                point_id: PointId(4),
                s: NormalizedFeature::new(0.93, 1.02),
                s_rate: Vector2::new(0.011, 0.019),
                chi: 0.21,
                chi_rate: 0.0043,
            },
            PointReport {
                point_id: PointId(1),
                s: NormalizedFeature::new(-0.25, 0.0),
                s_rate: Vector2::new(-0.5, 0.0),
                chi: 0.2,
                chi_rate: -1e-3,
            },
        ],
    )
}

/// Encoding of [`golden_message`], recorded once.
pub const GOLDEN_HEX: &str = concat!(
    "01012a00000000000000cdcccccccccc00407b14ae47e17ab43f9a9999999999",
    "a9bf0200000001000000000000000000d0bf0000000000000000000000000000",
    "e0bf00000000000000009a9999999999c93ffca9f1d24d6250bf04000000c3f5",
    "285c8fc2ed3f52b81e85eb51f03fba490c022b87863fdbf97e6abc74933fe17a",
    "14ae47e1ca3f22fdf675e09c713f"
);

pub fn from_hex(hex: &str) -> Vec<u8> {
    (0..hex.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&hex[i..i + 2], 16).expect("hex digit"))
        .collect()
}
