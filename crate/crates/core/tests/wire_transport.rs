mod common;

use coloc::agent::{
    deserialize, lossy_transport, serialize, EstimateMessage, InProcTransport, LossyTransport, PointReport, Transport,
};
use coloc::geometry::{NormalizedFeature, UnicycleInput};
use coloc::{AgentId, PointId};
use nalgebra::Vector2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn finite() -> impl Strategy<Value = f64> {
    prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO
}

fn point() -> impl Strategy<Value = PointReport> {
    (any::<u32>(), finite(), finite(), finite(), finite(), finite(), finite()).prop_map(|(id, sx, sy, rx, ry, c, cr)| {
        PointReport {
            point_id: PointId(id),
            s: NormalizedFeature::new(sx, sy),
            s_rate: Vector2::new(rx, ry),
            chi: c,
            chi_rate: cr,
        }
    })
}

fn message() -> impl Strategy<Value = EstimateMessage> {
    (any::<bool>(), any::<u64>(), finite(), finite(), finite(), prop::collection::vec(point(), 0..8)).prop_map(
        |(b, seq, t, v, w, mut points)| {
            points.sort_by_key(|p| p.point_id);
            points.dedup_by_key(|p| p.point_id);
            EstimateMessage::new(if b { AgentId::B } else { AgentId::A }, seq, t, UnicycleInput::new(v, w), points)
        },
    )
}

fn bits(m: &EstimateMessage) -> Vec<u64> {
    let mut out = vec![m.seq, m.timestamp.to_bits(), m.u.v_d.to_bits(), m.u.w_theta.to_bits()];
    for p in &m.points {
        out.push(p.point_id.0 as u64);
        out.extend([p.s.x, p.s.y, p.s_rate.x, p.s_rate.y, p.chi, p.chi_rate].map(f64::to_bits));
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn round_trip_is_bit_exact(m in message()) {
        let bytes = serialize(&m);
        let back = deserialize(&bytes).unwrap();
        prop_assert_eq!(bits(&back), bits(&m));
        prop_assert_eq!(back.agent_id, m.agent_id);
        prop_assert_eq!(back.protocol_version, m.protocol_version);
        prop_assert_eq!(serialize(&back), bytes);
    }
}

#[test]
fn golden_bytes_decode_to_the_fixed_message() {
    let golden = common::from_hex(common::GOLDEN_HEX);
    let msg = common::golden_message();
    assert_eq!(deserialize(&golden).unwrap(), msg);
    assert_eq!(serialize(&msg), golden);
}

#[test]
fn truncated_golden_is_rejected_at_every_length() {
    let golden = common::from_hex(common::GOLDEN_HEX);
    for n in 0..golden.len() {
        assert!(deserialize(&golden[..n]).is_err(), "length {n}");
    }
}

#[test]
fn loss_count_replays_from_the_seed() {
    let (n, eps, seed) = (5000u64, 0.05, 99);
    let loss = 1.0 - eps;
    let (a, mut b) = InProcTransport::pair();
    let mut link = LossyTransport::new(a, loss, 0, seed).unwrap();
    for i in 0..n {
        link.send(&i.to_le_bytes()).unwrap();
    }
    let delivered = b.poll().unwrap();

    // one uniform draw per datagram from the seeded stream; keep when >= loss
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let expected: Vec<u64> = (0..n).filter(|_| rng.random::<f64>() >= loss).collect();
    let got: Vec<u64> = delivered.iter().map(|d| u64::from_le_bytes(d[..8].try_into().unwrap())).collect();
    assert_eq!(got, expected);
    assert_eq!(link.stats.dropped, n - expected.len() as u64);

    // and the count is plausible for Binomial(n, eps)
    let sd = (n as f64 * eps * (1.0 - eps)).sqrt();
    assert!((expected.len() as f64 - n as f64 * eps).abs() < 5.0 * sd);
}

#[test]
fn delay_shifts_delivery_by_whole_polls() {
    let (mut a, mut b) = lossy_transport(0.0, 3, 5).unwrap();
    let mut arrivals = Vec::new();
    for k in 0..10u8 {
        a.send(&[k]).unwrap();
        for d in b.poll().unwrap() {
            arrivals.push((d[0], k));
        }
    }
    // sent at step k, delivered at poll k + 3
    assert_eq!(arrivals, (0..7).map(|k| (k, k + 3)).collect::<Vec<_>>());
}

#[test]
fn lossless_link_is_fifo_and_deterministic() {
    let run = || {
        let (mut a, mut b) = lossy_transport(0.3, 1, 17).unwrap();
        let mut got = Vec::new();
        for k in 0..200u8 {
            a.send(&[k]).unwrap();
            got.extend(b.poll().unwrap().into_iter().map(|d| d[0]));
        }
        got
    };
    let first = run();
    assert_eq!(first, run());
    assert!(first.windows(2).all(|w| w[0] < w[1]));

    let (mut a, mut b) = lossy_transport(0.0, 0, 1).unwrap();
    for k in 0..50u8 {
        a.send(&[k]).unwrap();
    }
    let got: Vec<u8> = b.poll().unwrap().into_iter().map(|d| d[0]).collect();
    assert_eq!(got, (0..50).collect::<Vec<_>>());
}
