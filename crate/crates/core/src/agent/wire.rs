//! Binary encoding of [`EstimateMessage`].
//!
//! Layout (little-endian, no padding):
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 1    | protocol version (`1`)                  |
//! | 1      | 1    | agent id (`0` = A, `1` = B)             |
//! | 2      | 8    | seq, `u64`                              |
//! | 10     | 8    | timestamp, `f64` seconds                |
//! | 18     | 8    | `v_d`, `f64`                            |
//! | 26     | 8    | `w_theta`, `f64`                        |
//! | 34     | 4    | point count `n`, `u32`                  |
//! | 38     | 52·n | points                                  |
//!
//! Each point record is `id: u32` followed by six `f64`:
//! `s.x, s.y, s_rate.x, s_rate.y, chi, chi_rate`. Points are sorted by id
//! with no duplicates.

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::geometry::{NormalizedFeature, UnicycleInput};
use crate::{AgentId, PointId};

pub const PROTOCOL_VERSION: u8 = 1;
const HEADER_LEN: usize = 38;
const POINT_LEN: usize = 4 + 6 * 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointReport {
    pub point_id: PointId,
    pub s: NormalizedFeature,
    pub s_rate: Vector2<f64>,
    pub chi: f64,
    pub chi_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateMessage {
    pub protocol_version: u8,
    pub agent_id: AgentId,
    pub seq: u64,
    pub timestamp: f64,
    pub u: UnicycleInput,
    pub points: Vec<PointReport>,
}

impl EstimateMessage {
    /// Builds a message with the current protocol version; points are sorted by id.
    pub fn new(agent_id: AgentId, seq: u64, timestamp: f64, u: UnicycleInput, mut points: Vec<PointReport>) -> Self {
        points.sort_by_key(|p| p.point_id);
        Self {
            protocol_version: PROTOCOL_VERSION,
            agent_id,
            seq,
            timestamp,
            u,
            points,
        }
    }

    pub fn point(&self, id: PointId) -> Option<&PointReport> {
        self.points
            .binary_search_by_key(&id, |p| p.point_id)
            .ok()
            .map(|i| &self.points[i])
    }
}

fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub fn serialize(msg: &EstimateMessage) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + POINT_LEN * msg.points.len());
    buf.push(msg.protocol_version);
    buf.push(match msg.agent_id {
        AgentId::A => 0,
        AgentId::B => 1,
    });
    buf.extend_from_slice(&msg.seq.to_le_bytes());
    put_f64(&mut buf, msg.timestamp);
    put_f64(&mut buf, msg.u.v_d);
    put_f64(&mut buf, msg.u.w_theta);
    buf.extend_from_slice(&(msg.points.len() as u32).to_le_bytes());
    for p in &msg.points {
        buf.extend_from_slice(&p.point_id.0.to_le_bytes());
        for v in [p.s.x, p.s.y, p.s_rate.x, p.s_rate.y, p.chi, p.chi_rate] {
            put_f64(&mut buf, v);
        }
    }
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let end = self.pos + N;
        let bytes = self.buf.get(self.pos..end).ok_or_else(|| {
            Error::MalformedMessage(format!("truncated at byte {} reading {what}", self.pos))
        })?;
        self.pos = end;
        Ok(bytes.try_into().expect("slice length checked"))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let v = f64::from_le_bytes(self.take::<8>(what)?);
        if !v.is_finite() {
            return Err(Error::MalformedMessage(format!("non-finite {what}")));
        }
        Ok(v)
    }
}

pub fn deserialize(bytes: &[u8]) -> Result<EstimateMessage> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let [version] = r.take::<1>("version")?;
    if version != PROTOCOL_VERSION {
        return Err(Error::MalformedMessage(format!("unsupported protocol version {version}")));
    }
    let agent_id = match r.take::<1>("agent id")? {
        [0] => AgentId::A,
        [1] => AgentId::B,
        [other] => return Err(Error::MalformedMessage(format!("bad agent id {other}"))),
    };
    let seq = u64::from_le_bytes(r.take::<8>("seq")?);
    let timestamp = r.f64("timestamp")?;
    let u = UnicycleInput::new(r.f64("v_d")?, r.f64("w_theta")?);
    let count = u32::from_le_bytes(r.take::<4>("point count")?) as usize;
    let expected = HEADER_LEN + count * POINT_LEN;
    if bytes.len() != expected {
        return Err(Error::MalformedMessage(format!(
            "length {} does not match {count} points ({expected} bytes)",
            bytes.len()
        )));
    }
    let mut points: Vec<PointReport> = Vec::with_capacity(count);
    for _ in 0..count {
        let point_id = PointId(u32::from_le_bytes(r.take::<4>("point id")?));
        if let Some(prev) = points.last() {
            if prev.point_id >= point_id {
                return Err(Error::MalformedMessage("points not sorted by id".into()));
            }
        }
        let s = NormalizedFeature::new(r.f64("s.x")?, r.f64("s.y")?);
        let s_rate = Vector2::new(r.f64("s_rate.x")?, r.f64("s_rate.y")?);
        let chi = r.f64("chi")?;
        let chi_rate = r.f64("chi_rate")?;
        points.push(PointReport {
            point_id,
            s,
            s_rate,
            chi,
            chi_rate,
        });
    }
    Ok(EstimateMessage {
        protocol_version: version,
        agent_id,
        seq,
        timestamp,
        u,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample() -> EstimateMessage {
        EstimateMessage::new(
            AgentId::B,
            7,
            1.25,
            UnicycleInput::new(0.1, -0.03),
            vec![
                PointReport {
                    point_id: PointId(4),
                    s: NormalizedFeature::new(1.0, 1.0),
                    s_rate: Vector2::new(0.02, 0.02),
                    chi: 0.2,
                    chi_rate: 0.004,
                },
                PointReport {
                    point_id: PointId(1),
                    s: NormalizedFeature::new(0.0, 0.0),
                    s_rate: Vector2::new(0.0, 0.0),
                    chi: 0.25,
                    chi_rate: 0.00625,
                },
            ],
        )
    }

    #[test]
    fn round_trip() {
        let m = sample();
        assert_eq!(m.points[0].point_id, PointId(1));
        let bytes = serialize(&m);
        assert_eq!(bytes.len(), HEADER_LEN + 2 * POINT_LEN);
        assert_eq!(deserialize(&bytes).unwrap(), m);
    }

    #[test]
    fn rejects_bad_version() {
        let mut bytes = serialize(&sample());
        bytes[0] = 2;
        assert!(matches!(deserialize(&bytes), Err(Error::MalformedMessage(_))));
    }

    #[test]
    fn rejects_truncation_and_trailing_bytes() {
        let bytes = serialize(&sample());
        for cut in [0, 1, 9, 37, bytes.len() - 1] {
            assert!(deserialize(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(deserialize(&longer).is_err());
    }

    #[test]
    fn rejects_non_finite_and_unsorted() {
        let mut m = sample();
        m.points[1].chi = f64::NAN;
        assert!(deserialize(&serialize(&m)).is_err());

        let mut m = sample();
        m.points.swap(0, 1);
        assert!(deserialize(&serialize(&m)).is_err());

        let mut bytes = serialize(&sample());
        bytes[1] = 5;
        assert!(deserialize(&bytes).is_err());
    }

    #[test]
    fn point_lookup() {
        let m = sample();
        assert_eq!(m.point(PointId(4)).unwrap().chi, 0.2);
        assert!(m.point(PointId(2)).is_none());
    }
}
