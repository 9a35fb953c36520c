//! Encodes an estimate message, dumps the bytes and decodes them back.
//!
//! cargo run --example wire_format

use coloc::agent::{deserialize, serialize, EstimateMessage, PointReport};
use coloc::geometry::{NormalizedFeature, UnicycleInput};
use coloc::{AgentId, PointId};
use nalgebra::Vector2;

fn main() -> coloc::Result<()> {
    let msg = EstimateMessage::new(
        AgentId::B,
        42,
        2.1,
        UnicycleInput::new(0.08, -0.05),
        vec![PointReport {
            point_id: PointId(4),
            s: NormalizedFeature::new(0.93, 1.02),
            s_rate: Vector2::new(0.011, 0.019),
            chi: 0.21,
            chi_rate: 0.0043,
        }],
    );
    let bytes = serialize(&msg);
    println!("{} bytes", bytes.len());
    for (i, chunk) in bytes.chunks(16).enumerate() {
        let hex: Vec<String> = chunk.iter().map(|b| format!("{b:02x}")).collect();
        println!("{:04x}  {}", i * 16, hex.join(" "));
    }
    let back = deserialize(&bytes)?;
    assert_eq!(back, msg);
    println!("decoded: {back:?}");

    let mut bad = bytes.clone();
    bad[0] = 9;
    println!("version 9: {}", deserialize(&bad).unwrap_err());
    println!("truncated: {}", deserialize(&bytes[..20]).unwrap_err());
    Ok(())
}
