//! Builds a scenario from inline TOML, runs it and writes the report files.
//!
//! cargo run --example custom_scenario [-- <out dir>]

use coloc::scenario::{emit, run, ScenarioConfig};

const SCENARIO: &str = r#"
name = "custom"
duration_s = 20.0
seed = 7

[robot_a]
inputs = [{ start_s = 0.0, v_mps = 0.1, w_radps = 0.0 }, { start_s = 10.0, v_mps = 0.1, w_radps = 0.05 }]

[[points]]
id = 1
camera_a_m = [1.5, -0.3, 4.0]

[[points]]
id = 2
camera_a_m = [-2.0, 0.2, 6.0]
initial_depth_error_m = -1.5

[noise]
sigma_s = 0.001
"#;

fn main() -> coloc::Result<()> {
    let cfg = ScenarioConfig::from_toml_str(SCENARIO)?;
    let report = run(&cfg)?;
    let dir = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("coloc-custom"));
    let files = emit(&report, &dir)?;
    println!("{}", std::fs::read_to_string(&files.summary)?.lines().take(30).collect::<Vec<_>>().join("\n"));
    println!("...\nfiles in {}", dir.display());
    Ok(())
}
