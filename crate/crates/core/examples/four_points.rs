//! The four-point depth scenario: three off-axis points converge, the one on
//! the optical axis receives no excitation and keeps its initial error.
//!
//! cargo run --example four_points [-- <out dir>]

use coloc::scenario::{emit, preset, run, summarize};

fn main() -> coloc::Result<()> {
    let cfg = preset("depth-four-points")?;
    let report = run(&cfg)?;
    let summary = summarize(&report);

    println!("{:<6} {:>10} {:>10} {:>12} {:>12}", "point", "initial", "final", "t(<0.05 m)", "t(<5 %)");
    for d in &summary.depth {
        let fmt = |t: Option<f64>| t.map_or("never".to_string(), |t| format!("{t:.2} s"));
        println!(
            "p{:<5} {:>+10.3} {:>+10.4} {:>12} {:>12}",
            d.point_id.0,
            d.initial_error_m,
            d.final_error_m,
            fmt(d.convergence_time_s),
            fmt(d.convergence_time_rel_s)
        );
    }

    if let Some(dir) = std::env::args().nth(1) {
        let files = emit(&report, dir.as_ref())?;
        println!("depth errors written to {}", files.depth_errors.display());
    }
    Ok(())
}
