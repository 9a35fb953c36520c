//! Convergence time of a single point under different observer gains:
//! larger `alpha * lambda` speeds convergence up, a larger `H` slows it down.
//!
//! cargo run --release --example gain_sweep

use coloc::scenario::{parse_value, preset, summarize, sweep};
use coloc::PointId;

fn times(param: &str, values: &[&str]) -> coloc::Result<Vec<Option<f64>>> {
    let cfg = preset("depth-four-points")?;
    let values: Vec<_> = values.iter().map(|v| parse_value(v)).collect();
    Ok(sweep(&cfg, param, &values)?
        .iter()
        .map(|r| {
            summarize(r)
                .depth(coloc::AgentId::A, PointId(3))
                .and_then(|d| d.convergence_time_rel_s)
        })
        .collect())
}

fn main() -> coloc::Result<()> {
    let lambdas = ["30", "60", "120", "240"];
    println!("time for p3 to reach 5 % depth error");
    for (l, t) in lambdas.iter().zip(times("observer.lambda", &lambdas)?) {
        println!("  alpha*lambda = {l:>4}: {t:?}");
    }
    let hs = ["1.0", "2.5", "5.0"];
    for (h, t) in hs.iter().zip(times("observer.h", &hs)?) {
        println!("  H = {h:>3} I: {t:?}");
    }
    Ok(())
}
