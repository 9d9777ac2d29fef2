//! Heat started from a radial profile h₀(d(x, z)) stays above the radial
//! model solution h(t, d(x, z)) on a flat ℓ⁴ torus (K = 0, N = 2).
//!
//! Run: cargo run --release --example cheeger_yau

use finsler_heat::comparison::{cheeger_yau_check, ModelParams};
use finsler_heat::field::{Domain, GridSpec};
use finsler_heat::flow::SolverConfig;
use finsler_heat::norms::NormSpec;

fn main() {
    let dom = Domain::uniform(&GridSpec::periodic(&[24, 24], &[1.0, 1.0]), &NormSpec::lp(2, 4.0)).unwrap();
    let z = dom.grid.nearest_cell(&[0.5, 0.5]);
    let cfg = SolverConfig::default_for(&dom);
    let r = cheeger_yau_check(
        &dom,
        z,
        &ModelParams::flat(2.0),
        |r| (-r * r / 0.016).exp(),
        &[0.001, 0.002, 0.004],
        &cfg,
        2001,
        0.02,
    )
    .unwrap();
    println!("max (h − u)/peak = {:.3e}, certified {}", r.slack, r.certified);
    println!("{}", serde_json::to_string_pretty(&r.details).unwrap());
}
