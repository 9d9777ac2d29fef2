//! Radial subsolutions of the heat equation: t^{−N/2}e^{−d²/4t} with N = n+1
//! on a flat ℓ⁴ torus, and the K = −1 model kernel in three dimensions.
//!
//! Run: cargo run --release --example subsolution

use finsler_heat::comparison::{example_i, example_ii, subsolution_residual};
use finsler_heat::field::{Domain, GridSpec};
use finsler_heat::norms::NormSpec;

fn main() {
    let dom = Domain::uniform(&GridSpec::periodic(&[64, 64], &[1.0, 1.0]), &NormSpec::lp(2, 4.0)).unwrap();
    let z = dom.grid.nearest_cell(&[0.5, 0.5]);
    for n in [2.0, 3.0, 4.0] {
        let r = subsolution_residual(&dom, &example_i(n), z, &[0.005, 0.01, 0.02], 2, 1e-3).unwrap();
        println!("example (i), N = {n}: max (∂ₜu − Δu)/peak = {:+.3e}  subsolution {}", r.slack, r.certified);
    }

    let dom = Domain::uniform(&GridSpec::periodic(&[32; 3], &[8.0; 3]), &NormSpec::euclidean(3)).unwrap();
    let z = dom.grid.nearest_cell(&[4.0; 3]);
    let r = subsolution_residual(&dom, &example_ii(), z, &[0.5, 1.0, 2.0], 2, 1e-3).unwrap();
    println!("example (ii), n = 3: max (∂ₜu − Δu)/peak = {:+.3e}  subsolution {}", r.slack, r.certified);
}
