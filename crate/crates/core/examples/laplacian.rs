//! The discrete Finsler Laplacian on a grid: Δ(F(x−y)²) should be 2n away
//! from y. Exact for quadratic norms; ℓ⁴ keeps an O(1) error along the axes.
//!
//! Run: cargo run --release --example laplacian

use finsler_heat::comparison::quadratic_identity_check;
use finsler_heat::field::{Domain, GridSpec};
use finsler_heat::norms::NormSpec;
use finsler_heat::operators::{energy, laplacian};

fn main() {
    for (name, spec) in [
        ("euclidean", NormSpec::euclidean(2)),
        ("anisotropic", NormSpec::quadratic(2, vec![2.0, 0.5, 0.5, 1.0])),
        ("lp(4)", NormSpec::lp(2, 4.0)),
    ] {
        let r = quadratic_identity_check(&spec, &[32, 64, 128], 3, 0.03, 0.5).unwrap();
        let errs: Vec<String> = r.refinement.iter().map(|l| format!("{}²: {:.2e}", l.cells, l.slack)).collect();
        println!("{name:>12}  max |Δu/2n − 1|  {}", errs.join("   "));
    }

    // integration by parts: ∫ u Δu dm = −2E(u)
    let dom = Domain::uniform(&GridSpec::periodic(&[48, 48], &[1.0, 1.0]), &NormSpec::lp(2, 3.0)).unwrap();
    let u = dom.grid.scalar_field(|x| (6.0 * x[0]).sin() * (1.0 + x[1] * (1.0 - x[1])));
    let lap = laplacian(&dom, &u);
    let lhs = dom.weight.inner(&u, &lap);
    println!("\n∫uΔu dm = {lhs:.12}   −2E(u) = {:.12}", -2.0 * energy(&dom, &u));
}
