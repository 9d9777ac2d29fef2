//! Brute-force c-transforms for c = d²/2: φ ≤ (φ^c)^c̄ always, with equality
//! (to grid tolerance) once φ is small and smooth.
//!
//! Run: cargo run --release --example cconcavity

use finsler_heat::field::{Domain, GridSpec};
use finsler_heat::norms::NormSpec;
use finsler_heat::wasserstein::{cconcavity_check, grid_tolerance};

fn main() {
    let dom = Domain::uniform(&GridSpec::periodic(&[128], &[1.0]), &NormSpec::two_slope(1.0, 2.0)).unwrap();
    let tol = grid_tolerance(&dom);
    println!("grid tolerance {tol:.3e}");
    for amp in [0.3, 0.1, 0.03, 0.01, 0.003] {
        let phi = dom.grid.scalar_field(|x| amp * (2.0 * std::f64::consts::PI * x[0]).sin());
        let r = cconcavity_check(&dom, &phi, tol).unwrap();
        println!(
            "amplitude {amp:<6} gap (φ^c)^c̄ − φ: {:.3e}  violation {:.1e}  c-concave {}",
            r.slack, r.details["violation"].as_f64().unwrap_or(f64::NAN), r.certified
        );
    }
}
