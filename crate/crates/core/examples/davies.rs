//! Integrated Gaussian bound ∫u₀ P_t v₀ ≤ e^{−d²/4t}‖u₀‖‖v₀‖ for two
//! disjoint bumps. With a nonreversible norm the two orientations of d differ
//! and only one of them gives a valid bound.
//!
//! Run: cargo run --release --example davies

use finsler_heat::field::{Domain, GridSpec};
use finsler_heat::flow::{davies_check, SolverConfig};
use finsler_heat::norms::NormSpec;

fn main() {
    let dom = Domain::uniform(&GridSpec::dirichlet(&[255], &[1.0]), &NormSpec::two_slope(1.0, 2.0)).unwrap();
    let bump = |c: f64| {
        dom.grid.scalar_field(|x| {
            let q = ((x[0] - c) / 0.08).powi(2);
            if q < 1.0 { (1.0 - 1.0 / (1.0 - q)).exp() } else { 0.0 }
        }).values
    };
    let (left, right) = (bump(0.25), bump(0.7));
    let cfg = SolverConfig::default_for(&dom);
    for (name, u0, v0) in [("u₀ left, v₀ right", &left, &right), ("u₀ right, v₀ left", &right, &left)] {
        let r = davies_check(&dom, u0, v0, &[0.002, 0.005, 0.01], &cfg, 1e-6).unwrap();
        println!("{name}: d(u₀→v₀) = {:.3}, d(v₀→u₀) = {:.3}", r.distance, r.distance_source_to_target);
        for e in &r.entries {
            println!("   t={:.3}  pairing {:.3e}  bound {:.3e}  other orientation ratio {:.3}", e.t, e.pairing, e.bound, e.ratio_source_to_target);
        }
        println!("   certified {}, other orientation holds {}", r.certified, r.source_to_target_holds);
    }
}
