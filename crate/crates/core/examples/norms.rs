//! Minkowski norms at one tangent space: value, duality map, Legendre
//! round trip and the measured 2-uniform convexity constants.
//!
//! Run: cargo run --release --example norms

use finsler_heat::field::DEFAULT_SAMPLE_BUDGET;
use finsler_heat::norms::{convexity_constants, duality_check, NormSpec, RegMode};

fn main() {
    let specs = [
        ("euclidean", NormSpec::euclidean(2)),
        ("lp(1.5)", NormSpec::lp(2, 1.5)),
        ("lp(4)", NormSpec::lp(2, 4.0)),
        ("randers", NormSpec::randers(2, vec![1.0, 0.0, 0.0, 1.0], vec![0.3, 0.1])),
        ("lp(4)+eps", NormSpec::lp(2, 4.0).regularize(0.1, RegMode::Full).unwrap()),
    ];
    let xi = [0.7, -0.2];
    for (name, spec) in &specs {
        let norm = spec.build().unwrap();
        let alpha = norm.legendre(&xi);
        let c = convexity_constants(&norm, DEFAULT_SAMPLE_BUDGET, 0);
        println!(
            "{name:>10}: F(ξ)={:.5} F(−ξ)={:.5} F*(J(ξ))={:.5}  κ={:.3}{} κ*={:.3}{}",
            norm.value(&xi),
            norm.value(&[-xi[0], -xi[1]]),
            norm.dual_value(&alpha),
            c.kappa,
            if c.kappa_degenerate { " (degenerate)" } else { "" },
            c.kappa_star,
            if c.kappa_star_degenerate { " (degenerate)" } else { "" },
        );
    }

    // F*(J(ξ)) = F(ξ) and J*(J(ξ)) = ξ over random norms of every variant
    let r = duality_check(1000, 1);
    println!("\nduality over {} samples: value err {:.1e}, inverse err {:.1e}", r.samples, r.max_value_error, r.max_inverse_error);
}
