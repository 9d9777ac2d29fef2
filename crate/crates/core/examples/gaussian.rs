//! The exact Gaussian t^{−n/2} e^{−F(y−x)²/4t} under the discrete ∂ₜ − Δ.
//! The residual converges for smooth norms when the orientation is y − x,
//! and not when it is x − y.
//!
//! Run: cargo run --release --example gaussian

use finsler_heat::comparison::{gaussian_check, Orientation};
use finsler_heat::norms::NormSpec;

fn main() {
    let randers = NormSpec::randers(2, vec![1.0, 0.2, 0.2, 1.5], vec![0.4, -0.2]);
    for (name, spec, o) in [
        ("euclidean", NormSpec::euclidean(2), Orientation::YMinusX),
        ("randers y−x", randers.clone(), Orientation::YMinusX),
        ("randers x−y", randers, Orientation::XMinusY),
        ("lp(4)", NormSpec::lp(2, 4.0), Orientation::YMinusX),
    ] {
        let r = gaussian_check(&spec, &[32, 64, 128], 0.01, o, 1.0).unwrap();
        let res: Vec<String> = r.refinement.iter().map(|l| format!("{:.3e}", l.slack)).collect();
        println!("{name:>12}: residual/peak {}  orders {}", res.join(" → "), r.details["orders"]);
    }
}
