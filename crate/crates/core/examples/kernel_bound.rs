//! Heat kernel lower bound as a monotone limit: heat from a normalized
//! bump of width √ε at z grows as ε ↓ 0 and stays above the model kernel.
//!
//! Run: cargo run --release --example kernel_bound

use finsler_heat::comparison::{kernel_lower_bound_check, ModelParams};
use finsler_heat::field::{Domain, GridSpec};
use finsler_heat::flow::SolverConfig;
use finsler_heat::norms::NormSpec;

fn main() {
    let dom = Domain::uniform(&GridSpec::periodic(&[128], &[1.0]), &NormSpec::euclidean(1)).unwrap();
    let cfg = SolverConfig::default_for(&dom);
    let r = kernel_lower_bound_check(&dom, 64, &ModelParams::flat(1.0), &[0.005, 0.01], &[0.002, 0.001, 0.0005], &cfg, 0.02)
        .unwrap();
    println!("slack {:.3e}, certified {}", r.slack, r.certified);
    println!("{}", serde_json::to_string_pretty(&r.details).unwrap());
}
