//! Ground states: Dirichlet χ on the unit interval (π²) and the mean-zero
//! χ̄ of a Gaussian weight e^{−x²/2} (≥ K = 1).
//!
//! Run: cargo run --release --example spectral

use finsler_heat::field::{Domain, FinslerField, Grid, GridSpec, WeightField, WeightSpec};
use finsler_heat::flow::{ground_state, SpectralMode};
use finsler_heat::norms::NormSpec;

fn main() {
    let dom = Domain::uniform(&GridSpec::dirichlet(&[99], &[1.0]), &NormSpec::euclidean(1)).unwrap();
    let r = ground_state(&dom, SpectralMode::DirichletChi, 1e-10, 2000).unwrap();
    println!("Dirichlet χ = {:.6} (π² = {:.6}), {} iterations", r.value, std::f64::consts::PI.powi(2), r.iterations);

    for p in [2.0, 1.5, 4.0] {
        let dom = Domain::uniform(&GridSpec::dirichlet(&[63], &[1.0]), &NormSpec::lp(1, p)).unwrap();
        let r = ground_state(&dom, SpectralMode::DirichletChi, 1e-10, 2000).unwrap();
        println!("  1D lp({p}) is a multiple of |·|: χ = {:.6}", r.value);
    }

    let spec = GridSpec { origin: Some(vec![-6.0]), ..GridSpec::periodic(&[256], &[12.0]) };
    let grid = Grid::new(&spec).unwrap();
    let weight = WeightField::build(&grid, &WeightSpec::Gaussian { k: 1.0, center: Some(vec![0.0]) }).unwrap();
    let dom = Domain::new(grid, weight, FinslerField::uniform(&NormSpec::euclidean(1)).unwrap()).unwrap();
    let r = ground_state(&dom, SpectralMode::MeanZeroChiBar, 1e-10, 4000).unwrap();
    println!("Gaussian weight, K = 1: χ̄ = {:.5}", r.value);
}
