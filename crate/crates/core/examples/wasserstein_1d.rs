//! 1D optimal transport with an asymmetric cost: quantile W₂, and a few
//! JKO steps of the relative entropy.
//!
//! Run: cargo run --release --example wasserstein_1d

use finsler_heat::field::{Grid, GridSpec, WeightField};
use finsler_heat::wasserstein::{entropy, jko_trajectory, w2_distance, Density1D, JkoConfig, Norm1D};

fn main() {
    let grid = Grid::new(&GridSpec::periodic(&[128], &[1.0])).unwrap();
    let weight = WeightField::lebesgue(&grid);
    let bump = |c: f64| Density1D::from_fn(&grid, &weight, |x| 0.01 + (-(x - c).powi(2) / 0.002).exp()).unwrap();
    let (mu, nu) = (bump(0.4), bump(0.6));

    let f = Norm1D::new(1.0, 2.0).unwrap();
    println!("W₂ right shift {:.5}, left shift {:.5}", w2_distance(&mu, &nu, &f).unwrap(), w2_distance(&nu, &mu, &f).unwrap());
    println!("reversed norm:  right {:.5}", w2_distance(&mu, &nu, &Norm1D::new(2.0, 1.0).unwrap()).unwrap());

    let traj = jko_trajectory(&mu, &f, &weight, 1e-3, 10, &JkoConfig::default()).unwrap();
    for (k, d) in traj.iter().enumerate().step_by(2) {
        let mean: f64 = d.cell_masses().iter().enumerate().map(|(c, m)| m * grid.position(c)[0]).sum();
        println!("step {k:>2}: entropy {:+.6}, mean {:.5}", entropy(&weight, d.rho()), mean);
    }
}
