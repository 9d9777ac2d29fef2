//! Random norms for property checks and the duality experiment.

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{NormSpec, RegMode};
use crate::small;

/// Variant names in the order [`random_spec`] cycles through them.
pub const VARIANTS: [&str; 6] = ["quadratic", "lp", "deformed", "randers", "regularized", "two_slope_1d"];

fn spd<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let b: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = (0..n).map(|k| b[k * n + i] * b[k * n + j]).sum::<f64>();
        }
        a[i * n + i] += 0.3;
    }
    a
}

fn near_identity<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut s: Vec<f64> = (0..n * n).map(|_| rng.random_range(-0.4..0.4)).collect();
    for i in 0..n {
        s[i * n + i] += 1.0;
    }
    s
}

/// A valid spec of variant `VARIANTS[variant % 6]` in dimension `dim`
/// (two_slope is always 1D).
pub fn random_spec<R: Rng>(rng: &mut R, variant: usize, dim: usize) -> NormSpec {
    let n = dim.clamp(1, small::MAX_DIM);
    match variant % VARIANTS.len() {
        0 => NormSpec::quadratic(n, spd(rng, n)),
        1 => NormSpec::lp(n, rng.random_range(1.2..5.0)),
        2 => {
            let base = if rng.random_range(0.0..1.0) < 0.5 {
                NormSpec::lp(n, rng.random_range(1.2..5.0))
            } else {
                NormSpec::quadratic(n, spd(rng, n))
            };
            NormSpec::deformed(base, near_identity(rng, n))
        }
        3 => {
            let a = spd(rng, n);
            let ai = small::inverse(n, &small::mat_from_row_major(n, &a)).expect("spd is invertible");
            let b0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let q = small::quad_form(n, &ai, &small::from_slice(n, &b0));
            let target = rng.random_range(0.0..0.8);
            let s = if q > 0.0 { (target / q).sqrt() } else { 0.0 };
            NormSpec::randers(n, a, b0.iter().map(|v| v * s).collect())
        }
        4 => {
            let base = NormSpec::lp(n, rng.random_range(1.2..5.0));
            let mode = [RegMode::Lower, RegMode::Upper, RegMode::Full][rng.random_range(0..3usize)];
            base.regularize(rng.random_range(0.01..0.5), mode).expect("ε < 1 is valid")
        }
        _ => NormSpec::two_slope(rng.random_range(0.2..3.0), rng.random_range(0.2..3.0)),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualityReport {
    pub samples: usize,
    pub seed: u64,
    /// max |F(ξ) − F*(J(ξ))| / F(ξ)
    pub max_value_error: f64,
    /// max |J*(J(ξ)) − ξ| / |ξ|
    pub max_inverse_error: f64,
    /// the worst pair, for diagnosis
    pub worst: Option<(NormSpec, Vec<f64>)>,
}

/// F(ξ) = F*(J(ξ)) and J*(J(ξ)) = ξ on `samples` random pairs, cycling
/// through every variant and dimensions 1..=3.
pub fn duality_check(samples: usize, seed: u64) -> DualityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut ev, mut ei) = (0.0_f64, 0.0_f64);
    let mut worst = None;
    let mut worst_err = -1.0;
    for k in 0..samples {
        let dim = 1 + (k / VARIANTS.len()) % 3;
        let spec = random_spec(&mut rng, k, dim);
        let norm = spec.build().expect("sampled specs are valid");
        let n = norm.dim();
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let xi: Vec<f64> = (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let f = norm.value(&xi);
        if f == 0.0 {
            continue;
        }
        let j = norm.legendre(&xi);
        let back = norm.legendre_inv(&j);
        let e1 = (f - norm.dual_value(&j)).abs() / f;
        let len = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        let e2 = xi.iter().zip(&back).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / len;
        ev = ev.max(e1);
        ei = ei.max(e2);
        if e1.max(e2) > worst_err {
            worst_err = e1.max(e2);
            worst = Some((spec, xi));
        }
    }
    DualityReport {
        samples,
        seed,
        max_value_error: ev,
        max_inverse_error: ei,
        worst,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_variant_builds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for v in 0..60 {
            let s = random_spec(&mut rng, v, 1 + v % 3);
            assert!(s.build().is_ok(), "{s:?}");
        }
    }

    #[test]
    fn duality_small_sample() {
        let r = duality_check(120, 11);
        assert!(r.max_value_error < 1e-10 && r.max_inverse_error < 1e-10, "{r:?}");
    }
}
