//! Sampled 2-uniform convexity and smoothness constants.
//!
//! κ* = inf η·g(ξ)·η / F²(η) and κ = 1 / sup of the same ratio over unit
//! directions ξ, η. Samples are a shifted Halton sequence on the sphere, the
//! lattice directions with entries in {−1, 0, 1}, and a pattern-search polish
//! around the best candidates. A sampled infimum can only overestimate the
//! true one, so these are upper bounds on the sharp constants.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Local, Norm};
use crate::small::{self, Vector, ZERO_V};

/// Estimates below this are flagged as degenerate (the true constant is 0).
pub const DEGENERACY_THRESHOLD: f64 = 1e-2;

const POLISH_STARTS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexityConstants {
    pub kappa: f64,
    pub kappa_star: f64,
    pub lambda: f64,
    pub lambda_star: f64,
    pub sample_budget: usize,
    pub seed: u64,
    pub kappa_degenerate: bool,
    pub kappa_star_degenerate: bool,
}

#[derive(Clone, Copy)]
enum Side {
    Primal,
    Dual,
}

/// Constants of the norm itself.
pub fn convexity_constants(norm: &Norm, sample_budget: usize, seed: u64) -> ConvexityConstants {
    estimate(norm, Side::Primal, sample_budget, seed)
}

/// Constants of the dual norm F*.
pub fn dual_convexity_constants(
    norm: &Norm,
    sample_budget: usize,
    seed: u64,
) -> ConvexityConstants {
    estimate(norm, Side::Dual, sample_budget, seed)
}

fn local(norm: &Norm, side: Side, x: &Vector) -> Local {
    match side {
        Side::Primal => norm.primal(x, true),
        Side::Dual => norm.dual(x, true),
    }
}

fn value(norm: &Norm, side: Side, x: &Vector) -> f64 {
    match side {
        Side::Primal => norm.primal(x, false).value,
        Side::Dual => norm.dual(x, false).value,
    }
}

fn ratio(norm: &Norm, side: Side, xi: &Vector, eta: &Vector) -> f64 {
    let n = norm.dim();
    let g = local(norm, side, xi).hess;
    let f = value(norm, side, eta);
    small::quad_form(n, &g, eta) / (f * f)
}

fn halton(mut i: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Unit vector from angle parameters (θ in 2D; polar, azimuth in 3D).
fn direction(n: usize, angles: &[f64]) -> Vector {
    let mut v = ZERO_V;
    match n {
        1 => v[0] = if angles[0].cos() >= 0.0 { 1.0 } else { -1.0 },
        2 => {
            v[0] = angles[0].cos();
            v[1] = angles[0].sin();
        }
        _ => {
            let (st, ct) = angles[0].sin_cos();
            v[0] = st * angles[1].cos();
            v[1] = st * angles[1].sin();
            v[2] = ct;
        }
    }
    v
}

fn angles_of(n: usize, v: &Vector) -> Vec<f64> {
    match n {
        1 => vec![if v[0] >= 0.0 { 0.0 } else { std::f64::consts::PI }],
        2 => vec![v[1].atan2(v[0])],
        _ => vec![v[2].clamp(-1.0, 1.0).acos(), v[1].atan2(v[0])],
    }
}

fn lattice_directions(n: usize) -> Vec<Vector> {
    let mut out = Vec::new();
    let total = 3usize.pow(n as u32);
    for code in 0..total {
        let mut v = ZERO_V;
        let mut c = code;
        for item in v.iter_mut().take(n) {
            *item = (c % 3) as f64 - 1.0;
            c /= 3;
        }
        let len = small::norm2(n, &v);
        if len > 0.0 {
            out.push(small::scale(n, 1.0 / len, &v));
        }
    }
    out
}

fn estimate(norm: &Norm, side: Side, sample_budget: usize, seed: u64) -> ConvexityConstants {
    let n = norm.dim();
    let budget = sample_budget.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = 2 * (n.max(2) - 1);
    let shift: Vec<f64> = (0..dims).map(|_| rng.random::<f64>()).collect();
    const PRIMES: [usize; 4] = [2, 3, 5, 7];

    let mut pairs: Vec<(Vector, Vector)> = Vec::new();
    if n > 1 {
        for k in 1..=budget {
            let u: Vec<f64> = (0..dims)
                .map(|d| (halton(k, PRIMES[d]) + shift[d]).fract())
                .collect();
            let to_angles = |a: f64, b: f64| -> Vec<f64> {
                if n == 2 {
                    vec![2.0 * std::f64::consts::PI * a]
                } else {
                    vec![(1.0 - 2.0 * a).acos(), 2.0 * std::f64::consts::PI * b]
                }
            };
            let half = dims / 2;
            let xi = direction(n, &to_angles(u[0], u[half.min(dims - 1)]));
            let eta = if n == 2 {
                direction(n, &to_angles(u[1], 0.0))
            } else {
                direction(n, &to_angles(u[1], u[3]))
            };
            pairs.push((xi, eta));
        }
    }
    let lattice = lattice_directions(n);
    for a in &lattice {
        for b in &lattice {
            pairs.push((*a, *b));
        }
    }

    let mut scored: Vec<(f64, usize)> = pairs
        .iter()
        .enumerate()
        .map(|(i, (x, e))| (ratio(norm, side, x, e), i))
        .collect();
    scored.retain(|(r, _)| r.is_finite());
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut lo = scored.first().map(|s| s.0).unwrap_or(1.0);
    let mut hi = scored.last().map(|s| s.0).unwrap_or(1.0);

    let mut xis: Vec<Vector> = pairs.iter().map(|p| p.0).collect();
    if n > 1 {
        for k in 0..POLISH_STARTS.min(scored.len()) {
            let (x, e) = pairs[scored[k].1];
            let (r, xb) = polish(norm, side, &x, &e, 1.0);
            lo = lo.min(r);
            xis.push(xb);
            let (x, e) = pairs[scored[scored.len() - 1 - k].1];
            let (r, xb) = polish(norm, side, &x, &e, -1.0);
            hi = hi.max(r);
            xis.push(xb);
        }
    }

    let mut eig_lo = f64::INFINITY;
    let mut eig_hi = 0.0_f64;
    for x in &xis {
        let g = local(norm, side, x).hess;
        let (a, b) = small::sym_eig_extremes(n, &g);
        eig_lo = eig_lo.min(a);
        eig_hi = eig_hi.max(b);
    }

    let kappa_star = lo.min(1.0);
    let kappa = (1.0 / hi).min(1.0);
    ConvexityConstants {
        kappa,
        kappa_star,
        lambda: 1.0 / eig_hi,
        lambda_star: eig_lo.max(0.0),
        sample_budget: budget,
        seed,
        kappa_degenerate: kappa < DEGENERACY_THRESHOLD,
        kappa_star_degenerate: kappa_star < DEGENERACY_THRESHOLD,
    }
}

/// Coordinate pattern search on the angle parameters of (ξ, η).
/// `sign` = 1 minimizes the ratio, −1 maximizes it.
fn polish(norm: &Norm, side: Side, xi: &Vector, eta: &Vector, sign: f64) -> (f64, Vector) {
    let n = norm.dim();
    let mut params = angles_of(n, xi);
    let na = params.len();
    params.extend(angles_of(n, eta));
    let eval = |p: &[f64]| -> f64 {
        let x = direction(n, &p[..na]);
        let e = direction(n, &p[na..]);
        let r = ratio(norm, side, &x, &e);
        if r.is_finite() {
            sign * r
        } else {
            f64::INFINITY
        }
    };
    let mut best = eval(&params);
    let mut step = 0.05;
    while step > 1e-10 {
        let mut improved = false;
        for d in 0..params.len() {
            for s in [step, -step] {
                let mut cand = params.clone();
                cand[d] += s;
                let v = eval(&cand);
                if v < best {
                    best = v;
                    params = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (sign * best, direction(n, &params[..na]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::norms::NormSpec;

    #[test]
    fn quadratic_is_hilbert() {
        let n = NormSpec::quadratic(2, vec![3.0, 1.0, 1.0, 2.0]).build().unwrap();
        let c = convexity_constants(&n, 256, 7);
        assert!((c.kappa - 1.0).abs() < 1e-9);
        assert!((c.kappa_star - 1.0).abs() < 1e-9);
    }

    #[test]
    fn two_slope_constants() {
        let n = NormSpec::two_slope(1.0, 2.0).build().unwrap();
        let c = convexity_constants(&n, 16, 1);
        assert!((c.kappa_star - 0.25).abs() < 1e-15);
        assert!((c.kappa - 0.25).abs() < 1e-15);
    }

    #[test]
    fn lp_constants() {
        let c = convexity_constants(&NormSpec::lp(2, 1.5).build().unwrap(), 512, 3);
        assert!(c.kappa_star <= 0.5 + 1e-12 && c.kappa_star >= 0.48, "{c:?}");
        assert!(c.kappa_degenerate);
        let c = convexity_constants(&NormSpec::lp(2, 3.0).build().unwrap(), 512, 3);
        assert!(c.kappa <= 0.5 + 1e-12 && c.kappa >= 0.48, "{c:?}");
        assert!(c.kappa_star_degenerate);
    }
}
