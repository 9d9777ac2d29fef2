//! Invariants checked on random inputs.

use proptest::prelude::*;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use finsler_heat::field::{read_binary, write_binary, Domain, GridSpec};
use finsler_heat::flow::{evolve, SolverConfig};
use finsler_heat::norms::{convexity_constants, dual_convexity_constants, random_spec, NormSpec, VARIANTS};
use finsler_heat::operators::{derivative, energy, gradient, laplacian, pairing};
use finsler_heat::wasserstein::{entropy, jko_trajectory, Density1D, JkoConfig, Norm1D};

fn unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let l = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if l > 1e-2 {
            return v.iter().map(|x| x / l).collect();
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random_field(dom: &Domain, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..dom.grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn duality_round_trip(seed in any::<u64>(), variant in 0..VARIANTS.len(), dim in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let norm = random_spec(&mut rng, variant, dim).build().unwrap();
        let n = norm.dim();
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let xi: Vec<f64> = unit(&mut rng, n).iter().map(|x| x * scale).collect();
        let alpha = norm.legendre(&xi);
        let f = norm.value(&xi);
        prop_assert!((norm.dual_value(&alpha) - f).abs() <= 1e-10 * f);
        let back = norm.legendre_inv(&alpha);
        let err = back.iter().zip(&xi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-10 * scale, "{err}");
    }

    #[test]
    fn hessian_matches_differences(seed in any::<u64>(), variant in 0..VARIANTS.len(), dim in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = random_spec(&mut rng, variant, dim);
        let norm = spec.build().unwrap();
        let n = norm.dim();
        let xi = unit(&mut rng, n);
        // stay off the ℓᵖ coordinate planes where g is singular
        prop_assume!(xi.iter().all(|x| x.abs() > 0.05));
        let e = norm.eval(&xi).unwrap();
        let h = 1e-5;
        for j in 0..n {
            let mut p = xi.clone();
            let mut m = xi.clone();
            p[j] += h;
            m[j] -= h;
            let (jp, jm) = (norm.legendre(&p), norm.legendre(&m));
            for i in 0..n {
                let fd = (jp[i] - jm[i]) / (2.0 * h);
                let g = e.hessian_row(i)[j];
                prop_assert!((fd - g).abs() <= 1e-5 * (1.0 + g.abs()), "{spec:?} g[{i}][{j}] = {g} vs {fd}");
            }
        }
    }

    #[test]
    fn strong_monotonicity(seed in any::<u64>(), variant in 0..VARIANTS.len()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let norm = random_spec(&mut rng, variant, 2).build().unwrap();
        let c = convexity_constants(&norm, 512, 0);
        let n = norm.dim();
        for _ in 0..20 {
            let a: Vec<f64> = unit(&mut rng, n).iter().map(|x| x * rng.random_range(0.1..2.0)).collect();
            let b: Vec<f64> = unit(&mut rng, n).iter().map(|x| x * rng.random_range(0.1..2.0)).collect();
            let (ja, jb) = (norm.legendre(&a), norm.legendre(&b));
            let d: Vec<f64> = b.iter().zip(&a).map(|(x, y)| x - y).collect();
            let lhs = dot(&jb.iter().zip(&ja).map(|(x, y)| x - y).collect::<Vec<_>>(), &d);
            let f = norm.value(&d);
            // sampled κ* may overshoot the true infimum slightly
            prop_assert!(lhs >= 0.97 * c.kappa_star * f * f - 1e-12, "{lhs} < κ*F² = {}", c.kappa_star * f * f);
        }
    }

    #[test]
    fn norm_equivalence(seed in any::<u64>(), variant in 0..VARIANTS.len(), dim in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let norm = random_spec(&mut rng, variant, dim).build().unwrap();
        let c = convexity_constants(&norm, 512, 0);
        for _ in 0..20 {
            let eta = unit(&mut rng, norm.dim());
            let f2 = norm.value(&eta).powi(2);
            prop_assert!(f2 >= 0.97 * c.lambda_star, "{f2} < λ* = {}", c.lambda_star);
            prop_assert!(f2 * c.lambda <= 1.03, "{f2} > 1/λ = {}", 1.0 / c.lambda);
        }
    }

    #[test]
    fn dual_constants_swap(seed in any::<u64>(), variant in 0..VARIANTS.len()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let norm = random_spec(&mut rng, variant, 2).build().unwrap();
        let p = convexity_constants(&norm, 1024, 0);
        let d = dual_convexity_constants(&norm, 1024, 0);
        // A zero infimum is hit exactly on the axes, but the matching
        // supremum of ∞ on the other side grows like |αᵢ|^{q−2} and sampling
        // cannot reach it for p near 2. Only nondegenerate pairs compare.
        let close = |a: f64, da: bool, b: f64, db: bool| da || db || (a - b).abs() <= 0.05 * a.max(b);
        prop_assert!(close(p.kappa, p.kappa_degenerate, d.kappa_star, d.kappa_star_degenerate), "{p:?} {d:?}");
        prop_assert!(close(p.kappa_star, p.kappa_star_degenerate, d.kappa, d.kappa_degenerate), "{p:?} {d:?}");
    }
}

fn small_domain(seed: u64, periodic: bool) -> Domain {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = random_spec(&mut rng, (seed % 5) as usize, 2);
    let cells = [rng.random_range(5..10usize), rng.random_range(5..10usize)];
    let g = if periodic {
        GridSpec::periodic(&cells, &[1.0, 1.3])
    } else {
        GridSpec::dirichlet(&cells, &[1.0, 1.3])
    };
    Domain::uniform(&g, &spec).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn weak_identity(seed in any::<u64>(), periodic in any::<bool>()) {
        let dom = small_domain(seed, periodic);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let (u, v) = (random_field(&dom, &mut rng), random_field(&dom, &mut rng));
        let lhs = dom.weight.inner(&v, &laplacian(&dom, &u).values);
        let rhs = -pairing(&dom.grid, &dom.weight, &derivative(&dom.grid, &v), &gradient(&dom, &u));
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
    }

    #[test]
    fn energy_derivative_is_minus_laplacian(seed in any::<u64>()) {
        let dom = small_domain(seed, false);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let u = random_field(&dom, &mut rng);
        let v = random_field(&dom, &mut rng);
        let s = 1e-5;
        let up: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + s * b).collect();
        let um: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - s * b).collect();
        let fd = (energy(&dom, &up) - energy(&dom, &um)) / (2.0 * s);
        let want = -dom.weight.inner(&v, &laplacian(&dom, &u).values);
        prop_assert!((fd - want).abs() <= 1e-5 * (1.0 + want.abs()), "{fd} vs {want}");
    }

    #[test]
    fn periodic_laplacian_is_mass_neutral(seed in any::<u64>()) {
        let dom = small_domain(seed, true);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
        let u = random_field(&dom, &mut rng);
        let lap = laplacian(&dom, &u);
        let scale: f64 = lap.values.iter().zip(&dom.weight.m).map(|(a, m)| (a * m).abs()).sum();
        prop_assert!(dom.weight.integral(&lap.values).abs() <= 1e-12 * (1.0 + scale));
    }

    #[test]
    fn binary_dump_round_trips(seed in any::<u64>(), periodic in any::<bool>()) {
        let dom = small_domain(seed, periodic);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 4);
        let u = random_field(&dom, &mut rng);
        let mut buf = Vec::new();
        write_binary(&dom.grid, &u, &mut buf).unwrap();
        let (g, back) = read_binary(&buf[..]).unwrap();
        prop_assert_eq!(g.spec(), dom.grid.spec());
        prop_assert_eq!(back.values, u);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn order_preserving(seed in any::<u64>()) {
        let dom = small_domain(seed, true);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 5);
        let u0 = random_field(&dom, &mut rng);
        let v0: Vec<f64> = u0.iter().map(|x| x + rng.random_range(0.0..0.5)).collect();
        let cfg = SolverConfig::default_for(&dom).with_tol(1e-11);
        let tu = evolve(&dom, &u0, 4.0 * cfg.delta, &cfg).unwrap();
        let tv = evolve(&dom, &v0, 4.0 * cfg.delta, &cfg).unwrap();
        for (a, b) in tu.states.iter().zip(&tv.states) {
            let worst = a.values.iter().zip(&b.values).map(|(x, y)| x - y).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(worst <= 1e-7, "{worst}");
        }
    }

    #[test]
    fn jko_entropy_decreases(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dom = Domain::uniform(&GridSpec::periodic(&[64], &[1.0]), &NormSpec::two_slope(1.0, 2.0)).unwrap();
        let c = rng.random_range(0.2..0.8);
        let w = rng.random_range(0.03..0.1);
        let mu = Density1D::from_fn(&dom.grid, &dom.weight, |x| 0.1 + (-(x - c).powi(2) / (2.0 * w * w)).exp()).unwrap();
        let norm = Norm1D::new(rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)).unwrap();
        let traj = jko_trajectory(&mu, &norm, &dom.weight, 1e-3, 4, &JkoConfig::default()).unwrap();
        let e: Vec<f64> = traj.iter().map(|d| entropy(&dom.weight, d.rho())).collect();
        for k in 1..e.len() {
            prop_assert!(e[k] <= e[k - 1] + 1e-12, "{e:?}");
        }
    }
}
