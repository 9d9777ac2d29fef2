//! Limited-memory BFGS in a diagonal metric ⟨a, b⟩_m = Σ a_i b_i m_i, with
//! Armijo backtracking, plus CG and a cached sparse Cholesky for the linear
//! systems of the implicit steps.

use std::collections::VecDeque;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMat, Triplet};
use faer::Side;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iter: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            memory: 12,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIter,
    /// line search could not decrease the objective
    Stalled,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

fn dot_m(a: &[f64], b: &[f64], m: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i] * m[i];
    }
    s
}

/// Minimize `f` from `x` (updated in place).
///
/// `f(x, grad)` returns the value and writes the Euclidean gradient. The
/// search uses the metric gradient grad/m. `project` (if any) is applied to
/// every metric gradient and search direction and must be a linear
/// m-orthogonal projection; `converged(x, g, value)` sees the projected
/// metric gradient and is called once per iteration.
pub fn minimize<F, P, C>(
    x: &mut [f64],
    m: &[f64],
    mut f: F,
    project: P,
    mut converged: C,
    opts: LbfgsOptions,
) -> Outcome
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
    P: Fn(&mut [f64]),
    C: FnMut(&[f64], &[f64], f64) -> bool,
{
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut evaluations = 1;
    let mut value = f(x, &mut g);
    to_metric(&mut g, m, &project);
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut d = vec![0.0; n];
    let mut xn = vec![0.0; n];
    let mut gn = vec![0.0; n];
    let mut alpha = vec![0.0; opts.memory];
    let mut fresh_restart = false;
    for iter in 0..opts.max_iter {
        if converged(x, &g, value) {
            return Outcome {
                value,
                iterations: iter,
                evaluations,
                termination: Termination::Converged,
            };
        }
        // two-loop recursion
        d.iter_mut().zip(&g).for_each(|(a, b)| *a = -b);
        for (i, (s, y, rho)) in hist.iter().enumerate().rev() {
            let a = rho * dot_m(s, &d, m);
            alpha[i] = a;
            for j in 0..n {
                d[j] -= a * y[j];
            }
        }
        if let Some((s, y, _)) = hist.back() {
            let gamma = dot_m(s, y, m) / dot_m(y, y, m);
            d.iter_mut().for_each(|a| *a *= gamma);
        } else {
            // first step: unit length in the metric
            let gn2 = dot_m(&g, &g, m).sqrt();
            if gn2 > 0.0 {
                d.iter_mut().for_each(|a| *a /= gn2.max(1.0));
            }
        }
        for (i, (s, y, rho)) in hist.iter().enumerate() {
            let b = rho * dot_m(y, &d, m);
            for j in 0..n {
                d[j] += (alpha[i] - b) * s[j];
            }
        }
        project(&mut d);
        let mut slope = dot_m(&g, &d, m);
        if !(slope < 0.0) {
            hist.clear();
            d.iter_mut().zip(&g).for_each(|(a, b)| *a = -b);
            slope = dot_m(&g, &d, m);
            if !(slope < 0.0) {
                return Outcome {
                    value,
                    iterations: iter,
                    evaluations,
                    termination: Termination::Stalled,
                };
            }
        }
        let mut step = 1.0;
        let mut accepted = false;
        let mut vn = value;
        for _ in 0..60 {
            for j in 0..n {
                xn[j] = x[j] + step * d[j];
            }
            vn = f(&xn, &mut gn);
            evaluations += 1;
            if vn.is_finite() && vn <= value + 1e-4 * step * slope {
                accepted = true;
                break;
            }
            // below round-off in the value: accept if the gradient shrinks
            if vn.is_finite() && (vn - value).abs() <= 1e-13 * value.abs() {
                let mut gt = gn.clone();
                to_metric(&mut gt, m, &project);
                if dot_m(&gt, &gt, m) < dot_m(&g, &g, m) {
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            if fresh_restart || hist.is_empty() {
                return Outcome {
                    value,
                    iterations: iter,
                    evaluations,
                    termination: Termination::Stalled,
                };
            }
            hist.clear();
            fresh_restart = true;
            continue;
        }
        fresh_restart = false;
        to_metric(&mut gn, m, &project);
        let s: Vec<f64> = (0..n).map(|j| xn[j] - x[j]).collect();
        let y: Vec<f64> = (0..n).map(|j| gn[j] - g[j]).collect();
        let sy = dot_m(&s, &y, m);
        let ss = dot_m(&s, &s, m);
        let yy = dot_m(&y, &y, m);
        if sy > 1e-12 * (ss * yy).sqrt() {
            if hist.len() == opts.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        x.copy_from_slice(&xn);
        g.copy_from_slice(&gn);
        value = vn;
    }
    let termination = if converged(x, &g, value) {
        Termination::Converged
    } else {
        Termination::MaxIter
    };
    Outcome {
        value,
        iterations: opts.max_iter,
        evaluations,
        termination,
    }
}

fn to_metric<P: Fn(&mut [f64])>(g: &mut [f64], m: &[f64], project: &P) {
    for (a, w) in g.iter_mut().zip(m) {
        *a /= w;
    }
    project(g);
}

/// Conjugate gradients for a self-adjoint positive operator in the metric m.
/// Returns (iterations, final relative residual, converged).
pub fn conjugate_gradient<A: FnMut(&[f64], &mut [f64])>(
    apply: A,
    b: &[f64],
    x: &mut [f64],
    m: &[f64],
    rtol: f64,
    max_iter: usize,
) -> (usize, f64, bool) {
    preconditioned_cg(apply, None, b, x, m, rtol, max_iter)
}

/// CG with an optional diagonal (Jacobi) preconditioner `diag`.
pub fn preconditioned_cg<A: FnMut(&[f64], &mut [f64])>(
    mut apply: A,
    diag: Option<&[f64]>,
    b: &[f64],
    x: &mut [f64],
    m: &[f64],
    rtol: f64,
    max_iter: usize,
) -> (usize, f64, bool) {
    let n = b.len();
    let precond = |r: &[f64], z: &mut [f64]| match diag {
        Some(d) => (0..n).for_each(|i| z[i] = r[i] / d[i]),
        None => z.copy_from_slice(r),
    };
    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    let mut r: Vec<f64> = (0..n).map(|i| b[i] - ax[i]).collect();
    let bnorm = dot_m(b, b, m).sqrt().max(f64::MIN_POSITIVE);
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot_m(&r, &z, m);
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        let rn = dot_m(&r, &r, m).sqrt();
        if rn <= rtol * bnorm {
            return (it, rn / bnorm, true);
        }
        apply(&p, &mut ap);
        let pap = dot_m(&p, &ap, m);
        if !(pap > 0.0) {
            return (it, rn / bnorm, false);
        }
        let a = rz / pap;
        for i in 0..n {
            x[i] += a * p[i];
            r[i] -= a * ap[i];
        }
        precond(&r, &mut z);
        let rz_new = dot_m(&r, &z, m);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let res = dot_m(&r, &r, m).sqrt() / bnorm;
    (max_iter, res, res <= rtol)
}

/// Sparse Cholesky for SPD systems assembled from triplets whose pattern
/// stays fixed between calls. The fill-reducing analysis is done once.
#[derive(Default)]
pub struct SparseCholesky {
    symbolic: Option<SymbolicLlt<usize>>,
}

impl SparseCholesky {
    pub fn new() -> Self {
        Self::default()
    }

    /// Solve A x = b in place; A = Σ triplets. Returns false if A is not
    /// numerically positive definite.
    pub fn solve(&mut self, n: usize, entries: &[(usize, usize, f64)], rhs: &mut [f64]) -> bool {
        let triplets: Vec<Triplet<usize, usize, f64>> =
            entries.iter().map(|&(i, j, v)| Triplet::new(i, j, v)).collect();
        let Ok(mat) = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets) else {
            return false;
        };
        let symbolic = match &self.symbolic {
            Some(s) => s.clone(),
            None => match SymbolicLlt::try_new(mat.symbolic(), Side::Lower) {
                Ok(s) => {
                    self.symbolic = Some(s.clone());
                    s
                }
                Err(_) => return false,
            },
        };
        let Ok(llt) = Llt::try_new_with_symbolic(symbolic, mat.as_ref(), Side::Lower) else {
            return false;
        };
        let mut b = faer::Mat::<f64>::from_fn(n, 1, |i, _| rhs[i]);
        llt.solve_in_place(b.as_mut());
        for (i, x) in rhs.iter_mut().enumerate() {
            *x = b[(i, 0)];
        }
        rhs.iter().all(|x| x.is_finite())
    }
}
