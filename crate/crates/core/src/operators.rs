//! Discrete derivative, gradient, energy and Laplacians.
//!
//! Each cell c carries 2ⁿ one-sided derivatives, one per quadrant
//! σ ∈ {−1,+1}ⁿ: D^σu(c)_k = σ_k (u(c+σ_k e_k) − u(c)) / h_k, weighted by
//! m_c 2⁻ⁿ. On Dirichlet grids each ghost face (c, k, s) adds the ghost
//! cell's own derivative (−s u_c / h_k) e_k with weight m_c / 2. The energy
//! is ½ Σ weight · F*²(c, ·) over all of these, and Δu = −(∂𝓔/∂u)/m, so
//! the discrete integration by parts holds to round-off.

use serde::{Deserialize, Serialize};

use crate::field::{Domain, Grid, ScalarField, WeightField};
use crate::small::{self, Matrix, Vector, ZERO_M, ZERO_V};

/// Per-quadrant (and per ghost face) data with n components each.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadrantField {
    pub dim: usize,
    /// cell-major, then quadrant, then component
    pub interior: Vec<f64>,
    /// one value per boundary slot (component along the slot axis)
    pub boundary: Vec<f64>,
}

impl QuadrantField {
    pub fn zeros(grid: &Grid) -> QuadrantField {
        let n = grid.dim();
        QuadrantField {
            dim: n,
            interior: vec![0.0; grid.len() * (1 << n) * n],
            boundary: vec![0.0; grid.boundary_slots().len()],
        }
    }

    pub fn quadrants(&self) -> usize {
        1 << self.dim
    }

    /// Components at cell `c`, quadrant `q`.
    pub fn at(&self, c: usize, q: usize) -> &[f64] {
        let n = self.dim;
        let base = (c * self.quadrants() + q) * n;
        &self.interior[base..base + n]
    }

    pub fn at_mut(&mut self, c: usize, q: usize) -> &mut [f64] {
        let n = self.dim;
        let base = (c * self.quadrants() + q) * n;
        &mut self.interior[base..base + n]
    }

    pub fn max_abs(&self) -> f64 {
        self.interior
            .iter()
            .chain(&self.boundary)
            .fold(0.0_f64, |m, x| m.max(x.abs()))
    }
}

/// Du
#[derive(Debug, Clone, PartialEq)]
pub struct CovectorField(pub QuadrantField);

/// ∇u
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField(pub QuadrantField);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub energy: f64,
    /// energy contributed by each cell (including its ghost faces)
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell_energy: Option<Vec<f64>>,
}

/// Sign of axis k in quadrant q.
#[inline]
fn plus(q: usize, k: usize) -> bool {
    (q >> k) & 1 == 1
}

/// One-sided differences (D⁺, D⁻) and neighbour indices at a cell.
#[inline]
fn stencil(grid: &Grid, u: &[f64], c: usize) -> ([[f64; 2]; 3], [[Option<usize>; 2]; 3]) {
    let mut d = [[0.0; 2]; 3];
    let mut nb = [[None; 2]; 3];
    let uc = u[c];
    for k in 0..grid.dim() {
        let h = grid.h(k);
        let up = grid.neighbor(c, k, 1);
        let dn = grid.neighbor(c, k, -1);
        d[k][1] = (up.map_or(0.0, |j| u[j]) - uc) / h;
        d[k][0] = (uc - dn.map_or(0.0, |j| u[j])) / h;
        nb[k] = [dn, up];
    }
    (d, nb)
}

#[inline]
fn quadrant_vector(n: usize, d: &[[f64; 2]; 3], q: usize) -> Vector {
    let mut a = ZERO_V;
    for k in 0..n {
        a[k] = d[k][usize::from(plus(q, k))];
    }
    a
}

/// Covector −s·u_c/h_k along the slot axis.
#[inline]
fn slot_vector(grid: &Grid, u: &[f64], c: usize, axis: usize, sign: i8) -> Vector {
    let mut a = ZERO_V;
    a[axis] = -f64::from(sign) * u[c] / grid.h(axis);
    a
}

/// Scatter the pairing of a quadrant flux ψ with D(·) into `out`:
/// out_j += weight · ∂(ψ·D^σv(c))/∂v_j.
#[inline]
fn scatter(
    n: usize,
    grid: &Grid,
    c: usize,
    q: usize,
    nb: &[[Option<usize>; 2]; 3],
    psi: &Vector,
    weight: f64,
    out: &mut [f64],
) {
    for k in 0..n {
        let j = weight * psi[k] / grid.h(k);
        if plus(q, k) {
            if let Some(up) = nb[k][1] {
                out[up] += j;
            }
            out[c] -= j;
        } else {
            out[c] += j;
            if let Some(dn) = nb[k][0] {
                out[dn] -= j;
            }
        }
    }
}

/// Du on every quadrant and ghost face; linear in u.
pub fn derivative(grid: &Grid, u: &[f64]) -> CovectorField {
    let n = grid.dim();
    let mut out = QuadrantField::zeros(grid);
    for c in 0..grid.len() {
        let (d, _) = stencil(grid, u, c);
        for q in 0..(1 << n) {
            let a = quadrant_vector(n, &d, q);
            out.at_mut(c, q).copy_from_slice(&a[..n]);
        }
    }
    for (i, s) in grid.boundary_slots().iter().enumerate() {
        out.boundary[i] = slot_vector(grid, u, s.cell, s.axis, s.sign)[s.axis];
    }
    CovectorField(out)
}

/// ⟨α, X⟩_m summed over quadrants and ghost faces.
pub fn pairing(grid: &Grid, weight: &WeightField, a: &CovectorField, x: &VectorField) -> f64 {
    let n = grid.dim();
    let nq = 1usize << n;
    let mut s = 0.0;
    for c in 0..grid.len() {
        let w = weight.m[c] / nq as f64;
        for q in 0..nq {
            let dot: f64 = a.0.at(c, q).iter().zip(x.0.at(c, q)).map(|(p, r)| p * r).sum();
            s += w * dot;
        }
    }
    for (i, slot) in grid.boundary_slots().iter().enumerate() {
        s += 0.5 * weight.m[slot.cell] * a.0.boundary[i] * x.0.boundary[i];
    }
    s
}

/// Negative m-adjoint of `derivative`: ⟨Dv, X⟩_m = −⟨v, div X⟩_m.
pub fn divergence(grid: &Grid, weight: &WeightField, x: &VectorField) -> ScalarField {
    let n = grid.dim();
    let nq = 1usize << n;
    let zeros = vec![0.0; grid.len()];
    let mut acc = vec![0.0; grid.len()];
    for c in 0..grid.len() {
        let (_, nb) = stencil(grid, &zeros, c);
        let w = weight.m[c] / nq as f64;
        for q in 0..nq {
            let psi = small::from_slice(n, x.0.at(c, q));
            scatter(n, grid, c, q, &nb, &psi, w, &mut acc);
        }
    }
    for (i, slot) in grid.boundary_slots().iter().enumerate() {
        let k = slot.axis;
        acc[slot.cell] +=
            0.5 * weight.m[slot.cell] * x.0.boundary[i] * (-f64::from(slot.sign) / grid.h(k));
    }
    ScalarField::new(
        acc.iter()
            .zip(&weight.m)
            .map(|(a, m)| -a / m)
            .collect(),
    )
}

/// ∇u = J*(Du) quadrant by quadrant.
pub fn gradient(dom: &Domain, u: &[f64]) -> VectorField {
    let grid = &dom.grid;
    let n = grid.dim();
    let du = derivative(grid, u);
    let mut out = QuadrantField::zeros(grid);
    for c in 0..grid.len() {
        for q in 0..(1 << n) {
            let a = small::from_slice(n, du.0.at(c, q));
            let l = dom.field.dual_at(c, &a, false);
            out.at_mut(c, q).copy_from_slice(&l.grad[..n]);
        }
    }
    for (i, s) in grid.boundary_slots().iter().enumerate() {
        let a = slot_vector(grid, u, s.cell, s.axis, s.sign);
        out.boundary[i] = dom.field.dual_at(s.cell, &a, false).grad[s.axis];
    }
    VectorField(out)
}

/// 𝓔(u) and, if requested, ∂𝓔/∂u written into `grad`.
pub fn energy_and_gradient(dom: &Domain, u: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
    let grid = &dom.grid;
    let n = grid.dim();
    let nq = 1usize << n;
    if let Some(g) = grad.as_deref_mut() {
        g.iter_mut().for_each(|x| *x = 0.0);
    }
    let mut e = 0.0;
    for c in 0..grid.len() {
        let (d, nb) = stencil(grid, u, c);
        let w = dom.weight.m[c] / nq as f64;
        for q in 0..nq {
            let a = quadrant_vector(n, &d, q);
            let l = dom.field.dual_at(c, &a, false);
            e += 0.5 * w * l.value * l.value;
            if let Some(g) = grad.as_deref_mut() {
                scatter(n, grid, c, q, &nb, &l.grad, w, g);
            }
        }
    }
    for s in grid.boundary_slots() {
        let a = slot_vector(grid, u, s.cell, s.axis, s.sign);
        let l = dom.field.dual_at(s.cell, &a, false);
        let w = 0.5 * dom.weight.m[s.cell];
        e += 0.5 * w * l.value * l.value;
        if let Some(g) = grad.as_deref_mut() {
            g[s.cell] += w * l.grad[s.axis] * (-f64::from(s.sign) / grid.h(s.axis));
        }
    }
    e
}

pub fn energy(dom: &Domain, u: &[f64]) -> f64 {
    energy_and_gradient(dom, u, None)
}

/// Energy with the per-cell breakdown.
pub fn energy_report(dom: &Domain, u: &[f64]) -> EnergyReport {
    let grid = &dom.grid;
    let n = grid.dim();
    let nq = 1usize << n;
    let mut cells = vec![0.0; grid.len()];
    for (c, ce) in cells.iter_mut().enumerate() {
        let (d, _) = stencil(grid, u, c);
        let w = dom.weight.m[c] / nq as f64;
        for q in 0..nq {
            let v = dom.field.dual_at(c, &quadrant_vector(n, &d, q), false).value;
            *ce += 0.5 * w * v * v;
        }
    }
    for s in grid.boundary_slots() {
        let a = slot_vector(grid, u, s.cell, s.axis, s.sign);
        let v = dom.field.dual_at(s.cell, &a, false).value;
        cells[s.cell] += 0.25 * dom.weight.m[s.cell] * v * v;
    }
    EnergyReport {
        energy: cells.iter().sum(),
        cell_energy: Some(cells),
    }
}

/// Δu = −(∂𝓔/∂u)/m.
pub fn laplacian(dom: &Domain, u: &[f64]) -> ScalarField {
    let mut g = vec![0.0; u.len()];
    energy_and_gradient(dom, u, Some(&mut g));
    for (x, m) in g.iter_mut().zip(&dom.weight.m) {
        *x = -*x / m;
    }
    ScalarField::new(g)
}

/// Relative size below which a one-sided derivative counts as zero.
pub const ZERO_DERIVATIVE_RTOL: f64 = 1e-14;

/// Which curvature the linearized operator carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Curvature {
    /// g*(Du), the exact Hessian of the energy
    Exact,
    /// a pointwise S ⪰ g* bounding ½F*² from above; differs from g* only for
    /// ℓᵖ-type norms with p > 2
    Majorant,
}

/// Frozen-coefficient operator w ↦ div(g*(Du) Dw).
///
/// Where Du vanishes, g* is taken at J(Z) with Z = (1,…,1)/√n, i.e. the
/// inverse of g(Z). An axis direction is avoided because g(e₁) degenerates
/// for ℓᵖ norms.
#[derive(Debug, Clone)]
pub struct WeightedLaplacian {
    grid: Grid,
    m: Vec<f64>,
    coeffs: Vec<Matrix>,
    slot_coeffs: Vec<f64>,
    fallbacks: usize,
}

impl WeightedLaplacian {
    pub fn new(dom: &Domain, u: &[f64]) -> WeightedLaplacian {
        WeightedLaplacian::build(dom, u, Curvature::Exact)
    }

    /// Same stencil with each g* replaced by the quadratic majorant of ½F*²
    /// (see [`Curvature::Majorant`]).
    pub fn majorant(dom: &Domain, u: &[f64]) -> WeightedLaplacian {
        WeightedLaplacian::build(dom, u, Curvature::Majorant)
    }

    fn build(dom: &Domain, u: &[f64], curvature: Curvature) -> WeightedLaplacian {
        let grid = &dom.grid;
        let n = grid.dim();
        let nq = 1usize << n;
        let du = derivative(grid, u);
        let threshold = ZERO_DERIVATIVE_RTOL * du.0.max_abs();
        let mut z = ZERO_V;
        for zk in z.iter_mut().take(n) {
            *zk = 1.0 / (n as f64).sqrt();
        }
        let mut fallbacks = 0;
        let mut coeff = |c: usize, a: &Vector| -> Matrix {
            if small::max_abs(n, a) <= threshold {
                fallbacks += 1;
                let jz = dom.field.primal_at(c, &z, false).grad;
                dom.field.dual_at(c, &jz, true).hess
            } else {
                match curvature {
                    Curvature::Exact => dom.field.dual_at(c, a, true).hess,
                    Curvature::Majorant => dom.field.dual_majorant_at(c, a),
                }
            }
        };
        let mut coeffs = vec![ZERO_M; grid.len() * nq];
        for c in 0..grid.len() {
            for q in 0..nq {
                let a = small::from_slice(n, du.0.at(c, q));
                coeffs[c * nq + q] = coeff(c, &a);
            }
        }
        let mut slot_coeffs = Vec::with_capacity(grid.boundary_slots().len());
        for s in grid.boundary_slots() {
            let a = slot_vector(grid, u, s.cell, s.axis, s.sign);
            slot_coeffs.push(coeff(s.cell, &a)[s.axis][s.axis]);
        }
        WeightedLaplacian {
            grid: grid.clone(),
            m: dom.weight.m.clone(),
            coeffs,
            slot_coeffs,
            fallbacks,
        }
    }

    /// Number of quadrants and ghost faces that used the fallback direction.
    pub fn fallback_count(&self) -> usize {
        self.fallbacks
    }

    /// ½⟨g* Dw, Dw⟩_m
    pub fn quadratic_form(&self, w: &[f64]) -> f64 {
        let grid = &self.grid;
        let n = grid.dim();
        let nq = 1usize << n;
        let mut s = 0.0;
        for c in 0..grid.len() {
            let (d, _) = stencil(grid, w, c);
            let wt = self.m[c] / nq as f64;
            for q in 0..nq {
                let a = quadrant_vector(n, &d, q);
                s += 0.5 * wt * small::quad_form(n, &self.coeffs[c * nq + q], &a);
            }
        }
        for (i, sl) in grid.boundary_slots().iter().enumerate() {
            let a = slot_vector(grid, w, sl.cell, sl.axis, sl.sign)[sl.axis];
            s += 0.25 * self.m[sl.cell] * self.slot_coeffs[i] * a * a;
        }
        s
    }

    /// Δ^{(u)}w written into `out`.
    pub fn apply_into(&self, w: &[f64], out: &mut [f64]) {
        let grid = &self.grid;
        let n = grid.dim();
        let nq = 1usize << n;
        out.iter_mut().for_each(|x| *x = 0.0);
        for c in 0..grid.len() {
            let (d, nb) = stencil(grid, w, c);
            let wt = self.m[c] / nq as f64;
            for q in 0..nq {
                let a = quadrant_vector(n, &d, q);
                let psi = small::matvec(n, &self.coeffs[c * nq + q], &a);
                scatter(n, grid, c, q, &nb, &psi, wt, out);
            }
        }
        for (i, sl) in grid.boundary_slots().iter().enumerate() {
            let a = slot_vector(grid, w, sl.cell, sl.axis, sl.sign)[sl.axis];
            let k = sl.axis;
            out[sl.cell] += 0.5 * self.m[sl.cell] * self.slot_coeffs[i] * a
                * (-f64::from(sl.sign) / grid.h(k));
        }
        for (x, m) in out.iter_mut().zip(&self.m) {
            *x = -*x / m;
        }
    }

    /// Diagonal of the operator w ↦ −Δ^{(u)}w.
    pub fn neg_diagonal(&self) -> Vec<f64> {
        let grid = &self.grid;
        let n = grid.dim();
        let nq = 1usize << n;
        let mut diag = vec![0.0; grid.len()];
        for (c, dc) in diag.iter_mut().enumerate() {
            let wt = self.m[c] / nq as f64;
            let mut s = 0.0;
            for q in 0..nq {
                let g = &self.coeffs[c * nq + q];
                // ∂D^σw/∂w_c = −σ_k/h_k
                let mut v = ZERO_V;
                for (k, vk) in v.iter_mut().enumerate().take(n) {
                    *vk = if plus(q, k) { -1.0 } else { 1.0 } / grid.h(k);
                }
                s += wt * small::quad_form(n, g, &v);
                // contributions where c is the neighbour of another cell
                for k in 0..n {
                    let h2 = grid.h(k) * grid.h(k);
                    let dir = if plus(q, k) { -1 } else { 1 };
                    if let Some(j) = grid.neighbor(c, k, dir) {
                        let gj = &self.coeffs[j * nq + q];
                        s += self.m[j] / nq as f64 * gj[k][k] / h2;
                    }
                }
            }
            *dc = s / self.m[c];
        }
        for (i, sl) in grid.boundary_slots().iter().enumerate() {
            let h2 = grid.h(sl.axis) * grid.h(sl.axis);
            diag[sl.cell] += 0.5 * self.slot_coeffs[i] / h2;
        }
        diag
    }

    /// Entries (i, j, K_ij) of the stiffness matrix K = −MΔ^{(u)}, i.e. the
    /// Euclidean Hessian of the quadratic form. Duplicates are meant to be
    /// summed; every coupling of the full stencil is emitted (zeros included)
    /// so the pattern only depends on the grid.
    pub fn stiffness(&self) -> Vec<(usize, usize, f64)> {
        let grid = &self.grid;
        let n = grid.dim();
        let nq = 1usize << n;
        let mut out = Vec::with_capacity(grid.len() * nq * (n + 1) * (n + 1));
        for c in 0..grid.len() {
            let wt = self.m[c] / nq as f64;
            for q in 0..nq {
                let g = &self.coeffs[c * nq + q];
                // D^σw = Σ_i b_i w_{idx_i}
                let mut idx = [c; 4];
                let mut b = [ZERO_V; 4];
                let mut len = 1;
                for k in 0..n {
                    let sg = if plus(q, k) { 1.0 } else { -1.0 };
                    b[0][k] = -sg / grid.h(k);
                    if let Some(j) = grid.neighbor(c, k, if plus(q, k) { 1 } else { -1 }) {
                        idx[len] = j;
                        b[len][k] = sg / grid.h(k);
                        len += 1;
                    }
                }
                for i in 0..len {
                    let gb = small::matvec(n, g, &b[i]);
                    for j in 0..len {
                        out.push((idx[j], idx[i], wt * small::dot(n, &b[j], &gb)));
                    }
                }
            }
        }
        for (i, sl) in grid.boundary_slots().iter().enumerate() {
            let h2 = grid.h(sl.axis) * grid.h(sl.axis);
            out.push((sl.cell, sl.cell, 0.5 * self.m[sl.cell] * self.slot_coeffs[i] / h2));
        }
        out
    }

    pub fn apply(&self, w: &[f64]) -> ScalarField {
        let mut out = vec![0.0; w.len()];
        self.apply_into(w, &mut out);
        ScalarField::new(out)
    }
}

/// Δ^{(u)}w
pub fn weighted_laplacian(dom: &Domain, u: &[f64], w: &[f64]) -> ScalarField {
    WeightedLaplacian::new(dom, u).apply(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::GridSpec;
    use crate::norms::NormSpec;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn affine_derivative_is_exact_in_interior() {
        let dom = Domain::uniform(&GridSpec::dirichlet(&[6, 7], &[1.0, 2.0]), &NormSpec::euclidean(2)).unwrap();
        let u = dom.grid.scalar_field(|x| 0.3 * x[0] - 1.2 * x[1]);
        let du = derivative(&dom.grid, &u);
        let c = dom.grid.index(&[2, 3, 0]);
        for q in 0..4 {
            let a = du.0.at(c, q);
            assert!((a[0] - 0.3).abs() < 1e-12 && (a[1] + 1.2).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_has_zero_derivative_and_laplacian() {
        let dom = Domain::uniform(&GridSpec::periodic(&[5, 4], &[1.0, 1.0]), &NormSpec::lp(2, 4.0)).unwrap();
        let u = vec![2.5; dom.grid.len()];
        assert_eq!(derivative(&dom.grid, &u).0.max_abs(), 0.0);
        assert!(laplacian(&dom, &u).iter().all(|x| *x == 0.0));
        assert_eq!(energy(&dom, &u), 0.0);
    }

    #[test]
    fn adjointness_dirichlet() {
        let dom = Domain::uniform(&GridSpec::dirichlet(&[5, 6], &[1.0, 1.3]), &NormSpec::euclidean(2)).unwrap();
        let g = &dom.grid;
        let u = random(g.len(), 1);
        let mut psi = QuadrantField::zeros(g);
        let r1 = random(psi.interior.len(), 2);
        let r2 = random(psi.boundary.len(), 3);
        psi.interior.copy_from_slice(&r1);
        psi.boundary.copy_from_slice(&r2);
        let psi = VectorField(psi);
        let lhs = pairing(g, &dom.weight, &derivative(g, &u), &psi);
        let rhs = -dom.weight.inner(&u, &divergence(g, &dom.weight, &psi));
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn sine_wave_energy() {
        let dom = Domain::uniform(&GridSpec::periodic(&[16, 16], &[1.0, 1.0]), &NormSpec::euclidean(2)).unwrap();
        let u = dom.grid.scalar_field(|x| (2.0 * std::f64::consts::PI * x[0]).sin() / (2.0 * std::f64::consts::PI));
        let e = energy(&dom, &u);
        assert!((e - 0.25).abs() < 0.01, "{e}");
    }

    #[test]
    fn lp4_gradient_not_additive() {
        let dom = Domain::uniform(&GridSpec::periodic(&[4, 4], &[1.0, 1.0]), &NormSpec::lp(2, 4.0)).unwrap();
        let u = random(16, 4);
        let v = random(16, 5);
        let uv: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + b).collect();
        let gu = gradient(&dom, &u);
        let gv = gradient(&dom, &v);
        let guv = gradient(&dom, &uv);
        let diff = guv
            .0
            .interior
            .iter()
            .zip(gu.0.interior.iter().zip(&gv.0.interior))
            .fold(0.0_f64, |m, (a, (b, c))| m.max((a - b - c).abs()));
        assert!(diff > 1e-3);
    }

    #[test]
    fn quadratic_gradient_is_inverse_matrix() {
        let a = vec![2.0, 0.5, 0.5, 1.0];
        let dom = Domain::uniform(&GridSpec::periodic(&[5, 5], &[1.0, 1.0]), &NormSpec::quadratic(2, a)).unwrap();
        let u = random(25, 6);
        let du = derivative(&dom.grid, &u);
        let gu = gradient(&dom, &u);
        let inv = [[1.0 / 1.75, -0.5 / 1.75], [-0.5 / 1.75, 2.0 / 1.75]];
        for c in 0..25 {
            for q in 0..4 {
                let d = du.0.at(c, q);
                let g = gu.0.at(c, q);
                for i in 0..2 {
                    let want = inv[i][0] * d[0] + inv[i][1] * d[1];
                    assert!((g[i] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn weak_identity_and_mass_neutrality() {
        for spec in [
            GridSpec::dirichlet(&[7, 6], &[1.0, 1.0]),
            GridSpec::periodic(&[7, 6], &[1.0, 1.0]),
        ] {
            let dom = Domain::uniform(&spec, &NormSpec::lp(2, 3.0)).unwrap();
            let u = random(dom.grid.len(), 7);
            let v = random(dom.grid.len(), 8);
            let lap = laplacian(&dom, &u);
            let lhs = dom.weight.inner(&v, &lap);
            let rhs = -pairing(&dom.grid, &dom.weight, &derivative(&dom.grid, &v), &gradient(&dom, &u));
            assert!((lhs - rhs).abs() < 1e-12 * rhs.abs().max(1.0));
            assert!(dom.weight.inner(&u, &lap) <= 0.0);
            if dom.grid.is_periodic() {
                assert!(dom.weight.integral(&lap).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weighted_laplacian_reproduces_laplacian() {
        let dom = Domain::uniform(&GridSpec::dirichlet(&[6, 5], &[1.0, 1.0]), &NormSpec::lp(2, 4.0)).unwrap();
        let u = random(dom.grid.len(), 9);
        let a = laplacian(&dom, &u);
        let b = weighted_laplacian(&dom, &u, &u);
        let scale = a.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12 * scale);
        }
    }

    #[test]
    fn weighted_laplacian_self_adjoint_and_kills_constants() {
        let dom = Domain::uniform(&GridSpec::periodic(&[6, 5], &[1.0, 1.0]), &NormSpec::lp(2, 3.0)).unwrap();
        let u = random(dom.grid.len(), 10);
        let op = WeightedLaplacian::new(&dom, &u);
        let v = random(dom.grid.len(), 11);
        let w = random(dom.grid.len(), 12);
        let a = dom.weight.inner(&v, &op.apply(&w));
        let b = dom.weight.inner(&w, &op.apply(&v));
        assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        let c = op.apply(&vec![1.0; dom.grid.len()]);
        assert!(c.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn diagonal_matches_unit_vectors() {
        for spec in [
            GridSpec::dirichlet(&[4, 5], &[1.0, 1.0]),
            GridSpec::periodic(&[4, 5], &[1.0, 1.3]),
        ] {
            let dom = Domain::uniform(&spec, &NormSpec::lp(2, 4.0)).unwrap();
            let op = WeightedLaplacian::new(&dom, &random(20, 13));
            let diag = op.neg_diagonal();
            for c in 0..20 {
                let mut e = vec![0.0; 20];
                e[c] = 1.0;
                let col = op.apply(&e);
                assert!((diag[c] + col[c]).abs() < 1e-10 * diag[c].abs());
            }
        }
    }

    #[test]
    fn fallback_used_for_constant_u() {
        let dom = Domain::uniform(&GridSpec::dirichlet(&[4, 4], &[1.0, 1.0]), &NormSpec::lp(2, 4.0)).unwrap();
        let op = WeightedLaplacian::new(&dom, &vec![0.0; 16]);
        assert_eq!(op.fallback_count(), 16 * 4 + 16);
        assert!(op.quadratic_form(&random(16, 3)) > 0.0);
    }

    #[test]
    fn stiffness_matches_operator() {
        for spec in [
            GridSpec::dirichlet(&[4, 5], &[1.0, 1.0]),
            GridSpec::periodic(&[4, 5], &[1.0, 1.3]),
            GridSpec::periodic(&[3, 3], &[1.0, 1.0]),
        ] {
            let dom = Domain::uniform(&spec, &NormSpec::lp(2, 3.0)).unwrap();
            let len = dom.grid.len();
            let op = WeightedLaplacian::new(&dom, &random(len, 5));
            let mut k = vec![vec![0.0; len]; len];
            for (i, j, v) in op.stiffness() {
                k[i][j] += v;
            }
            let w = random(len, 6);
            let lw = op.apply(&w);
            for i in 0..len {
                let kw: f64 = (0..len).map(|j| k[i][j] * w[j]).sum();
                assert!((kw + dom.weight.m[i] * lw[i]).abs() < 1e-9 * (1.0 + kw.abs()));
                for j in 0..len {
                    assert!((k[i][j] - k[j][i]).abs() < 1e-9 * (1.0 + k[i][j].abs()));
                }
            }
        }
    }

    #[test]
    fn majorant_dominates_exact() {
        let dom = Domain::uniform(&GridSpec::periodic(&[5, 5], &[1.0, 1.0]), &NormSpec::lp(2, 4.0)).unwrap();
        let u = random(25, 8);
        let exact = WeightedLaplacian::new(&dom, &u);
        let maj = WeightedLaplacian::majorant(&dom, &u);
        for seed in 0..10 {
            let w = random(25, 100 + seed);
            assert!(maj.quadratic_form(&w) >= exact.quadratic_form(&w) * (1.0 - 1e-12));
        }
        // quadratic norms are their own majorant
        let dom = Domain::uniform(&GridSpec::periodic(&[5, 5], &[1.0, 1.0]), &NormSpec::euclidean(2)).unwrap();
        let w = random(25, 9);
        let a = WeightedLaplacian::new(&dom, &u).quadratic_form(&w);
        assert_eq!(a, WeightedLaplacian::majorant(&dom, &u).quadratic_form(&w));
    }
}
