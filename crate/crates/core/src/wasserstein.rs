//! One-dimensional optimal transport for nonsymmetric costs d(x,y) = F(y−x):
//! quantile W₂, c-transforms, entropy, Fisher information, JKO steps and
//! the check that JKO reproduces the heat flow of the reversed norm.

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::comparison::{evolve_at, ComparisonError};
use crate::field::{
    distance_field, Boundary, DistanceDirection, Domain, FieldError, FinslerField, Grid, ScalarField,
    WeightField,
};
use crate::flow::{evolve, FlowError, SolverConfig};
use crate::norms::NormSpec;
use crate::operators::{derivative, pairing, QuadrantField, VectorField};
use crate::optim::SparseCholesky;
use crate::report::{ladder, Report};
use crate::small;

/// Densities below this are treated as 0 in entropy and Fisher sums.
pub const DENSITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum WassersteinError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("total mass {0} is not 1")]
    Mass(f64),
    #[error("densities live on different grids")]
    GridMismatch,
    #[error("JKO step did not converge: {0}")]
    NoConvergence(String),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Comparison(#[from] ComparisonError),
}

/// F(ξ) = aξ for ξ ≥ 0 and b|ξ| for ξ < 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Norm1D {
    a: f64,
    b: f64,
}

impl Norm1D {
    pub fn new(a: f64, b: f64) -> Result<Norm1D, WassersteinError> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(WassersteinError::Invalid(format!("slopes must be > 0, got ({a}, {b})")));
        }
        Ok(Norm1D { a, b })
    }

    pub fn slopes(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn value(&self, x: f64) -> f64 {
        if x >= 0.0 {
            self.a * x
        } else {
            -self.b * x
        }
    }

    /// the slope that applies at x (right one at 0)
    fn slope(&self, x: f64) -> f64 {
        if x >= 0.0 {
            self.a
        } else {
            self.b
        }
    }

    pub fn reverse(&self) -> Norm1D {
        Norm1D { a: self.b, b: self.a }
    }

    pub fn spec(&self) -> NormSpec {
        NormSpec::two_slope(self.a, self.b)
    }
}

impl TryFrom<&NormSpec> for Norm1D {
    type Error = WassersteinError;

    fn try_from(spec: &NormSpec) -> Result<Norm1D, WassersteinError> {
        match spec {
            NormSpec::TwoSlope1d { a, b, .. } => Norm1D::new(*a, *b),
            NormSpec::Quadratic { dim: 1, a } => Norm1D::new(a[0].sqrt(), a[0].sqrt()),
            _ => Err(WassersteinError::Invalid("1D transport needs a two_slope_1d or 1D quadratic norm".into())),
        }
    }
}

/// A probability density ρ with respect to the cell measure m on a 1D grid.
#[derive(Debug, Clone)]
pub struct Density1D {
    grid: Grid,
    rho: ScalarField,
    mass: Vec<f64>,
    quantiles: Vec<f64>,
}

impl Density1D {
    /// Levels of the cached quantile table.
    pub const LEVELS: usize = 128;

    pub fn new(grid: &Grid, weight: &WeightField, rho: Vec<f64>) -> Result<Density1D, WassersteinError> {
        if grid.dim() != 1 {
            return Err(WassersteinError::Invalid("densities are one-dimensional".into()));
        }
        if rho.len() != grid.len() || weight.m.len() != grid.len() {
            return Err(WassersteinError::Invalid("density length differs from grid".into()));
        }
        if rho.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(WassersteinError::Invalid("density must be finite and ≥ 0".into()));
        }
        let mass: Vec<f64> = rho.iter().zip(&weight.m).map(|(r, m)| r * m).collect();
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(WassersteinError::Mass(total));
        }
        let mut d = Density1D {
            grid: grid.clone(),
            rho: ScalarField::new(rho),
            mass,
            quantiles: Vec::new(),
        };
        d.quantiles = (0..=Self::LEVELS).map(|k| d.quantile(k as f64 / Self::LEVELS as f64)).collect();
        Ok(d)
    }

    /// Rescales a nonnegative function to unit mass.
    pub fn normalized(grid: &Grid, weight: &WeightField, f: Vec<f64>) -> Result<Density1D, WassersteinError> {
        let total: f64 = f.iter().zip(&weight.m).map(|(r, m)| r * m).sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(WassersteinError::Mass(total));
        }
        Density1D::new(grid, weight, f.iter().map(|v| v / total).collect())
    }

    pub fn from_fn<F: Fn(f64) -> f64>(grid: &Grid, weight: &WeightField, f: F) -> Result<Density1D, WassersteinError> {
        let v = (0..grid.len()).map(|c| f(grid.position(c)[0])).collect();
        Density1D::normalized(grid, weight, v)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn rho(&self) -> &ScalarField {
        &self.rho
    }

    pub fn cell_masses(&self) -> &[f64] {
        &self.mass
    }

    /// Q(k/S) for k = 0..=S, S = [`Self::LEVELS`].
    pub fn quantile_table(&self) -> &[f64] {
        &self.quantiles
    }

    fn left_edge(&self) -> f64 {
        self.grid.position(0)[0] - 0.5 * self.grid.h(0)
    }

    /// Quantile of the measure spread uniformly inside each cell.
    pub fn quantile(&self, s: f64) -> f64 {
        let h = self.grid.h(0);
        let mut acc = 0.0;
        let last = self.mass.iter().rposition(|m| *m > 0.0).unwrap_or(0);
        for (j, m) in self.mass.iter().enumerate() {
            if *m > 0.0 && (acc + m >= s || j == last) {
                let f = ((s - acc) / m).clamp(0.0, 1.0);
                return self.left_edge() + (j as f64 + f) * h;
            }
            acc += m;
        }
        self.left_edge() + self.grid.len() as f64 * h
    }

    /// Quantiles at s_k = k/S, k = 0..S.
    fn knots(&self, levels: usize) -> Vec<f64> {
        let h = self.grid.h(0);
        let mut out = Vec::with_capacity(levels);
        let mut j = 0;
        let mut acc = 0.0;
        for k in 0..levels {
            let s = k as f64 / levels as f64;
            while j + 1 < self.mass.len() && (self.mass[j] <= 0.0 || acc + self.mass[j] < s) {
                acc += self.mass[j];
                j += 1;
            }
            let f = if self.mass[j] > 0.0 { ((s - acc) / self.mass[j]).clamp(0.0, 1.0) } else { 0.0 };
            out.push(self.left_edge() + (j as f64 + f) * h);
        }
        out
    }

    fn same_grid(&self, other: &Density1D) -> bool {
        self.grid.spec() == other.grid.spec()
    }
}

/// (∫₀¹ F(Q_ν(s) − Q_μ(s))² ds)^{1/2} for the cell masses placed at the
/// cell centres (positions are not wrapped on periodic grids). This is the
/// exact optimum of the discrete transport problem between the two atomic
/// measures.
pub fn w2_distance(mu: &Density1D, nu: &Density1D, norm: &Norm1D) -> Result<f64, WassersteinError> {
    if !mu.same_grid(nu) {
        return Err(WassersteinError::GridMismatch);
    }
    let x: Vec<f64> = (0..mu.grid.len()).map(|c| mu.grid.position(c)[0]).collect();
    let (mut i, mut j) = (0, 0);
    let (mut ri, mut rj) = (mu.mass[0], nu.mass[0]);
    let mut cost = 0.0;
    let n = x.len();
    loop {
        while ri <= 0.0 && i + 1 < n {
            i += 1;
            ri = mu.mass[i];
        }
        while rj <= 0.0 && j + 1 < n {
            j += 1;
            rj = nu.mass[j];
        }
        if ri <= 0.0 || rj <= 0.0 {
            break;
        }
        let q = ri.min(rj);
        cost += q * norm.value(x[j] - x[i]).powi(2);
        ri -= q;
        rj -= q;
        if i + 1 == n && ri <= 0.0 || j + 1 == n && rj <= 0.0 {
            break;
        }
    }
    Ok(cost.sqrt())
}

/// Which transform: φ^c(y) = inf_x c(x,y) − φ(x), or ψ^{c̄}(x) = inf_y c(x,y) − ψ(y),
/// with c = d²/2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    C,
    CBar,
}

/// c(x, y) = d(x, y)²/2 between all cells, row x.
pub struct Cost {
    n: usize,
    half_sq: Vec<f64>,
}

impl Cost {
    /// Largest grid for the dense table.
    pub const MAX_CELLS: usize = 4096;

    pub fn new(dom: &Domain) -> Result<Cost, WassersteinError> {
        let n = dom.grid.len();
        if n > Self::MAX_CELLS {
            return Err(WassersteinError::Invalid(format!("{n} cells exceed the brute-force limit {}", Self::MAX_CELLS)));
        }
        let mut half_sq = vec![0.0; n * n];
        for x in 0..n {
            let d = distance_field(&dom.field, &dom.grid, x, DistanceDirection::FromZ);
            for y in 0..n {
                half_sq[x * n + y] = 0.5 * d.values[y] * d.values[y];
            }
        }
        Ok(Cost { n, half_sq })
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.half_sq[x * self.n + y]
    }

    pub fn transform(&self, phi: &[f64], which: Transform) -> ScalarField {
        let n = self.n;
        let out = (0..n)
            .map(|a| {
                (0..n)
                    .map(|b| match which {
                        Transform::C => self.at(b, a) - phi[b],
                        Transform::CBar => self.at(a, b) - phi[b],
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        ScalarField::new(out)
    }
}

/// Brute-force c- or c̄-transform over grid points.
pub fn c_transform(dom: &Domain, phi: &[f64], which: Transform) -> Result<ScalarField, WassersteinError> {
    if phi.len() != dom.grid.len() || phi.iter().any(|v| !v.is_finite()) {
        return Err(WassersteinError::Invalid("φ must be finite on every cell".into()));
    }
    Ok(Cost::new(dom)?.transform(phi, which))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConcavityDetails {
    /// sup |φ|
    pub sup_abs: f64,
    /// sup F(∇(−φ)) = sup F*(−Dφ)
    pub sup_gradient: f64,
    /// sup |d²/dt² φ(γ(t))| along unit-speed lattice lines
    pub sup_second: f64,
    /// max((φ^c)^{c̄} − φ) ≥ 0; zero iff φ is d²/2-concave on the grid
    pub gap: f64,
    /// max(φ − (φ^c)^{c̄}), never positive beyond round-off
    pub violation: f64,
    /// [`grid_tolerance`] of the domain
    pub grid_tolerance: f64,
}

/// Largest cost of a single lattice step, max ½F(±h_k e_k)²: the
/// resolution of a brute-force transform over grid points.
pub fn grid_tolerance(dom: &Domain) -> f64 {
    let g = &dom.grid;
    let n = g.dim();
    let mut t = 0.0_f64;
    for k in 0..n {
        for s in [-1.0, 1.0] {
            let mut e = vec![0.0; n];
            e[k] = s * g.h(k);
            t = t.max(0.5 * dom.field.value_at(0, &e).powi(2));
        }
    }
    t
}

fn lattice_offsets(dim: usize) -> Vec<[i64; 2]> {
    if dim == 1 {
        vec![[1, 0], [-1, 0]]
    } else {
        vec![[1, 0], [0, 1], [1, 1], [1, -1], [-1, 0], [0, -1], [-1, -1], [-1, 1]]
    }
}

fn shifted(grid: &Grid, c: usize, off: &[i64; 2]) -> Option<usize> {
    let mut co = grid.coords(c);
    for k in 0..grid.dim() {
        let n = grid.cells()[k] as i64;
        let v = co[k] as i64 + off[k];
        co[k] = if grid.is_periodic() {
            v.rem_euclid(n) as usize
        } else if (0..n).contains(&v) {
            v as usize
        } else {
            return None;
        };
    }
    Some(grid.index(&co))
}

/// The lemma's three smallness quantities and the achieved gap. Certified
/// when gap ≤ `tolerance` and the violation is round-off.
pub fn cconcavity_check(dom: &Domain, phi: &[f64], tolerance: f64) -> Result<Report, WassersteinError> {
    let g = &dom.grid;
    if g.dim() > 2 {
        return Err(WassersteinError::Invalid("c-concavity checks are 1D or 2D".into()));
    }
    if !dom.field.is_uniform() {
        return Err(WassersteinError::Invalid("c-concavity check needs a uniform field".into()));
    }
    let cost = Cost::new(dom)?;
    let phic = cost.transform(phi, Transform::C);
    let back = cost.transform(&phic, Transform::CBar);
    let sup_abs = phi.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let du = derivative(g, phi);
    let n = g.dim();
    let mut sup_gradient = 0.0_f64;
    for c in 0..g.len() {
        for q in 0..(1 << n) {
            let a: Vec<f64> = du.0.at(c, q).iter().map(|v| -v).collect();
            sup_gradient = sup_gradient.max(dom.field.dual_value_at(c, &a));
        }
    }
    let mut sup_second = 0.0_f64;
    for off in lattice_offsets(n) {
        let e: Vec<f64> = (0..n).map(|k| off[k] as f64 * g.h(k)).collect();
        let speed = dom.field.value_at(0, &e);
        let back_off = [-off[0], -off[1]];
        for c in 0..g.len() {
            if let (Some(p), Some(m)) = (shifted(g, c, &off), shifted(g, c, &back_off)) {
                let d2 = (phi[p] - 2.0 * phi[c] + phi[m]) / (speed * speed);
                sup_second = sup_second.max(d2.abs());
            }
        }
    }
    let gap = back.iter().zip(phi).map(|(b, p)| b - p).fold(f64::NEG_INFINITY, f64::max);
    let violation = phi.iter().zip(back.iter()).map(|(p, b)| p - b).fold(f64::NEG_INFINITY, f64::max);
    let scale = 1e-12 * (1.0 + sup_abs + cost.half_sq.iter().cloned().fold(0.0, f64::max));
    let details = ConcavityDetails {
        sup_abs,
        sup_gradient,
        sup_second,
        gap,
        violation,
        grid_tolerance: grid_tolerance(dom),
    };
    let mut rep = Report::new(
        "c_concavity",
        json!({"cells": g.cells(), "smallness": sup_abs.max(sup_gradient).max(sup_second)}),
        gap,
        tolerance,
    )
    .with_details(&details);
    rep.certified &= violation <= scale;
    Ok(rep)
}

/// Σ ρ log ρ · m, cells under the floor contributing 0.
pub fn entropy(weight: &WeightField, rho: &[f64]) -> f64 {
    rho.iter()
        .zip(&weight.m)
        .filter(|(r, _)| **r >= DENSITY_FLOOR)
        .map(|(r, m)| r * r.ln() * m)
        .sum()
}

/// Σ over quadrants of weight·F*(−D^σρ)²/ρ_c, i.e. ∫ F(∇(−ρ))²/ρ dm;
/// cells under the floor are skipped.
pub fn fisher_information(dom: &Domain, rho: &[f64]) -> f64 {
    let g = &dom.grid;
    let n = g.dim();
    let nq = 1usize << n;
    let du = derivative(g, rho);
    let mut s = 0.0;
    for c in 0..g.len() {
        if rho[c] < DENSITY_FLOOR {
            continue;
        }
        let w = dom.weight.m[c] / nq as f64;
        for q in 0..nq {
            let a = small::scale(n, -1.0, &small::from_slice(n, du.0.at(c, q)));
            let f = dom.field.dual_at(c, &a, false).value;
            s += w * f * f / rho[c];
        }
    }
    for (i, slot) in g.boundary_slots().iter().enumerate() {
        if rho[slot.cell] < DENSITY_FLOOR {
            continue;
        }
        let mut a = small::ZERO_V;
        a[slot.axis] = -du.0.boundary[i];
        let f = dom.field.dual_at(slot.cell, &a, false).value;
        s += 0.5 * dom.weight.m[slot.cell] * f * f / rho[slot.cell];
    }
    s
}

/// Φ = ∇(−ρ)/ρ per quadrant (0 under the floor).
pub fn entropy_velocity(dom: &Domain, rho: &[f64]) -> VectorField {
    let g = &dom.grid;
    let n = g.dim();
    let du = derivative(g, rho);
    let mut out = QuadrantField::zeros(g);
    for c in 0..g.len() {
        if rho[c] < DENSITY_FLOOR {
            continue;
        }
        for q in 0..(1 << n) {
            let a = small::scale(n, -1.0, &small::from_slice(n, du.0.at(c, q)));
            let v = dom.field.dual_at(c, &a, false).grad;
            out.at_mut(c, q).copy_from_slice(&small::scale(n, 1.0 / rho[c], &v)[..n]);
        }
    }
    for (i, slot) in g.boundary_slots().iter().enumerate() {
        if rho[slot.cell] < DENSITY_FLOOR {
            continue;
        }
        let mut a = small::ZERO_V;
        a[slot.axis] = -du.0.boundary[i];
        out.boundary[i] = dom.field.dual_at(slot.cell, &a, false).grad[slot.axis] / rho[slot.cell];
    }
    VectorField(out)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ContinuityResidual {
    /// max over steps and test functions of |d/dt∫ψρ − ∫Dψ(Φ)ρ|
    pub absolute: f64,
    /// `absolute` over the largest |∫Dψ(Φ)ρ|
    pub relative: f64,
}

fn test_functions(grid: &Grid, modes: usize) -> Vec<ScalarField> {
    let mut out = Vec::new();
    let tau = 2.0 * std::f64::consts::PI;
    for k in 0..grid.dim() {
        let l = grid.lengths()[k];
        let o = grid.spec().origin.as_ref().map_or(0.0, |o| o[k]);
        for j in 1..=modes {
            let jf = j as f64;
            if grid.is_periodic() {
                out.push(grid.scalar_field(|x| (tau * jf * (x[k] - o) / l).cos()));
                out.push(grid.scalar_field(|x| (tau * jf * (x[k] - o) / l).sin()));
            } else {
                out.push(grid.scalar_field(|x| (std::f64::consts::PI * jf * (x[k] - o) / l).sin()));
            }
        }
    }
    out
}

/// Weak residual of ∂ₜρ + div(Φρ) = 0 on a trajectory against the first
/// `modes` Fourier modes per axis (trapezoid in time).
pub fn continuity_residual<V: Fn(&Domain, &[f64]) -> VectorField>(
    dom: &Domain,
    times: &[f64],
    states: &[ScalarField],
    velocity: V,
    modes: usize,
) -> Result<ContinuityResidual, WassersteinError> {
    if times.len() != states.len() || times.len() < 2 {
        return Err(WassersteinError::Invalid("need ≥ 2 states with matching times".into()));
    }
    let g = &dom.grid;
    let psi = test_functions(g, modes);
    let dpsi: Vec<_> = psi.iter().map(|p| derivative(g, p)).collect();
    let flux = |rho: &ScalarField| -> Vec<f64> {
        let mut v = velocity(dom, rho);
        for c in 0..g.len() {
            for q in 0..v.0.quadrants() {
                for x in v.0.at_mut(c, q) {
                    *x *= rho[c];
                }
            }
        }
        for (i, slot) in g.boundary_slots().iter().enumerate() {
            v.0.boundary[i] *= rho[slot.cell];
        }
        dpsi.iter().map(|d| pairing(g, &dom.weight, d, &v)).collect()
    };
    let mut prev = flux(&states[0]);
    let (mut abs, mut scale) = (0.0_f64, 0.0_f64);
    for k in 1..times.len() {
        let dt = times[k] - times[k - 1];
        if !(dt > 0.0) {
            return Err(WassersteinError::Invalid("times must increase".into()));
        }
        let next = flux(&states[k]);
        for (j, p) in psi.iter().enumerate() {
            let dm = dom.weight.inner(p, &states[k]) - dom.weight.inner(p, &states[k - 1]);
            let f = 0.5 * (prev[j] + next[j]);
            abs = abs.max((dm / dt - f).abs());
            scale = scale.max(f.abs());
        }
        prev = next;
    }
    Ok(ContinuityResidual {
        absolute: abs,
        relative: if scale > 0.0 { abs / scale } else { abs },
    })
}

/// Inner solver settings of [`jko_step`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JkoConfig {
    /// S, the number of quantile control points
    pub levels: usize,
    /// Newton decrement threshold on the objective
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for JkoConfig {
    fn default() -> Self {
        JkoConfig {
            levels: 128,
            tol: 1e-14,
            max_iter: 200,
        }
    }
}

/// Lifted quantile knots of a measure on a circle of length `period`:
/// y_k = Q(k/S), y_{k+S} = y_k + period.
#[derive(Debug, Clone)]
pub struct Knots {
    pub y: Vec<f64>,
    pub period: f64,
}

impl Knots {
    pub fn from_density(mu: &Density1D, levels: usize) -> Knots {
        Knots {
            y: mu.knots(levels),
            period: mu.grid.lengths()[0],
        }
    }

    fn gap(&self, k: usize) -> f64 {
        let s = self.y.len();
        if k + 1 < s {
            self.y[k + 1] - self.y[k]
        } else {
            self.y[0] + self.period - self.y[k]
        }
    }

    /// Cell masses of the piecewise-uniform measure (mass 1/S per piece).
    pub fn bin(&self, grid: &Grid) -> Vec<f64> {
        let n = grid.len();
        let h = grid.h(0);
        let left = grid.position(0)[0] - 0.5 * h;
        let s = self.y.len();
        let mut out = vec![0.0; n];
        for k in 0..s {
            let (a, len) = (self.y[k], self.gap(k));
            let dens = 1.0 / (s as f64 * len);
            // walk the cells the piece covers, wrapping around
            let mut x = a;
            let end = a + len;
            while x < end {
                let rel = (x - left) / h;
                let cell = rel.floor();
                let next = (left + (cell + 1.0) * h).min(end);
                let idx = (cell as i64).rem_euclid(n as i64) as usize;
                out[idx] += dens * (next - x);
                if next <= x {
                    break;
                }
                x = next;
            }
        }
        out
    }

    pub fn to_density(&self, grid: &Grid, weight: &WeightField) -> Result<Density1D, WassersteinError> {
        let masses = self.bin(grid);
        let total: f64 = masses.iter().sum();
        let rho = masses.iter().zip(&weight.m).map(|(q, m)| q / total / m).collect();
        Density1D::new(grid, weight, rho)
    }
}

/// V = −log(dm/dx), linear between cell centres, periodic.
struct Potential<'a> {
    grid: &'a Grid,
    v: &'a [f64],
    flat: bool,
}

impl Potential<'_> {
    fn eval(&self, x: f64) -> (f64, f64) {
        if self.flat {
            return (0.0, 0.0);
        }
        let h = self.grid.h(0);
        let n = self.v.len() as i64;
        let rel = (x - self.grid.position(0)[0]) / h;
        let j = rel.floor();
        let f = rel - j;
        let a = self.v[(j as i64).rem_euclid(n) as usize];
        let b = self.v[(j as i64 + 1).rem_euclid(n) as usize];
        ((1.0 - f) * a + f * b, (b - a) / h)
    }
}

fn jko_objective(y: &[f64], x: &[f64], period: f64, norm: &Norm1D, pot: &Potential, delta: f64) -> Option<f64> {
    let s = y.len();
    let sf = s as f64;
    let mut val = 0.0;
    for k in 0..s {
        let next = if k + 1 < s { y[k + 1] } else { y[0] + period };
        let gap = next - y[k];
        if !(gap > 0.0) {
            return None;
        }
        val += -(sf * gap).ln() + pot.eval(0.5 * (y[k] + next)).0;
        val += norm.value(y[k] - x[k]).powi(2) / (2.0 * delta);
    }
    Some(val / sf)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JkoStats {
    pub iterations: usize,
    pub objective: f64,
    pub objective_at_start: f64,
    pub decrement: f64,
}

/// One JKO step in knot form: minimizes
/// Ent(ν) + d_W(μ, ν)²/(2δ) over ν = piecewise-uniform with knots y,
/// where μ has knots x and the coupling is x_k ↦ y_k.
pub fn jko_knots(
    mu: &Knots,
    norm: &Norm1D,
    grid: &Grid,
    weight: &WeightField,
    delta: f64,
    cfg: &JkoConfig,
) -> Result<(Knots, JkoStats), WassersteinError> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(WassersteinError::Invalid(format!("δ = {delta} not > 0")));
    }
    let s = mu.y.len();
    if s < 3 {
        return Err(WassersteinError::Invalid("need at least 3 quantile levels".into()));
    }
    let pot = Potential {
        grid,
        v: &weight.v,
        flat: weight.v.iter().all(|v| *v == weight.v[0]),
    };
    let x = &mu.y;
    let period = mu.period;
    let sf = s as f64;
    let mut y = x.clone();
    let start = jko_objective(&y, x, period, norm, &pot, delta)
        .ok_or_else(|| WassersteinError::Invalid("μ has an empty quantile piece".into()))?;
    let mut val = start;
    let mut chol = SparseCholesky::new();
    let mut entries = Vec::with_capacity(4 * s);
    let mut grad = vec![0.0; s];
    for it in 0..cfg.max_iter {
        entries.clear();
        grad.iter_mut().for_each(|g| *g = 0.0);
        for k in 0..s {
            let k1 = (k + 1) % s;
            let next = if k + 1 < s { y[k + 1] } else { y[0] + period };
            let gap = next - y[k];
            let dv = 0.5 * pot.eval(0.5 * (y[k] + next)).1;
            grad[k] += 1.0 / gap + dv;
            grad[k1] += -1.0 / gap + dv;
            let w = 1.0 / (gap * gap);
            entries.extend([(k, k, w), (k1, k1, w), (k, k1, -w), (k1, k, -w)]);
            let phi = y[k] - x[k];
            let c = norm.slope(phi);
            grad[k] += c * c * phi / delta;
            entries.push((k, k, c * c / delta));
        }
        let mut d: Vec<f64> = grad.iter().map(|g| -g).collect();
        if !chol.solve(s, &entries, &mut d) {
            return Err(WassersteinError::NoConvergence("singular Newton system".into()));
        }
        let dec = -grad.iter().zip(&d).map(|(g, v)| g * v).sum::<f64>() / sf;
        if dec / 2.0 <= cfg.tol {
            return Ok((
                Knots { y, period },
                JkoStats {
                    iterations: it,
                    objective: val,
                    objective_at_start: start,
                    decrement: dec,
                },
            ));
        }
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = y.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            if let Some(v) = jko_objective(&trial, x, period, norm, &pot, delta) {
                if v <= val - 1e-4 * t * dec || (v <= val && t < 1e-6) {
                    y = trial;
                    val = v;
                    break;
                }
            }
            t *= 0.5;
            if t < 1e-14 {
                // no further decrease representable
                return Ok((
                    Knots { y, period },
                    JkoStats {
                        iterations: it,
                        objective: val,
                        objective_at_start: start,
                        decrement: dec,
                    },
                ));
            }
        }
    }
    Err(WassersteinError::NoConvergence(format!("{} Newton iterations", cfg.max_iter)))
}

fn require_periodic(grid: &Grid) -> Result<(), WassersteinError> {
    if grid.boundary() != Boundary::Periodic || grid.dim() != 1 {
        return Err(WassersteinError::Invalid("JKO runs on a periodic 1D grid".into()));
    }
    Ok(())
}

/// One JKO step from a grid density: quantile knots at S levels, Newton on
/// the knot positions, then back to cell densities.
pub fn jko_step(
    mu: &Density1D,
    norm: &Norm1D,
    weight: &WeightField,
    delta: f64,
    cfg: &JkoConfig,
) -> Result<(Density1D, JkoStats), WassersteinError> {
    require_periodic(&mu.grid)?;
    let knots = Knots::from_density(mu, cfg.levels);
    let (next, stats) = jko_knots(&knots, norm, &mu.grid, weight, delta, cfg)?;
    Ok((next.to_density(&mu.grid, weight)?, stats))
}

/// `steps` JKO steps kept in knot form between steps; densities at
/// t = 0, δ, …, steps·δ.
pub fn jko_trajectory(
    mu0: &Density1D,
    norm: &Norm1D,
    weight: &WeightField,
    delta: f64,
    steps: usize,
    cfg: &JkoConfig,
) -> Result<Vec<Density1D>, WassersteinError> {
    require_periodic(&mu0.grid)?;
    let mut knots = Knots::from_density(mu0, cfg.levels);
    let mut out = vec![mu0.clone()];
    for _ in 0..steps {
        knots = jko_knots(&knots, norm, &mu0.grid, weight, delta, cfg)?.0;
        out.push(knots.to_density(&mu0.grid, weight)?);
    }
    Ok(out)
}

fn l1(weight: &WeightField, a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).zip(&weight.m).map(|((x, y), m)| (x - y).abs() * m).sum()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JkoLevel {
    pub delta: f64,
    pub steps: usize,
    /// max over t of ‖ρ_JKO(t) − ρ_reverse(t)‖_{L¹(m)}
    pub error: f64,
    /// the same against the flow of the norm itself
    pub error_same_norm: f64,
}

/// Runs JKO with `norm` for each δ up to `t_end` and compares with the heat
/// flow of reverse(norm) (and, as a control, of `norm`) computed by
/// `evolve` at step `reference_delta`. Levels run in parallel. Certified
/// when every error ≤ `tolerance` and error(δ_{i+1}) ≤ `max_ratio`·error(δ_i).
#[allow(clippy::too_many_arguments)]
pub fn jko_equivalence_check(
    mu0: &Density1D,
    norm: &Norm1D,
    weight: &WeightField,
    t_end: f64,
    deltas: &[f64],
    reference_delta: f64,
    cfg: &JkoConfig,
    tolerance: f64,
    max_ratio: f64,
) -> Result<Report, WassersteinError> {
    require_periodic(&mu0.grid)?;
    if deltas.is_empty() || deltas.iter().any(|d| !(*d > 0.0)) {
        return Err(WassersteinError::Invalid("need positive δ values".into()));
    }
    let mut steps = Vec::new();
    for &d in deltas {
        let k = (t_end / d).round();
        if !(k >= 1.0) || ((k * d - t_end).abs() > 1e-9 * t_end) {
            return Err(WassersteinError::Invalid(format!("t_end {t_end} is not a multiple of δ = {d}")));
        }
        steps.push(k as usize);
    }
    let mut times: Vec<f64> = deltas
        .iter()
        .zip(&steps)
        .flat_map(|(d, k)| (1..=*k).map(move |i| i as f64 * d))
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * t_end);
    let grid = mu0.grid.clone();
    let reverse_dom = Domain::new(grid.clone(), weight.clone(), FinslerField::uniform(&norm.reverse().spec())?)?;
    let same_dom = Domain::new(grid.clone(), weight.clone(), FinslerField::uniform(&norm.spec())?)?;
    let ref_cfg = SolverConfig::default_for(&reverse_dom).with_delta(reference_delta);
    let results = std::thread::scope(|sc| {
        let refs = sc.spawn(|| -> Result<_, WassersteinError> {
            let a = evolve_at(&reverse_dom, mu0.rho(), &times, &ref_cfg)?;
            let b = evolve_at(&same_dom, mu0.rho(), &times, &ref_cfg)?;
            Ok((a, b))
        });
        let jobs: Vec<_> = deltas
            .iter()
            .zip(&steps)
            .map(|(&d, &k)| sc.spawn(move || jko_trajectory(mu0, norm, weight, d, k, cfg)))
            .collect();
        let trajs: Vec<_> = jobs.into_iter().map(|j| j.join().expect("JKO thread panicked")).collect();
        (refs.join().expect("reference thread panicked"), trajs)
    });
    let (refs, trajs) = results;
    let (rev, same) = refs?;
    let find = |t: f64| times.iter().position(|s| (s - t).abs() <= 1e-12 * t_end).expect("time on the union grid");
    let mut levels = Vec::new();
    let mut rows = Vec::new();
    for ((&d, &k), traj) in deltas.iter().zip(&steps).zip(trajs) {
        let traj = traj?;
        let (mut err, mut err_same) = (0.0_f64, 0.0_f64);
        for (i, dens) in traj.iter().enumerate().skip(1) {
            let idx = find(i as f64 * d);
            err = err.max(l1(weight, dens.rho(), &rev[idx]));
            err_same = err_same.max(l1(weight, dens.rho(), &same[idx]));
        }
        let lvl = JkoLevel {
            delta: d,
            steps: k,
            error: err,
            error_same_norm: err_same,
        };
        rows.push((k, d, Report::new("jko_level", json!({"delta": d}), err, tolerance).with_details(&lvl)));
        levels.push(lvl);
    }
    let (a, b) = norm.slopes();
    let mut rep = ladder(
        "jko_equivalence",
        json!({
            "norm": {"a": a, "b": b},
            "cells": grid.len(),
            "t_end": t_end,
            "deltas": deltas,
            "reference_delta": reference_delta,
            "levels": cfg.levels,
        }),
        rows,
        Some(max_ratio),
    );
    rep.details = json!({"levels": levels});
    Ok(rep)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DissipationDetails {
    pub entropy_start: f64,
    pub entropy_end: f64,
    pub fisher_integral: f64,
    pub steps: usize,
}

/// Along the heat flow of reverse(F) from ρ₀ (Domain carries F):
/// |Ent(0) − Ent(T) − ∫₀ᵀ I dt| relative to the entropy drop, with I the
/// Fisher information of F and the time integral by the trapezoid rule.
pub fn dissipation_check(
    dom: &Domain,
    rho0: &[f64],
    t_end: f64,
    cfg: &SolverConfig,
    tolerance: f64,
) -> Result<Report, WassersteinError> {
    let rev = dom.reversed();
    let cfg = SolverConfig {
        record_every: 1,
        ..cfg.clone()
    };
    let traj = evolve(&rev, rho0, t_end, &cfg)?;
    let fisher: Vec<f64> = traj.states.iter().map(|s| fisher_information(dom, s)).collect();
    let integral: f64 = traj
        .state_times
        .windows(2)
        .zip(fisher.windows(2))
        .map(|(t, i)| 0.5 * (t[1] - t[0]) * (i[0] + i[1]))
        .sum();
    let e0 = entropy(&dom.weight, rho0);
    let e1 = entropy(&dom.weight, traj.final_state());
    let drop = e0 - e1;
    if !(drop > 0.0) {
        return Err(WassersteinError::Invalid("entropy did not drop; use a non-stationary density".into()));
    }
    let slack = (drop - integral).abs() / drop;
    Ok(Report::new(
        "fisher_dissipation",
        json!({"t_end": t_end, "delta": cfg.delta, "cells": dom.grid.cells()}),
        slack,
        tolerance,
    )
    .with_details(&DissipationDetails {
        entropy_start: e0,
        entropy_end: e1,
        fisher_integral: integral,
        steps: traj.state_times.len() - 1,
    }))
}
