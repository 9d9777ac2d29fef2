//! Discrete domains: grids with Dirichlet or periodic boundary, measure
//! weights, cell-wise Finsler structures and (nonsymmetric) distance fields.
//!
//! Cell layout is row-major with the last axis fastest. On a periodic axis of
//! length L with N cells, h = L/N and centres sit at (k+½)h. On a Dirichlet
//! axis h = L/(N+1) and centres sit at (k+1)h, so the zero-valued ghost ring
//! lies exactly on the boundary of [0, L].

use std::collections::BinaryHeap;
use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::norms::{self, Local, Norm, NormError, NormSpec};
use crate::small::{self, Matrix, Vector, MAX_DIM, ZERO_V};

const NO_CELL: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid weight: {0}")]
    InvalidWeight(String),
    #[error("invalid finsler field: {0}")]
    InvalidField(String),
    #[error(transparent)]
    Norm(#[from] NormError),
    #[error("field io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed field file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    DirichletZero,
    Periodic,
}

/// Serializable grid description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub cells: Vec<usize>,
    pub lengths: Vec<f64>,
    pub boundary: Boundary,
    #[serde(default)]
    pub origin: Option<Vec<f64>>,
}

impl GridSpec {
    pub fn periodic(cells: &[usize], lengths: &[f64]) -> Self {
        GridSpec {
            cells: cells.to_vec(),
            lengths: lengths.to_vec(),
            boundary: Boundary::Periodic,
            origin: None,
        }
    }

    pub fn dirichlet(cells: &[usize], lengths: &[f64]) -> Self {
        GridSpec {
            cells: cells.to_vec(),
            lengths: lengths.to_vec(),
            boundary: Boundary::DirichletZero,
            origin: None,
        }
    }

    pub fn with_origin(mut self, origin: &[f64]) -> Self {
        self.origin = Some(origin.to_vec());
        self
    }
}

/// One ghost face of a Dirichlet grid: interior cell, axis, outward sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundarySlot {
    pub cell: usize,
    pub axis: usize,
    pub sign: i8,
}

#[derive(Debug, Clone)]
pub struct Grid {
    spec: GridSpec,
    dim: usize,
    n: [usize; MAX_DIM],
    len: [f64; MAX_DIM],
    h: [f64; MAX_DIM],
    origin: [f64; MAX_DIM],
    size: usize,
    /// cell * 2n + 2*axis + (0 for −, 1 for +)
    nbr: Arc<Vec<u32>>,
    slots: Arc<Vec<BoundarySlot>>,
}

impl Grid {
    pub fn new(spec: &GridSpec) -> Result<Grid, FieldError> {
        let dim = spec.cells.len();
        if dim == 0 || dim > MAX_DIM {
            return Err(FieldError::InvalidGrid(format!(
                "dimension {dim} outside 1..={MAX_DIM}"
            )));
        }
        if spec.lengths.len() != dim {
            return Err(FieldError::InvalidGrid(
                "lengths and cells differ in dimension".into(),
            ));
        }
        if let Some(o) = &spec.origin {
            if o.len() != dim {
                return Err(FieldError::InvalidGrid("origin has wrong dimension".into()));
            }
        }
        let mut n = [1usize; MAX_DIM];
        let mut len = [1.0; MAX_DIM];
        let mut h = [1.0; MAX_DIM];
        let mut origin = [0.0; MAX_DIM];
        for k in 0..dim {
            if spec.cells[k] < 3 {
                return Err(FieldError::InvalidGrid(format!(
                    "axis {k} has {} cells, need at least 3",
                    spec.cells[k]
                )));
            }
            let l = spec.lengths[k];
            if !(l.is_finite() && l > 0.0) {
                return Err(FieldError::InvalidGrid(format!("axis {k} length {l} not > 0")));
            }
            n[k] = spec.cells[k];
            len[k] = l;
            h[k] = match spec.boundary {
                Boundary::Periodic => l / n[k] as f64,
                Boundary::DirichletZero => l / (n[k] + 1) as f64,
            };
            origin[k] = spec.origin.as_ref().map(|o| o[k]).unwrap_or(0.0);
        }
        let size: usize = n[..dim].iter().product();
        if size >= NO_CELL as usize {
            return Err(FieldError::InvalidGrid("too many cells".into()));
        }
        let mut grid = Grid {
            spec: spec.clone(),
            dim,
            n,
            len,
            h,
            origin,
            size,
            nbr: Arc::new(Vec::new()),
            slots: Arc::new(Vec::new()),
        };
        let mut nbr = vec![NO_CELL; size * 2 * dim];
        let mut slots = Vec::new();
        for c in 0..size {
            let co = grid.coords(c);
            for k in 0..dim {
                for (d, s) in [(0usize, -1i64), (1, 1)] {
                    let mut cc = co;
                    let v = co[k] as i64 + s;
                    let inside = v >= 0 && v < n[k] as i64;
                    if inside {
                        cc[k] = v as usize;
                    } else if spec.boundary == Boundary::Periodic {
                        cc[k] = v.rem_euclid(n[k] as i64) as usize;
                    } else {
                        slots.push(BoundarySlot {
                            cell: c,
                            axis: k,
                            sign: s as i8,
                        });
                        continue;
                    }
                    nbr[c * 2 * dim + 2 * k + d] = grid.index(&cc) as u32;
                }
            }
        }
        grid.nbr = Arc::new(nbr);
        grid.slots = Arc::new(slots);
        Ok(grid)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn len(&self) -> usize {
        self.size
    }
    pub fn is_empty(&self) -> bool {
        self.size == 0
    }
    pub fn boundary(&self) -> Boundary {
        self.spec.boundary
    }
    pub fn is_periodic(&self) -> bool {
        self.spec.boundary == Boundary::Periodic
    }
    pub fn cells(&self) -> &[usize] {
        &self.n[..self.dim]
    }
    pub fn lengths(&self) -> &[f64] {
        &self.len[..self.dim]
    }
    pub fn spacing(&self) -> &[f64] {
        &self.h[..self.dim]
    }
    pub fn h(&self, axis: usize) -> f64 {
        self.h[axis]
    }
    pub fn min_spacing(&self) -> f64 {
        self.h[..self.dim].iter().cloned().fold(f64::INFINITY, f64::min)
    }
    pub fn cell_volume(&self) -> f64 {
        self.h[..self.dim].iter().product()
    }
    pub fn boundary_slots(&self) -> &[BoundarySlot] {
        &self.slots
    }

    pub fn coords(&self, mut c: usize) -> [usize; MAX_DIM] {
        let mut co = [0usize; MAX_DIM];
        for k in (0..self.dim).rev() {
            co[k] = c % self.n[k];
            c /= self.n[k];
        }
        co
    }

    pub fn index(&self, co: &[usize; MAX_DIM]) -> usize {
        let mut c = 0;
        for k in 0..self.dim {
            c = c * self.n[k] + co[k];
        }
        c
    }

    /// Neighbour of `c` along `axis` (`dir` = ±1); `None` for a ghost.
    #[inline]
    pub fn neighbor(&self, c: usize, axis: usize, dir: i32) -> Option<usize> {
        let v = self.nbr[c * 2 * self.dim + 2 * axis + usize::from(dir > 0)];
        (v != NO_CELL).then_some(v as usize)
    }

    /// Cell centre coordinates.
    pub fn position(&self, c: usize) -> Vector {
        let co = self.coords(c);
        let mut x = ZERO_V;
        for k in 0..self.dim {
            let off = match self.spec.boundary {
                Boundary::Periodic => co[k] as f64 + 0.5,
                Boundary::DirichletZero => co[k] as f64 + 1.0,
            };
            x[k] = self.origin[k] + off * self.h[k];
        }
        x
    }

    /// Cell whose centre is closest to `x` (clamped into the grid).
    pub fn nearest_cell(&self, x: &[f64]) -> usize {
        let mut co = [0usize; MAX_DIM];
        for k in 0..self.dim {
            let off = match self.spec.boundary {
                Boundary::Periodic => 0.5,
                Boundary::DirichletZero => 1.0,
            };
            let t = ((x[k] - self.origin[k]) / self.h[k] - off).round();
            co[k] = if self.is_periodic() {
                (t as i64).rem_euclid(self.n[k] as i64) as usize
            } else {
                t.clamp(0.0, (self.n[k] - 1) as f64) as usize
            };
        }
        self.index(&co)
    }

    /// Displacement x_b − x_a, wrapped to the nearest image on periodic axes.
    pub fn displacement(&self, a: &Vector, b: &Vector) -> Vector {
        let mut d = ZERO_V;
        for k in 0..self.dim {
            let mut v = b[k] - a[k];
            if self.is_periodic() {
                let l = self.len[k];
                v -= l * (v / l).round();
            }
            d[k] = v;
        }
        d
    }

    pub fn scalar_field<F: Fn(&[f64]) -> f64>(&self, f: F) -> ScalarField {
        ScalarField::new(
            (0..self.size)
                .map(|c| f(&self.position(c)[..self.dim]))
                .collect(),
        )
    }

    pub fn zeros(&self) -> ScalarField {
        ScalarField::new(vec![0.0; self.size])
    }
}

/// Values at cell centres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(values: Vec<f64>) -> Self {
        ScalarField { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

impl std::ops::Deref for ScalarField {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.values
    }
}

impl std::ops::DerefMut for ScalarField {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// Log-density V and the cell measures m_c = e^{−V(c)}·∏h.
#[derive(Debug, Clone)]
pub struct WeightField {
    pub v: Vec<f64>,
    pub m: Vec<f64>,
}

/// Serializable weight description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightSpec {
    Lebesgue,
    /// V(x) = K |x − centre|² / 2
    Gaussian {
        k: f64,
        #[serde(default)]
        center: Option<Vec<f64>>,
    },
    Table {
        v: Vec<f64>,
    },
}

impl WeightField {
    pub fn lebesgue(grid: &Grid) -> WeightField {
        let vol = grid.cell_volume();
        WeightField {
            v: vec![0.0; grid.len()],
            m: vec![vol; grid.len()],
        }
    }

    pub fn from_fn<F: Fn(&[f64]) -> f64>(grid: &Grid, v: F) -> Result<WeightField, FieldError> {
        let vals: Vec<f64> = (0..grid.len())
            .map(|c| v(&grid.position(c)[..grid.dim()]))
            .collect();
        WeightField::from_table(grid, vals)
    }

    pub fn from_table(grid: &Grid, v: Vec<f64>) -> Result<WeightField, FieldError> {
        if v.len() != grid.len() {
            return Err(FieldError::InvalidWeight(format!(
                "table has {} entries for {} cells",
                v.len(),
                grid.len()
            )));
        }
        if let Some(bad) = v.iter().find(|x| !x.is_finite() || x.abs() > 700.0) {
            return Err(FieldError::InvalidWeight(format!("unbounded V value {bad}")));
        }
        let vol = grid.cell_volume();
        let m = v.iter().map(|x| (-x).exp() * vol).collect();
        Ok(WeightField { v, m })
    }

    pub fn build(grid: &Grid, spec: &WeightSpec) -> Result<WeightField, FieldError> {
        match spec {
            WeightSpec::Lebesgue => Ok(WeightField::lebesgue(grid)),
            WeightSpec::Gaussian { k, center } => {
                let c = center.clone().unwrap_or_else(|| vec![0.0; grid.dim()]);
                if c.len() != grid.dim() {
                    return Err(FieldError::InvalidWeight("centre has wrong dimension".into()));
                }
                WeightField::from_fn(grid, |x| {
                    0.5 * k * x.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
                })
            }
            WeightSpec::Table { v } => WeightField::from_table(grid, v.clone()),
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.m.iter().sum()
    }

    /// Σ u·m
    pub fn integral(&self, u: &[f64]) -> f64 {
        u.iter().zip(&self.m).map(|(a, b)| a * b).sum()
    }

    /// ⟨u, v⟩_m
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        u.iter()
            .zip(v)
            .zip(&self.m)
            .map(|((a, b), m)| a * b * m)
            .sum()
    }

    pub fn l2_norm(&self, u: &[f64]) -> f64 {
        self.inner(u, u).sqrt()
    }

    /// ‖u‖_{Lᵖ(m)} for p ∈ [1, ∞].
    pub fn lp_norm(&self, u: &[f64], p: f64) -> f64 {
        if p.is_infinite() {
            return u.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
        }
        let s: f64 = u
            .iter()
            .zip(&self.m)
            .map(|(x, m)| x.abs().powf(p) * m)
            .sum();
        s.powf(1.0 / p)
    }
}

/// Serializable Finsler field description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FinslerSpec {
    Uniform { norm: NormSpec },
    /// F(x, ξ) = base(σ(x) ξ) with one row-major σ per cell.
    Varying { base: NormSpec, sigma: Vec<Vec<f64>> },
}

#[derive(Debug, Clone)]
enum Structure {
    Uniform(Norm),
    Varying {
        base: Norm,
        sigma: Vec<Matrix>,
        sigma_inv: Vec<Matrix>,
    },
}

/// Field-level constants (infimum over cells of per-cell constants).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldConstants {
    pub kappa: f64,
    pub kappa_star: f64,
    pub lambda: f64,
    pub lambda_star: f64,
}

pub const DEFAULT_SAMPLE_BUDGET: usize = 1024;

/// Cell-wise Finsler structure on a grid.
#[derive(Debug, Clone)]
pub struct FinslerField {
    dim: usize,
    structure: Structure,
    constants: FieldConstants,
}

impl FinslerField {
    pub fn uniform(norm: &NormSpec) -> Result<FinslerField, FieldError> {
        let n = norm.build()?;
        let c = norms::convexity_constants(&n, DEFAULT_SAMPLE_BUDGET, 0);
        Ok(FinslerField {
            dim: n.dim(),
            constants: FieldConstants {
                kappa: c.kappa,
                kappa_star: c.kappa_star,
                lambda: c.lambda,
                lambda_star: c.lambda_star,
            },
            structure: Structure::Uniform(n),
        })
    }

    /// F(x, ξ) = base(σ(x) ξ). The 2-uniform constants are invariant under
    /// linear changes of variable, so κ, κ* are those of `base`; λ, λ* are
    /// bounded through the extreme singular values of σ over the grid.
    pub fn varying<S: Fn(&[f64]) -> Vec<f64>>(
        grid: &Grid,
        base: &NormSpec,
        sigma: S,
    ) -> Result<FinslerField, FieldError> {
        let table: Vec<Vec<f64>> = (0..grid.len())
            .map(|c| sigma(&grid.position(c)[..grid.dim()]))
            .collect();
        FinslerField::varying_table(grid, base, &table)
    }

    pub fn varying_table(
        grid: &Grid,
        base: &NormSpec,
        table: &[Vec<f64>],
    ) -> Result<FinslerField, FieldError> {
        let b = base.build()?;
        let n = b.dim();
        if n != grid.dim() {
            return Err(FieldError::InvalidField(format!(
                "norm dimension {n} differs from grid dimension {}",
                grid.dim()
            )));
        }
        if table.len() != grid.len() {
            return Err(FieldError::InvalidField(format!(
                "sigma table has {} entries for {} cells",
                table.len(),
                grid.len()
            )));
        }
        let mut sigma = Vec::with_capacity(table.len());
        let mut sigma_inv = Vec::with_capacity(table.len());
        let mut smin = f64::INFINITY;
        let mut smax = 0.0_f64;
        for (c, s) in table.iter().enumerate() {
            if s.len() != n * n || s.iter().any(|x| !x.is_finite()) {
                return Err(FieldError::InvalidField(format!("bad sigma at cell {c}")));
            }
            let m = small::mat_from_row_major(n, s);
            let inv = small::inverse(n, &m).ok_or_else(|| {
                FieldError::InvalidField(format!("sigma not invertible at cell {c}"))
            })?;
            let sts = small::matmul(n, &small::transpose(n, &m), &m);
            let (lo, hi) = small::sym_eig_extremes(n, &sts);
            smin = smin.min(lo);
            smax = smax.max(hi);
            sigma.push(m);
            sigma_inv.push(inv);
        }
        let c = norms::convexity_constants(&b, DEFAULT_SAMPLE_BUDGET, 0);
        Ok(FinslerField {
            dim: n,
            constants: FieldConstants {
                kappa: c.kappa,
                kappa_star: c.kappa_star,
                lambda: c.lambda / smax,
                lambda_star: c.lambda_star * smin,
            },
            structure: Structure::Varying {
                base: b,
                sigma,
                sigma_inv,
            },
        })
    }

    pub fn build(grid: &Grid, spec: &FinslerSpec) -> Result<FinslerField, FieldError> {
        let f = match spec {
            FinslerSpec::Uniform { norm } => FinslerField::uniform(norm)?,
            FinslerSpec::Varying { base, sigma } => {
                FinslerField::varying_table(grid, base, sigma)?
            }
        };
        if f.dim != grid.dim() {
            return Err(FieldError::InvalidField(format!(
                "norm dimension {} differs from grid dimension {}",
                f.dim,
                grid.dim()
            )));
        }
        Ok(f)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn constants(&self) -> &FieldConstants {
        &self.constants
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self.structure, Structure::Uniform(_))
    }

    /// The norm of a uniform field.
    pub fn uniform_norm(&self) -> Option<&Norm> {
        match &self.structure {
            Structure::Uniform(n) => Some(n),
            Structure::Varying { .. } => None,
        }
    }

    /// Field with every cell norm reversed.
    pub fn reverse(&self) -> FinslerField {
        let structure = match &self.structure {
            Structure::Uniform(n) => Structure::Uniform(n.reverse()),
            Structure::Varying {
                base,
                sigma,
                sigma_inv,
            } => Structure::Varying {
                base: base.reverse(),
                sigma: sigma.clone(),
                sigma_inv: sigma_inv.clone(),
            },
        };
        FinslerField {
            dim: self.dim,
            structure,
            constants: self.constants.clone(),
        }
    }

    /// Every cell norm replaced by its two-sided ε-regularization.
    pub fn regularized(&self, eps: f64) -> Result<FinslerField, FieldError> {
        let reg = |n: &Norm| -> Result<Norm, FieldError> {
            Ok(n.spec().regularize(eps, norms::RegMode::Full)?.build()?)
        };
        let structure = match &self.structure {
            Structure::Uniform(n) => Structure::Uniform(reg(n)?),
            Structure::Varying {
                base,
                sigma,
                sigma_inv,
            } => Structure::Varying {
                base: reg(base)?,
                sigma: sigma.clone(),
                sigma_inv: sigma_inv.clone(),
            },
        };
        Ok(FinslerField {
            dim: self.dim,
            structure,
            constants: self.constants.clone(),
        })
    }

    /// F(c, ξ)
    pub fn value_at(&self, c: usize, xi: &[f64]) -> f64 {
        self.primal_at(c, &small::from_slice(self.dim, xi), false).value
    }

    /// F*(c, α)
    pub fn dual_value_at(&self, c: usize, alpha: &[f64]) -> f64 {
        self.dual_at(c, &small::from_slice(self.dim, alpha), false).value
    }

    pub(crate) fn primal_at(&self, c: usize, x: &Vector, hess: bool) -> Local {
        let n = self.dim;
        match &self.structure {
            Structure::Uniform(norm) => norm.primal(x, hess),
            Structure::Varying { base, sigma, .. } => {
                let s = &sigma[c];
                let l = base.primal(&small::matvec(n, s, x), hess);
                Local {
                    value: l.value,
                    grad: small::matvec_t(n, s, &l.grad),
                    hess: if hess {
                        small::congruence(n, s, &l.hess)
                    } else {
                        l.hess
                    },
                }
            }
        }
    }

    pub(crate) fn dual_majorant_at(&self, c: usize, a: &Vector) -> Matrix {
        let n = self.dim;
        match &self.structure {
            Structure::Uniform(norm) => norm.dual_majorant(a),
            Structure::Varying {
                base, sigma_inv, ..
            } => {
                let si = &sigma_inv[c];
                let h = base.dual_majorant(&small::matvec_t(n, si, a));
                small::congruence(n, &small::transpose(n, si), &h)
            }
        }
    }

    pub(crate) fn dual_at(&self, c: usize, a: &Vector, hess: bool) -> Local {
        let n = self.dim;
        match &self.structure {
            Structure::Uniform(norm) => norm.dual(a, hess),
            Structure::Varying {
                base, sigma_inv, ..
            } => {
                let si = &sigma_inv[c];
                let l = base.dual(&small::matvec_t(n, si, a), hess);
                Local {
                    value: l.value,
                    grad: small::matvec(n, si, &l.grad),
                    hess: if hess {
                        small::congruence(n, &small::transpose(n, si), &l.hess)
                    } else {
                        l.hess
                    },
                }
            }
        }
    }
}

/// Grid, measure and Finsler structure bundled together.
#[derive(Debug, Clone)]
pub struct Domain {
    pub grid: Grid,
    pub weight: WeightField,
    pub field: FinslerField,
}

impl Domain {
    pub fn new(grid: Grid, weight: WeightField, field: FinslerField) -> Result<Domain, FieldError> {
        if weight.m.len() != grid.len() {
            return Err(FieldError::InvalidWeight("weight does not match grid".into()));
        }
        if field.dim() != grid.dim() {
            return Err(FieldError::InvalidField(format!(
                "norm dimension {} differs from grid dimension {}",
                field.dim(),
                grid.dim()
            )));
        }
        if let Structure::Varying { sigma, .. } = &field.structure {
            if sigma.len() != grid.len() {
                return Err(FieldError::InvalidField("sigma table does not match grid".into()));
            }
        }
        Ok(Domain { grid, weight, field })
    }

    /// Uniform norm with Lebesgue measure.
    pub fn uniform(grid: &GridSpec, norm: &NormSpec) -> Result<Domain, FieldError> {
        let g = Grid::new(grid)?;
        let w = WeightField::lebesgue(&g);
        let f = FinslerField::uniform(norm)?;
        Domain::new(g, w, f)
    }

    pub fn with_field(&self, field: FinslerField) -> Domain {
        Domain {
            grid: self.grid.clone(),
            weight: self.weight.clone(),
            field,
        }
    }

    /// Same domain with every cell norm reversed.
    pub fn reversed(&self) -> Domain {
        self.with_field(self.field.reverse())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceDirection {
    /// x ↦ d(z, x)
    FromZ,
    /// x ↦ d(x, z)
    ToZ,
}

/// A distance field plus the cells where two lattice translates (periodic
/// grids) give minimizing values within one cell-size of each other.
#[derive(Debug, Clone)]
pub struct Distance {
    pub values: ScalarField,
    pub ambiguous: Vec<bool>,
}

/// Distance from or to cell `z`.
///
/// Uniform fields are exact: d(z,x) = F(x − z), minimized over lattice
/// translates on periodic grids. Varying fields use Dijkstra on a wide
/// stencil with trapezoidal edge costs.
pub fn distance_field(
    field: &FinslerField,
    grid: &Grid,
    z: usize,
    direction: DistanceDirection,
) -> Distance {
    match &field.structure {
        Structure::Uniform(norm) => uniform_distance(norm, grid, z, direction),
        Structure::Varying { .. } => Distance {
            values: dijkstra_distance(field, grid, z, direction, default_stencil_radius(grid.dim())),
            ambiguous: vec![false; grid.len()],
        },
    }
}

fn uniform_distance(norm: &Norm, grid: &Grid, z: usize, direction: DistanceDirection) -> Distance {
    let n = grid.dim();
    let xz = grid.position(z);
    let tol = (0..n)
        .map(|k| {
            let mut e = ZERO_V;
            e[k] = grid.h(k);
            let mut m = ZERO_V;
            m[k] = -grid.h(k);
            norm.primal(&e, false).value.max(norm.primal(&m, false).value)
        })
        .fold(0.0_f64, f64::max);
    let shifts: Vec<Vector> = if grid.is_periodic() {
        let mut out = Vec::new();
        for code in 0..3usize.pow(n as u32) {
            let mut s = ZERO_V;
            let mut c = code;
            for (k, item) in s.iter_mut().enumerate().take(n) {
                *item = ((c % 3) as f64 - 1.0) * grid.lengths()[k];
                c /= 3;
            }
            out.push(s);
        }
        out
    } else {
        vec![ZERO_V]
    };
    let mut values = Vec::with_capacity(grid.len());
    let mut ambiguous = Vec::with_capacity(grid.len());
    for c in 0..grid.len() {
        let x = grid.position(c);
        let mut best = f64::INFINITY;
        let mut second = f64::INFINITY;
        for s in &shifts {
            let mut d = ZERO_V;
            for k in 0..n {
                let v = x[k] + s[k] - xz[k];
                d[k] = match direction {
                    DistanceDirection::FromZ => v,
                    DistanceDirection::ToZ => -v,
                };
            }
            let f = norm.primal(&d, false).value;
            if f < best {
                second = best;
                best = f;
            } else if f < second {
                second = f;
            }
        }
        values.push(best);
        ambiguous.push(second - best < tol);
    }
    Distance {
        values: ScalarField::new(values),
        ambiguous,
    }
}

/// Max-norm radius of the Dijkstra stencil: 32 neighbours in 2D, 98 in 3D.
pub fn default_stencil_radius(dim: usize) -> i64 {
    match dim {
        1 => 1,
        2 => 3,
        _ => 2,
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Primitive integer offsets with max-norm ≤ `radius`.
pub fn stencil_offsets(dim: usize, radius: i64) -> Vec<[i64; MAX_DIM]> {
    let side = 2 * radius + 1;
    let mut out = Vec::new();
    for code in 0..side.pow(dim as u32) {
        let mut o = [0i64; MAX_DIM];
        let mut c = code;
        for item in o.iter_mut().take(dim) {
            *item = c % side - radius;
            c /= side;
        }
        let g = o[..dim].iter().fold(0, |g, &v| gcd(g, v));
        if g == 1 {
            out.push(o);
        }
    }
    out
}

#[derive(PartialEq)]
struct HeapItem(f64, usize);
impl Eq for HeapItem {}
impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

/// Shortest paths on the wide stencil; edge a → a+o costs
/// ½(F(a, o·h) + F(a+o, o·h)).
pub fn dijkstra_distance(
    field: &FinslerField,
    grid: &Grid,
    z: usize,
    direction: DistanceDirection,
    radius: i64,
) -> ScalarField {
    let n = grid.dim();
    let offsets = stencil_offsets(n, radius);
    let mut dist = vec![f64::INFINITY; grid.len()];
    let mut heap = BinaryHeap::new();
    dist[z] = 0.0;
    heap.push(HeapItem(0.0, z));
    while let Some(HeapItem(d, a)) = heap.pop() {
        if d > dist[a] {
            continue;
        }
        let ca = grid.coords(a);
        for o in &offsets {
            let mut cb = [0usize; MAX_DIM];
            let mut ok = true;
            for k in 0..n {
                let v = ca[k] as i64 + o[k];
                let nk = grid.cells()[k] as i64;
                if grid.is_periodic() {
                    cb[k] = v.rem_euclid(nk) as usize;
                } else if v < 0 || v >= nk {
                    ok = false;
                    break;
                } else {
                    cb[k] = v as usize;
                }
            }
            if !ok {
                continue;
            }
            let b = grid.index(&cb);
            let mut step = ZERO_V;
            for k in 0..n {
                let s = o[k] as f64 * grid.h(k);
                step[k] = match direction {
                    DistanceDirection::FromZ => s,
                    DistanceDirection::ToZ => -s,
                };
            }
            let w = 0.5 * (field.primal_at(a, &step, false).value + field.primal_at(b, &step, false).value);
            let nd = d + w;
            if nd < dist[b] {
                dist[b] = nd;
                heap.push(HeapItem(nd, b));
            }
        }
    }
    ScalarField::new(dist)
}

const MAGIC: &[u8; 4] = b"FHF1";

/// Flat binary layout: magic, dim (u32), cells (u64 × dim), lengths and
/// spacings (f64 × dim each), boundary flag (u8, 1 = periodic), then the
/// row-major values as little-endian f64.
pub fn write_binary<W: Write>(grid: &Grid, u: &[f64], mut w: W) -> Result<(), FieldError> {
    if u.len() != grid.len() {
        return Err(FieldError::Format("field length differs from grid".into()));
    }
    w.write_all(MAGIC)?;
    w.write_all(&(grid.dim() as u32).to_le_bytes())?;
    for &c in grid.cells() {
        w.write_all(&(c as u64).to_le_bytes())?;
    }
    for &l in grid.lengths() {
        w.write_all(&l.to_le_bytes())?;
    }
    for &h in grid.spacing() {
        w.write_all(&h.to_le_bytes())?;
    }
    w.write_all(&[u8::from(grid.is_periodic())])?;
    for v in u {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R) -> Result<(Grid, ScalarField), FieldError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(FieldError::Format("bad magic".into()));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    let dim = u32::from_le_bytes(b4) as usize;
    if dim == 0 || dim > MAX_DIM {
        return Err(FieldError::Format(format!("dimension {dim}")));
    }
    let mut cells = Vec::new();
    for _ in 0..dim {
        r.read_exact(&mut b8)?;
        cells.push(u64::from_le_bytes(b8) as usize);
    }
    let mut lengths = Vec::new();
    for _ in 0..dim {
        r.read_exact(&mut b8)?;
        lengths.push(f64::from_le_bytes(b8));
    }
    for _ in 0..dim {
        r.read_exact(&mut b8)?;
    }
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    let boundary = if flag[0] == 1 {
        Boundary::Periodic
    } else {
        Boundary::DirichletZero
    };
    let grid = Grid::new(&GridSpec {
        cells,
        lengths,
        boundary,
        origin: None,
    })?;
    let mut values = Vec::with_capacity(grid.len());
    for _ in 0..grid.len() {
        r.read_exact(&mut b8)?;
        values.push(f64::from_le_bytes(b8));
    }
    Ok((grid, ScalarField::new(values)))
}

/// CSV with one row per cell: centre coordinates then value.
pub fn write_csv<W: Write>(grid: &Grid, u: &[f64], mut w: W) -> Result<(), FieldError> {
    let names: Vec<String> = (0..grid.dim()).map(|k| format!("x{k}")).collect();
    writeln!(w, "{},value", names.join(","))?;
    for (c, v) in u.iter().enumerate() {
        let x = grid.position(c);
        let coords: Vec<String> = x[..grid.dim()].iter().map(|a| format!("{a:.12e}")).collect();
        writeln!(w, "{},{v:.17e}", coords.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_has_unit_mass() {
        let g = Grid::new(&GridSpec::periodic(&[64, 64], &[1.0, 1.0])).unwrap();
        let w = WeightField::lebesgue(&g);
        assert!((w.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn periodic_line_mass() {
        let g = Grid::new(&GridSpec::periodic(&[50], &[3.5])).unwrap();
        assert!((WeightField::lebesgue(&g).total_mass() - 3.5).abs() < 1e-12);
    }

    #[test]
    fn gaussian_weight_matches_trapezoid() {
        let g = Grid::new(&GridSpec::dirichlet(&[399], &[8.0]).with_origin(&[-4.0])).unwrap();
        let w = WeightField::build(&g, &WeightSpec::Gaussian { k: 1.5, center: None }).unwrap();
        // trapezoid on the node set including the boundary points ±4
        let h = 8.0 / 400.0;
        let mut trap = 0.0;
        for i in 0..=400 {
            let x = -4.0 + i as f64 * h;
            let wgt = if i == 0 || i == 400 { 0.5 } else { 1.0 };
            trap += wgt * h * (-0.75 * x * x).exp();
        }
        let boundary = h * (-0.75 * 16.0f64).exp();
        assert!((w.total_mass() + boundary - trap).abs() < 1e-12);
    }

    #[test]
    fn grid_rejects_bad_specs() {
        assert!(Grid::new(&GridSpec::periodic(&[2, 8], &[1.0, 1.0])).is_err());
        assert!(Grid::new(&GridSpec::periodic(&[8], &[-1.0])).is_err());
        assert!(Grid::new(&GridSpec::periodic(&[], &[])).is_err());
    }

    #[test]
    fn dirichlet_ghosts_on_boundary() {
        let g = Grid::new(&GridSpec::dirichlet(&[9], &[1.0])).unwrap();
        assert!((g.position(0)[0] - 0.1).abs() < 1e-15);
        assert!((g.position(8)[0] - 0.9).abs() < 1e-15);
        assert_eq!(g.neighbor(0, 0, -1), None);
        assert_eq!(g.boundary_slots().len(), 2);
    }

    #[test]
    fn two_slope_distance() {
        let g = Grid::new(&GridSpec::dirichlet(&[19], &[2.0]).with_origin(&[-1.0])).unwrap();
        let f = FinslerField::uniform(&NormSpec::two_slope(1.0, 2.0)).unwrap();
        let z = g.nearest_cell(&[0.0]);
        let d = distance_field(&f, &g, z, DistanceDirection::FromZ);
        for c in 0..g.len() {
            let x = g.position(c)[0];
            let want = if x >= 0.0 { x } else { -2.0 * x };
            assert!((d.values[c] - want).abs() < 1e-12);
        }
        let back = distance_field(&f, &g, z, DistanceDirection::ToZ);
        let rev = distance_field(&f.reverse(), &g, z, DistanceDirection::FromZ);
        assert_eq!(back.values, rev.values);
        assert_ne!(back.values, d.values);
    }

    #[test]
    fn stencil_counts() {
        assert_eq!(stencil_offsets(2, 2).len(), 16);
        assert_eq!(stencil_offsets(2, 3).len(), 32);
        assert_eq!(stencil_offsets(3, 2).len(), 98);
    }

    #[test]
    fn dijkstra_close_to_exact_on_uniform_field() {
        let g = Grid::new(&GridSpec::dirichlet(&[41, 41], &[1.0, 1.0])).unwrap();
        let spec = NormSpec::lp(2, 4.0);
        let f = FinslerField::uniform(&spec).unwrap();
        let norm = spec.build().unwrap();
        let z = g.nearest_cell(&[0.5, 0.5]);
        let d = dijkstra_distance(&f, &g, z, DistanceDirection::FromZ, 3);
        let xz = g.position(z);
        let mut worst = 0.0_f64;
        for c in 0..g.len() {
            if c == z {
                continue;
            }
            let x = g.position(c);
            let exact = norm.value(&[x[0] - xz[0], x[1] - xz[1]]);
            worst = worst.max((d.values[c] - exact).abs() / exact);
        }
        assert!(worst <= 0.02, "worst relative error {worst}");
    }

    #[test]
    fn binary_round_trip() {
        let g = Grid::new(&GridSpec::periodic(&[4, 5], &[1.0, 2.0])).unwrap();
        let u = g.scalar_field(|x| x[0] + 3.0 * x[1]);
        let mut buf = Vec::new();
        write_binary(&g, &u, &mut buf).unwrap();
        let (g2, u2) = read_binary(buf.as_slice()).unwrap();
        assert_eq!(g2.cells(), g.cells());
        assert_eq!(u2, u);
    }
}
