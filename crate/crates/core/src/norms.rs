//! Minkowski norms at a single tangent space.
//!
//! A [`NormSpec`] is the serializable description; [`Norm`] is the validated,
//! precomputed evaluator. Both the primal side (F, J, g) and the dual side
//! (F*, J*, g*) are available for every variant. Closed forms are used
//! wherever they exist; regularized norms fall back to a damped Newton solve
//! of the Legendre maximization.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::small::{self, Matrix, Vector, MAX_DIM, ZERO_M, ZERO_V};

mod convexity;
mod sample;

pub use convexity::{convexity_constants, dual_convexity_constants, ConvexityConstants};
pub use sample::{duality_check, random_spec, DualityReport, VARIANTS};

/// Newton stopping tolerance for Legendre inversion (relative to the data).
const NEWTON_TOL: f64 = 1e-13;
const NEWTON_MAX_ITER: usize = 200;
/// Floor on |ξᵢ|/F(ξ) when a Hessian entry behaves like |ξᵢ|^(p-2) with p < 2.
const RATIO_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NormError {
    #[error("invalid norm: {0}")]
    Invalid(String),
    #[error("hessian requested at the zero vector")]
    Degenerate,
    #[error("dimension mismatch: norm has dim {expected}, argument has {got}")]
    DimMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegMode {
    /// F² + ε|ξ|²
    Lower,
    /// dual F*² + ε|α|²
    Upper,
    /// Hessian eigenvalues λ ↦ (λ+ε)/(1+ελ); needs ε < 1.
    Full,
}

fn one() -> usize {
    1
}

/// Serializable description of a Minkowski norm on ℝⁿ, n ≤ 3.
///
/// Matrices are stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum NormSpec {
    Quadratic {
        dim: usize,
        a: Vec<f64>,
    },
    Lp {
        dim: usize,
        p: f64,
    },
    Deformed {
        dim: usize,
        base: Box<NormSpec>,
        sigma: Vec<f64>,
    },
    /// √(ξᵀAξ) + ⟨b,ξ⟩ with ⟨b, A⁻¹b⟩ < 1. Smooth and nonsymmetric.
    Randers {
        dim: usize,
        a: Vec<f64>,
        b: Vec<f64>,
    },
    Regularized {
        dim: usize,
        base: Box<NormSpec>,
        eps: f64,
        mode: RegMode,
    },
    #[serde(rename = "two_slope_1d")]
    TwoSlope1d {
        #[serde(default = "one")]
        dim: usize,
        a: f64,
        b: f64,
    },
}

impl NormSpec {
    pub fn euclidean(dim: usize) -> Self {
        let mut a = vec![0.0; dim * dim];
        for i in 0..dim {
            a[i * dim + i] = 1.0;
        }
        NormSpec::Quadratic { dim, a }
    }

    pub fn quadratic(dim: usize, a: Vec<f64>) -> Self {
        NormSpec::Quadratic { dim, a }
    }

    pub fn lp(dim: usize, p: f64) -> Self {
        NormSpec::Lp { dim, p }
    }

    pub fn deformed(base: NormSpec, sigma: Vec<f64>) -> Self {
        NormSpec::Deformed {
            dim: base.dim(),
            base: Box::new(base),
            sigma,
        }
    }

    pub fn randers(dim: usize, a: Vec<f64>, b: Vec<f64>) -> Self {
        NormSpec::Randers { dim, a, b }
    }

    pub fn two_slope(a: f64, b: f64) -> Self {
        NormSpec::TwoSlope1d { dim: 1, a, b }
    }

    /// ε-regularization of `self`.
    pub fn regularize(&self, eps: f64, mode: RegMode) -> Result<NormSpec, NormError> {
        let spec = NormSpec::Regularized {
            dim: self.dim(),
            base: Box::new(self.clone()),
            eps,
            mode,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        match self {
            NormSpec::Quadratic { dim, .. }
            | NormSpec::Lp { dim, .. }
            | NormSpec::Deformed { dim, .. }
            | NormSpec::Randers { dim, .. }
            | NormSpec::Regularized { dim, .. }
            | NormSpec::TwoSlope1d { dim, .. } => *dim,
        }
    }

    /// The reverse norm ξ ↦ F(−ξ).
    pub fn reverse(&self) -> NormSpec {
        match self {
            NormSpec::Quadratic { .. } | NormSpec::Lp { .. } => self.clone(),
            NormSpec::Deformed { dim, base, sigma } => NormSpec::Deformed {
                dim: *dim,
                base: Box::new(base.reverse()),
                sigma: sigma.clone(),
            },
            NormSpec::Randers { dim, a, b } => NormSpec::Randers {
                dim: *dim,
                a: a.clone(),
                b: b.iter().map(|x| -x).collect(),
            },
            NormSpec::Regularized {
                dim,
                base,
                eps,
                mode,
            } => NormSpec::Regularized {
                dim: *dim,
                base: Box::new(base.reverse()),
                eps: *eps,
                mode: *mode,
            },
            NormSpec::TwoSlope1d { dim, a, b } => NormSpec::TwoSlope1d {
                dim: *dim,
                a: *b,
                b: *a,
            },
        }
    }

    /// Whether F(−ξ) = F(ξ) holds structurally.
    pub fn is_reversible(&self) -> bool {
        match self {
            NormSpec::Quadratic { .. } | NormSpec::Lp { .. } => true,
            NormSpec::Deformed { base, .. } | NormSpec::Regularized { base, .. } => {
                base.is_reversible()
            }
            NormSpec::Randers { b, .. } => b.iter().all(|x| *x == 0.0),
            NormSpec::TwoSlope1d { a, b, .. } => a == b,
        }
    }

    pub fn validate(&self) -> Result<(), NormError> {
        Norm::new(self).map(|_| ())
    }

    pub fn build(&self) -> Result<Norm, NormError> {
        Norm::new(self)
    }
}

/// F(ξ), J(ξ) and g(ξ) (or their dual counterparts) at one argument.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormEval {
    pub dim: usize,
    pub value: f64,
    pub covector: Vector,
    pub hessian: Matrix,
}

impl NormEval {
    pub fn covector(&self) -> &[f64] {
        &self.covector[..self.dim]
    }

    pub fn hessian_row(&self, i: usize) -> &[f64] {
        &self.hessian[i][..self.dim]
    }
}

#[derive(Debug, Clone, Copy)]
struct RandersData {
    a: Matrix,
    b: Vector,
}

#[derive(Debug, Clone)]
enum Kind {
    Quadratic { a: Matrix, a_inv: Matrix },
    Lp { p: f64, q: f64 },
    Deformed { base: Box<Norm>, s: Matrix, s_inv: Matrix },
    Randers { primal: RandersData, dual: RandersData },
    Regularized { base: Box<Norm>, eps: f64, mode: RegMode },
    TwoSlope { a: f64, b: f64 },
}

/// Result of one local evaluation; `hess` is only filled on request.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Local {
    pub value: f64,
    pub grad: Vector,
    pub hess: Matrix,
}

const ZERO_LOCAL: Local = Local {
    value: 0.0,
    grad: ZERO_V,
    hess: ZERO_M,
};

/// A validated Minkowski norm with precomputed inverses.
#[derive(Debug, Clone)]
pub struct Norm {
    spec: NormSpec,
    dim: usize,
    kind: Kind,
}

fn check_dim(dim: usize) -> Result<(), NormError> {
    if dim == 0 || dim > MAX_DIM {
        return Err(NormError::Invalid(format!(
            "dimension {dim} outside 1..={MAX_DIM}"
        )));
    }
    Ok(())
}

fn check_len(what: &str, v: &[f64], len: usize) -> Result<(), NormError> {
    if v.len() != len {
        return Err(NormError::Invalid(format!(
            "{what} has {} entries, expected {len}",
            v.len()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(NormError::Invalid(format!("{what} has non-finite entries")));
    }
    Ok(())
}

fn spd_matrix(dim: usize, a: &[f64], what: &str) -> Result<(Matrix, Matrix), NormError> {
    check_len(what, a, dim * dim)?;
    let m = small::mat_from_row_major(dim, a);
    let scale = a.iter().fold(0.0_f64, |s, x| s.max(x.abs()));
    for i in 0..dim {
        for j in 0..dim {
            if (m[i][j] - m[j][i]).abs() > 1e-12 * scale {
                return Err(NormError::Invalid(format!("{what} is not symmetric")));
            }
        }
    }
    if small::cholesky(dim, &m).is_none() {
        return Err(NormError::Invalid(format!("{what} is not positive definite")));
    }
    let inv = small::inverse(dim, &m)
        .ok_or_else(|| NormError::Invalid(format!("{what} is singular")))?;
    Ok((m, inv))
}

impl Norm {
    pub fn new(spec: &NormSpec) -> Result<Norm, NormError> {
        let dim = spec.dim();
        check_dim(dim)?;
        let kind = match spec {
            NormSpec::Quadratic { a, .. } => {
                let (a, a_inv) = spd_matrix(dim, a, "quadratic matrix")?;
                Kind::Quadratic { a, a_inv }
            }
            NormSpec::Lp { p, .. } => {
                if !(p.is_finite() && *p > 1.0) {
                    return Err(NormError::Invalid(format!("lp exponent {p} must be > 1")));
                }
                Kind::Lp {
                    p: *p,
                    q: p / (p - 1.0),
                }
            }
            NormSpec::Deformed { base, sigma, .. } => {
                if base.dim() != dim {
                    return Err(NormError::Invalid("deformed base dimension differs".into()));
                }
                check_len("sigma", sigma, dim * dim)?;
                let s = small::mat_from_row_major(dim, sigma);
                let s_inv = small::inverse(dim, &s)
                    .ok_or_else(|| NormError::Invalid("sigma is not invertible".into()))?;
                Kind::Deformed {
                    base: Box::new(Norm::new(base)?),
                    s,
                    s_inv,
                }
            }
            NormSpec::Randers { a, b, .. } => {
                let (am, a_inv) = spd_matrix(dim, a, "randers matrix")?;
                check_len("randers drift", b, dim)?;
                let bv = small::from_slice(dim, b);
                let c = small::matvec(dim, &a_inv, &bv);
                let bb = small::dot(dim, &bv, &c);
                if bb >= 1.0 {
                    return Err(NormError::Invalid(format!(
                        "randers drift too large: <b, A^-1 b> = {bb} >= 1"
                    )));
                }
                let lam = 1.0 - bb;
                let mut da = ZERO_M;
                for i in 0..dim {
                    for j in 0..dim {
                        da[i][j] = (lam * a_inv[i][j] + c[i] * c[j]) / (lam * lam);
                    }
                }
                Kind::Randers {
                    primal: RandersData { a: am, b: bv },
                    dual: RandersData {
                        a: da,
                        b: small::scale(dim, -1.0 / lam, &c),
                    },
                }
            }
            NormSpec::Regularized {
                base, eps, mode, ..
            } => {
                if base.dim() != dim {
                    return Err(NormError::Invalid(
                        "regularized base dimension differs".into(),
                    ));
                }
                if !(eps.is_finite() && *eps > 0.0) {
                    return Err(NormError::Invalid(format!("eps {eps} must be > 0")));
                }
                if *mode == RegMode::Full && *eps >= 1.0 {
                    return Err(NormError::Invalid(format!(
                        "full regularization needs eps < 1, got {eps}"
                    )));
                }
                Kind::Regularized {
                    base: Box::new(Norm::new(base)?),
                    eps: *eps,
                    mode: *mode,
                }
            }
            NormSpec::TwoSlope1d { a, b, .. } => {
                if dim != 1 {
                    return Err(NormError::Invalid("two_slope_1d requires dim 1".into()));
                }
                if !(a.is_finite() && b.is_finite() && *a > 0.0 && *b > 0.0) {
                    return Err(NormError::Invalid(format!(
                        "two_slope_1d slopes must be > 0, got ({a}, {b})"
                    )));
                }
                Kind::TwoSlope { a: *a, b: *b }
            }
        };
        Ok(Norm {
            spec: spec.clone(),
            dim,
            kind,
        })
    }

    pub fn spec(&self) -> &NormSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn reverse(&self) -> Norm {
        Norm::new(&self.spec.reverse()).expect("reverse of a valid norm is valid")
    }

    fn arg(&self, xs: &[f64]) -> Result<Vector, NormError> {
        if xs.len() != self.dim {
            return Err(NormError::DimMismatch {
                expected: self.dim,
                got: xs.len(),
            });
        }
        Ok(small::from_slice(self.dim, xs))
    }

    fn pack(&self, l: Local) -> NormEval {
        NormEval {
            dim: self.dim,
            value: l.value,
            covector: l.grad,
            hessian: l.hess,
        }
    }

    /// F(ξ), J(ξ) and g(ξ).
    pub fn eval(&self, xi: &[f64]) -> Result<NormEval, NormError> {
        let x = self.arg(xi)?;
        if small::max_abs(self.dim, &x) == 0.0 {
            return Err(NormError::Degenerate);
        }
        Ok(self.pack(self.primal(&x, true)))
    }

    /// F*(α), J*(α) and g*(α).
    pub fn dual_eval(&self, alpha: &[f64]) -> Result<NormEval, NormError> {
        let a = self.arg(alpha)?;
        if small::max_abs(self.dim, &a) == 0.0 {
            return Err(NormError::Degenerate);
        }
        Ok(self.pack(self.dual(&a, true)))
    }

    pub fn value(&self, xi: &[f64]) -> f64 {
        let x = small::from_slice(self.dim, xi);
        self.primal(&x, false).value
    }

    pub fn dual_value(&self, alpha: &[f64]) -> f64 {
        let a = small::from_slice(self.dim, alpha);
        self.dual(&a, false).value
    }

    /// J(ξ); J(0) = 0.
    pub fn legendre(&self, xi: &[f64]) -> Vec<f64> {
        let x = small::from_slice(self.dim, xi);
        self.primal(&x, false).grad[..self.dim].to_vec()
    }

    /// J*(α); J*(0) = 0.
    pub fn legendre_inv(&self, alpha: &[f64]) -> Vec<f64> {
        let a = small::from_slice(self.dim, alpha);
        self.dual(&a, false).grad[..self.dim].to_vec()
    }

    /// Primal value, J and (optionally) g at a stack vector.
    pub(crate) fn primal(&self, x: &Vector, hess: bool) -> Local {
        let n = self.dim;
        if small::max_abs(n, x) == 0.0 {
            return ZERO_LOCAL;
        }
        match &self.kind {
            Kind::Quadratic { a, .. } => quadratic_eval(n, a, x),
            Kind::Lp { p, .. } => lp_eval(n, *p, x, hess),
            Kind::Deformed { base, s, .. } => {
                let y = small::matvec(n, s, x);
                let l = base.primal(&y, hess);
                Local {
                    value: l.value,
                    grad: small::matvec_t(n, s, &l.grad),
                    hess: if hess {
                        small::congruence(n, s, &l.hess)
                    } else {
                        ZERO_M
                    },
                }
            }
            Kind::Randers { primal, .. } => randers_eval(n, primal, x, hess),
            Kind::Regularized { base, eps, mode } => match mode {
                RegMode::Lower => {
                    let l = base.primal(x, hess);
                    let v2 = l.value * l.value + eps * small::dot(n, x, x);
                    let mut h = l.hess;
                    if hess {
                        for (i, row) in h.iter_mut().enumerate().take(n) {
                            row[i] += eps;
                        }
                    }
                    Local {
                        value: v2.sqrt(),
                        grad: small::axpy(n, *eps, x, &l.grad),
                        hess: if hess { h } else { ZERO_M },
                    }
                }
                RegMode::Upper => {
                    // J(ξ) = y where J*_base(y) + εy = ξ
                    let y = newton_legendre(base, Side::Dual, 1.0, *eps, x);
                    let value = small::dot(n, x, &y).max(0.0).sqrt();
                    let h = if hess {
                        let gb = base.dual(&y, true).hess;
                        let mut m = gb;
                        for (i, row) in m.iter_mut().enumerate().take(n) {
                            row[i] += eps;
                        }
                        sym_inverse(n, &m)
                    } else {
                        ZERO_M
                    };
                    Local {
                        value,
                        grad: y,
                        hess: h,
                    }
                }
                RegMode::Full => {
                    let c2 = 1.0 / (1.0 - eps * eps);
                    // c²η + εc² J_base(η) = ξ
                    let eta = newton_legendre(base, Side::Primal, eps * c2, c2, x);
                    let lb = base.primal(&eta, hess);
                    let alpha = small::scale(n, c2, &small::axpy(n, *eps, &eta, &lb.grad));
                    let value = small::dot(n, x, &alpha).max(0.0).sqrt();
                    let h = if hess {
                        full_reg_matrix(n, &lb.hess, *eps, false)
                    } else {
                        ZERO_M
                    };
                    Local {
                        value,
                        grad: alpha,
                        hess: h,
                    }
                }
            },
            Kind::TwoSlope { a, b } => two_slope_eval(x[0], *a, *b),
        }
    }

    /// Dual value, J* and (optionally) g* at a stack covector.
    pub(crate) fn dual(&self, a: &Vector, hess: bool) -> Local {
        let n = self.dim;
        if small::max_abs(n, a) == 0.0 {
            return ZERO_LOCAL;
        }
        match &self.kind {
            Kind::Quadratic { a_inv, .. } => quadratic_eval(n, a_inv, a),
            Kind::Lp { q, .. } => lp_eval(n, *q, a, hess),
            Kind::Deformed { base, s_inv, .. } => {
                let beta = small::matvec_t(n, s_inv, a);
                let l = base.dual(&beta, hess);
                Local {
                    value: l.value,
                    grad: small::matvec(n, s_inv, &l.grad),
                    hess: if hess {
                        small::congruence(n, &small::transpose(n, s_inv), &l.hess)
                    } else {
                        ZERO_M
                    },
                }
            }
            Kind::Randers { dual, .. } => randers_eval(n, dual, a, hess),
            Kind::Regularized { base, eps, mode } => match mode {
                RegMode::Lower => {
                    let y = newton_legendre(base, Side::Primal, 1.0, *eps, a);
                    let value = small::dot(n, a, &y).max(0.0).sqrt();
                    let h = if hess {
                        let mut m = base.primal(&y, true).hess;
                        for (i, row) in m.iter_mut().enumerate().take(n) {
                            row[i] += eps;
                        }
                        sym_inverse(n, &m)
                    } else {
                        ZERO_M
                    };
                    Local {
                        value,
                        grad: y,
                        hess: h,
                    }
                }
                RegMode::Upper => {
                    let l = base.dual(a, hess);
                    let v2 = l.value * l.value + eps * small::dot(n, a, a);
                    let mut h = l.hess;
                    if hess {
                        for (i, row) in h.iter_mut().enumerate().take(n) {
                            row[i] += eps;
                        }
                    }
                    Local {
                        value: v2.sqrt(),
                        grad: small::axpy(n, *eps, a, &l.grad),
                        hess: if hess { h } else { ZERO_M },
                    }
                }
                RegMode::Full => {
                    let c2 = 1.0 / (1.0 - eps * eps);
                    // J_base(η') + εη' = α, then J*(α) = η'/c² + εα
                    let eta = newton_legendre(base, Side::Primal, 1.0, *eps, a);
                    let xi = small::axpy(n, 1.0 / c2, &eta, &small::scale(n, *eps, a));
                    let value = small::dot(n, a, &xi).max(0.0).sqrt();
                    let h = if hess {
                        let gb = base.primal(&eta, true).hess;
                        full_reg_matrix(n, &gb, *eps, true)
                    } else {
                        ZERO_M
                    };
                    Local {
                        value,
                        grad: xi,
                        hess: h,
                    }
                }
            },
            Kind::TwoSlope { a: sa, b: sb } => two_slope_eval(a[0], 1.0 / sa, 1.0 / sb),
        }
    }
}

impl Norm {
    /// A matrix S ⪰ g*(α) with ½F*(β)² ≤ ½F*(α)² + ⟨J*(α), β−α⟩ + ½(β−α)ᵀS(β−α).
    ///
    /// For ℓ^q with q < 2 this is diag(|αᵢ|^(q−2)) in the normalized scaling,
    /// from ½‖β‖_q² = inf_η ½Σβᵢ²/ηᵢ; its curvature stays finite relative to
    /// the value where g* oscillates badly under Newton. Other variants
    /// return g* itself.
    pub(crate) fn dual_majorant(&self, a: &Vector) -> Matrix {
        let n = self.dim;
        match &self.kind {
            Kind::Lp { q, .. } if *q < 2.0 && small::max_abs(n, a) > 0.0 => {
                let l = lp_eval(n, *q, a, false);
                let mut h = ZERO_M;
                for (i, row) in h.iter_mut().enumerate().take(n) {
                    let r = (a[i].abs() / l.value).max(RATIO_FLOOR);
                    row[i] = r.powf(*q - 2.0);
                }
                h
            }
            Kind::Deformed { base, s_inv, .. } => {
                let beta = small::matvec_t(n, s_inv, a);
                small::congruence(n, &small::transpose(n, s_inv), &base.dual_majorant(&beta))
            }
            Kind::Regularized {
                base,
                eps,
                mode: RegMode::Upper,
            } => {
                let mut h = base.dual_majorant(a);
                for (i, row) in h.iter_mut().enumerate().take(n) {
                    row[i] += eps;
                }
                h
            }
            _ => self.dual(a, true).hess,
        }
    }
}

fn sym_inverse(n: usize, m: &Matrix) -> Matrix {
    let mut inv = small::inverse(n, m).unwrap_or(ZERO_M);
    small::symmetrize(n, &mut inv);
    inv
}

/// (G+ε)(1+εG)⁻¹, or its inverse when `inverse` is set.
fn full_reg_matrix(n: usize, g: &Matrix, eps: f64, inverse: bool) -> Matrix {
    let mut num = *g;
    let mut den = small::scale_mat(n, eps, g);
    for i in 0..n {
        num[i][i] += eps;
        den[i][i] += 1.0;
    }
    let (top, bottom) = if inverse { (den, num) } else { (num, den) };
    let mut m = small::matmul(n, &top, &sym_inverse(n, &bottom));
    small::symmetrize(n, &mut m);
    m
}

#[derive(Clone, Copy)]
enum Side {
    Primal,
    Dual,
}

fn side_eval(norm: &Norm, side: Side, y: &Vector, hess: bool) -> Local {
    match side {
        Side::Primal => norm.primal(y, hess),
        Side::Dual => norm.dual(y, hess),
    }
}

/// Solve s·J(y) + t·y = r by damped Newton on the strictly convex
/// Φ(y) = s·B(y)²/2 + t|y|²/2 − ⟨r,y⟩, where B is the primal or dual side of
/// `norm`.
fn newton_legendre(norm: &Norm, side: Side, s: f64, t: f64, r: &Vector) -> Vector {
    let n = norm.dim;
    let rn = small::max_abs(n, r);
    if rn == 0.0 {
        return ZERO_V;
    }
    let phi = |y: &Vector| -> f64 {
        let b = side_eval(norm, side, y, false).value;
        0.5 * s * b * b + 0.5 * t * small::dot(n, y, y) - small::dot(n, r, y)
    };
    // start from the isotropic guess scaled to the norm's size along r
    let br = side_eval(norm, side, r, false).value;
    let rr = small::dot(n, r, r);
    let mut y = small::scale(n, 1.0 / (s * br * br / rr + t), r);
    let mut f = phi(&y);
    for _ in 0..NEWTON_MAX_ITER {
        let l = side_eval(norm, side, &y, true);
        let mut grad = ZERO_V;
        for i in 0..n {
            grad[i] = s * l.grad[i] + t * y[i] - r[i];
        }
        if small::max_abs(n, &grad) <= NEWTON_TOL * rn {
            return y;
        }
        let mut h = small::scale_mat(n, s, &l.hess);
        for (i, row) in h.iter_mut().enumerate().take(n) {
            row[i] += t;
        }
        let step = small::spd_solve(n, &h, &grad).unwrap_or_else(|| small::scale(n, 1.0 / t, &grad));
        let slope = small::dot(n, &grad, &step);
        let mut lam = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = small::axpy(n, -lam, &step, &y);
            let fc = phi(&cand);
            if fc <= f - 1e-4 * lam * slope || (fc - f).abs() <= 1e-15 * f.abs().max(1e-300) {
                y = cand;
                f = fc;
                accepted = true;
                break;
            }
            lam *= 0.5;
        }
        if !accepted {
            // no further decrease is representable; accept current point
            return y;
        }
    }
    y
}

fn quadratic_eval(n: usize, a: &Matrix, x: &Vector) -> Local {
    let ax = small::matvec(n, a, x);
    Local {
        value: small::dot(n, x, &ax).max(0.0).sqrt(),
        grad: ax,
        hess: *a,
    }
}

/// ℓᵖ norm with J and g from the closed form of ∂(‖ξ‖²/2).
fn lp_eval(n: usize, p: f64, x: &Vector, hess: bool) -> Local {
    let m = small::max_abs(n, x);
    let mut s = 0.0;
    for xi in x.iter().take(n) {
        s += (xi.abs() / m).powf(p);
    }
    let sp = s.powf(1.0 / p);
    let norm = m * sp;
    let mut r = ZERO_V;
    let mut t = ZERO_V;
    let mut grad = ZERO_V;
    for i in 0..n {
        r[i] = (x[i].abs() / m) / sp;
        t[i] = r[i].powf(p - 1.0) * x[i].signum();
        grad[i] = norm * t[i];
    }
    let mut h = ZERO_M;
    if hess {
        for i in 0..n {
            for j in 0..n {
                h[i][j] = (2.0 - p) * t[i] * t[j];
            }
            let ri = if p < 2.0 { r[i].max(RATIO_FLOOR) } else { r[i] };
            h[i][i] += (p - 1.0) * ri.powf(p - 2.0);
        }
    }
    Local {
        value: norm,
        grad,
        hess: h,
    }
}

fn randers_eval(n: usize, d: &RandersData, x: &Vector, hess: bool) -> Local {
    let ax = small::matvec(n, &d.a, x);
    let q = small::dot(n, x, &ax).max(0.0).sqrt();
    if q == 0.0 {
        return ZERO_LOCAL;
    }
    let f = q + small::dot(n, &d.b, x);
    let mut w = ZERO_V;
    for i in 0..n {
        w[i] = ax[i] / q + d.b[i];
    }
    let grad = small::scale(n, f, &w);
    let mut h = ZERO_M;
    if hess {
        for i in 0..n {
            for j in 0..n {
                h[i][j] = w[i] * w[j] + f * (d.a[i][j] / q - ax[i] * ax[j] / (q * q * q));
            }
        }
        small::symmetrize(n, &mut h);
    }
    Local {
        value: f,
        grad,
        hess: h,
    }
}

/// F(ξ) = a·ξ for ξ ≥ 0 and b·(−ξ) otherwise.
fn two_slope_eval(x: f64, a: f64, b: f64) -> Local {
    let c = if x >= 0.0 { a } else { b };
    let mut grad = ZERO_V;
    grad[0] = c * c * x;
    let mut hess = ZERO_M;
    hess[0][0] = c * c;
    Local {
        value: c * x.abs(),
        grad,
        hess,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_hessian(norm: &Norm, x: &[f64]) -> Vec<Vec<f64>> {
        let n = x.len();
        let h = 1e-4 * x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let mut out = vec![vec![0.0; n]; n];
        for j in 0..n {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += h;
            xm[j] -= h;
            let jp = norm.legendre(&xp);
            let jm = norm.legendre(&xm);
            for i in 0..n {
                out[i][j] = (jp[i] - jm[i]) / (2.0 * h);
            }
        }
        out
    }

    #[test]
    fn euclidean_value() {
        let n = NormSpec::euclidean(2).build().unwrap();
        assert_eq!(n.value(&[3.0, 4.0]), 5.0);
    }

    #[test]
    fn quadratic_hessian_is_matrix() {
        let n = NormSpec::quadratic(2, vec![2.0, 0.5, 0.5, 3.0]).build().unwrap();
        let e = n.eval(&[0.3, -1.2]).unwrap();
        assert_eq!(e.hessian[0][..2], [2.0, 0.5]);
        assert_eq!(e.hessian[1][..2], [0.5, 3.0]);
        assert!((e.covector[0] - (2.0 * 0.3 - 0.5 * 1.2)).abs() < 1e-15);
        assert_eq!(n.legendre(&[1.0, 1.0]), vec![2.5, 3.5]);
    }

    #[test]
    fn diag_quadratic_legendre() {
        let n = NormSpec::quadratic(2, vec![2.0, 0.0, 0.0, 3.0]).build().unwrap();
        assert_eq!(n.legendre(&[1.0, 1.0]), vec![2.0, 3.0]);
        let back = n.legendre_inv(&[2.0, 3.0]);
        assert!((back[0] - 1.0).abs() < 1e-15 && (back[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn lp4_values_at_diagonal() {
        let n = NormSpec::lp(2, 4.0).build().unwrap();
        let e = n.eval(&[1.0, 1.0]).unwrap();
        assert!((e.value - 2f64.powf(0.25)).abs() < 1e-15);
        let want = 2f64.powf(-0.5);
        assert!((e.covector[0] - want).abs() < 1e-15);
        assert!((e.covector[1] - want).abs() < 1e-15);
        let fd = fd_hessian(&n, &[1.0, 1.0]);
        for i in 0..2 {
            for j in 0..2 {
                assert!((fd[i][j] - e.hessian[i][j]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn lp4_dual_on_axis() {
        let n = NormSpec::lp(2, 4.0).build().unwrap();
        assert!((n.dual_value(&[1.0, 0.0]) - 1.0).abs() < 1e-15);
        assert!((n.dual_value(&[1.0, 1.0]) - 2f64.powf(0.75)).abs() < 1e-14);
    }

    #[test]
    fn zero_maps_to_zero() {
        for spec in [
            NormSpec::lp(2, 3.0),
            NormSpec::two_slope(1.0, 2.0),
            NormSpec::lp(3, 1.5).regularize(0.2, RegMode::Lower).unwrap(),
        ] {
            let n = spec.build().unwrap();
            let z = vec![0.0; n.dim()];
            assert!(n.legendre(&z).iter().all(|v| *v == 0.0));
            assert!(n.legendre_inv(&z).iter().all(|v| *v == 0.0));
            assert_eq!(n.eval(&z), Err(NormError::Degenerate));
        }
    }

    #[test]
    fn lp3_round_trip_against_maximization() {
        let n = NormSpec::lp(2, 3.0).build().unwrap();
        let xi = [1.0, -2.0];
        let alpha = n.legendre(&xi);
        let back = n.legendre_inv(&alpha);
        for i in 0..2 {
            assert!((back[i] - xi[i]).abs() < 1e-12);
        }
        // brute-force maximizer of α·ξ − F²/2 by coordinate refinement
        let f = |x: &[f64]| alpha[0] * x[0] + alpha[1] * x[1] - 0.5 * n.value(x).powi(2);
        let mut best = [0.0, 0.0];
        let mut step = 1.0;
        while step > 1e-13 {
            let mut improved = true;
            while improved {
                improved = false;
                for d in [[step, 0.0], [-step, 0.0], [0.0, step], [0.0, -step]] {
                    let c = [best[0] + d[0], best[1] + d[1]];
                    if f(&c) > f(&best) {
                        best = c;
                        improved = true;
                    }
                }
            }
            step *= 0.5;
        }
        assert!((best[0] - xi[0]).abs() < 1e-6 && (best[1] - xi[1]).abs() < 1e-6);
    }

    #[test]
    fn deformed_legendre_formula() {
        let base = NormSpec::lp(2, 4.0);
        let sigma = vec![1.0, 0.5, -0.2, 2.0];
        let n = NormSpec::deformed(base.clone(), sigma.clone()).build().unwrap();
        let b = base.build().unwrap();
        let xi = [0.7, -0.3];
        let sx = [sigma[0] * xi[0] + sigma[1] * xi[1], sigma[2] * xi[0] + sigma[3] * xi[1]];
        let j0 = b.legendre(&sx);
        let want = [
            sigma[0] * j0[0] + sigma[2] * j0[1],
            sigma[1] * j0[0] + sigma[3] * j0[1],
        ];
        let got = n.legendre(&xi);
        assert!((got[0] - want[0]).abs() < 1e-14 && (got[1] - want[1]).abs() < 1e-14);
    }

    #[test]
    fn two_slope_dual() {
        let n = NormSpec::two_slope(1.0, 2.0).build().unwrap();
        assert_eq!(n.value(&[3.0]), 3.0);
        assert_eq!(n.value(&[-3.0]), 6.0);
        assert_eq!(n.dual_value(&[2.0]), 2.0);
        assert_eq!(n.dual_value(&[-2.0]), 1.0);
        assert_eq!(n.legendre_inv(&n.legendre(&[-1.5])), vec![-1.5]);
    }

    #[test]
    fn two_slope_reverse_swaps() {
        assert_eq!(
            NormSpec::two_slope(1.0, 2.0).reverse(),
            NormSpec::two_slope(2.0, 1.0)
        );
    }

    #[test]
    fn randers_matches_closed_form_1d() {
        // √(4ξ²) + 0.5ξ: slopes 2.5 forward, 1.5 backward
        let n = NormSpec::randers(1, vec![4.0], vec![0.5]).build().unwrap();
        assert!((n.value(&[1.0]) - 2.5).abs() < 1e-15);
        assert!((n.value(&[-1.0]) - 1.5).abs() < 1e-15);
        assert!((n.dual_value(&[1.0]) - 1.0 / 2.5).abs() < 1e-15);
        assert!((n.dual_value(&[-1.0]) - 1.0 / 1.5).abs() < 1e-15);
    }

    #[test]
    fn randers_rejects_large_drift() {
        assert!(NormSpec::randers(2, vec![1.0, 0.0, 0.0, 1.0], vec![0.8, 0.7])
            .validate()
            .is_err());
    }

    #[test]
    fn full_regularization_of_identity_is_identity() {
        for eps in [0.01, 0.3, 0.9] {
            let n = NormSpec::euclidean(3)
                .regularize(eps, RegMode::Full)
                .unwrap()
                .build()
                .unwrap();
            let e = n.eval(&[0.3, -0.4, 1.1]).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((e.hessian[i][j] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn full_regularization_of_quadratic_matches_matrix_formula() {
        let eps = 0.2;
        let a = [[2.0, 0.3], [0.3, 0.5]];
        let n = NormSpec::quadratic(2, vec![2.0, 0.3, 0.3, 0.5])
            .regularize(eps, RegMode::Full)
            .unwrap()
            .build()
            .unwrap();
        let e = n.eval(&[0.4, 0.9]).unwrap();
        let g = nalgebra::Matrix2::new(a[0][0], a[0][1], a[1][0], a[1][1]);
        let want = (g + nalgebra::Matrix2::identity() * eps)
            * (nalgebra::Matrix2::identity() + g * eps).try_inverse().unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((e.hessian[i][j] - want[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lower_regularization_dual_is_inverse_hessian() {
        let n = NormSpec::lp(2, 1.5)
            .regularize(0.1, RegMode::Lower)
            .unwrap()
            .build()
            .unwrap();
        let alpha = [0.8, -0.3];
        let d = n.dual_eval(&alpha).unwrap();
        let p = n.eval(&d.covector[..2]).unwrap();
        let prod = small::matmul(2, &d.hessian, &p.hessian);
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((prod[i][j] - want).abs() < 1e-9, "{prod:?}");
            }
        }
    }

    #[test]
    fn regularize_rejects_bad_eps() {
        assert!(NormSpec::lp(2, 3.0).regularize(0.0, RegMode::Lower).is_err());
        assert!(NormSpec::lp(2, 3.0).regularize(1.0, RegMode::Full).is_err());
    }

    #[test]
    fn json_round_trip() {
        let spec = NormSpec::deformed(
            NormSpec::lp(2, 4.0).regularize(0.1, RegMode::Full).unwrap(),
            vec![1.0, 0.2, 0.0, 1.0],
        );
        let s = serde_json::to_string(&spec).unwrap();
        assert!(s.contains("\"variant\":\"deformed\""));
        let back: NormSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, spec);
        let ts: NormSpec =
            serde_json::from_str(r#"{"variant":"two_slope_1d","a":1.0,"b":2.0}"#).unwrap();
        assert_eq!(ts, NormSpec::two_slope(1.0, 2.0));
    }

    #[test]
    fn non_spd_rejected() {
        let r = NormSpec::quadratic(2, vec![1.0, 2.0, 2.0, 1.0]).build();
        assert!(matches!(r, Err(NormError::Invalid(_))));
    }
}
