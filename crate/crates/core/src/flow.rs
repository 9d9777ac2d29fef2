//! Heat flow as the gradient flow of the energy: minimizing-movement and
//! semi-implicit steps, trajectories, ground states, and the contraction and
//! Davies certificates.

use std::io::Write;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{distance_field, DistanceDirection, Domain, FieldError, ScalarField, WeightField};
use crate::operators::{energy, energy_and_gradient, laplacian, WeightedLaplacian};
use crate::optim::{self, LbfgsOptions, Termination};

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("invalid solver input: {0}")]
    Invalid(String),
    #[error("inner solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        last: ScalarField,
    },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("trajectory io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    MinimizingMovement,
    SemiImplicit,
}

fn default_record_every() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub delta: f64,
    pub scheme: Scheme,
    /// bound on ‖(u − u₀) − δΔu‖_{L²(m)} at an accepted step
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    /// ε of the regularized norm used only to warm-start or linearize
    #[serde(default)]
    pub regularization_eps: f64,
    /// keep every k-th state in the trajectory (0: only initial and final)
    #[serde(default = "default_record_every")]
    pub record_every: usize,
}

impl SolverConfig {
    /// δ = λ* h²/4, with λ* clamped to [0.1, 1] so degenerate norms still
    /// get a usable step.
    pub fn default_for(dom: &Domain) -> SolverConfig {
        let h = dom.grid.min_spacing();
        let ls = dom.field.constants().lambda_star.clamp(0.1, 1.0);
        SolverConfig {
            delta: ls * h * h / 4.0,
            scheme: Scheme::MinimizingMovement,
            inner_tol: 1e-9,
            inner_max_iter: 500,
            regularization_eps: 0.0,
            record_every: 1,
        }
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.inner_tol = tol;
        self
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(FlowError::Invalid(format!("delta {} not > 0", self.delta)));
        }
        if !(self.inner_tol.is_finite() && self.inner_tol > 0.0) {
            return Err(FlowError::Invalid(format!("inner_tol {} not > 0", self.inner_tol)));
        }
        if self.inner_max_iter == 0 {
            return Err(FlowError::Invalid("inner_max_iter is 0".into()));
        }
        if !(self.regularization_eps >= 0.0 && self.regularization_eps < 1.0) {
            return Err(FlowError::Invalid(format!(
                "regularization_eps {} outside [0, 1)",
                self.regularization_eps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Step {
    pub u: ScalarField,
    pub inner_iters: usize,
    /// ‖(u − u₀) − δΔu‖_m for minimizing movement, linear residual otherwise
    pub residual: f64,
    /// set when the step was accepted above `inner_tol` because the residual
    /// reached the round-off floor of the operator
    pub roundoff_floor: Option<f64>,
}

fn check_len(dom: &Domain, u: &[f64]) -> Result<(), FlowError> {
    if u.len() != dom.grid.len() {
        return Err(FlowError::Invalid(format!(
            "field has {} values for {} cells",
            u.len(),
            dom.grid.len()
        )));
    }
    Ok(())
}

/// Subtract the m-weighted mean.
fn project_mean(weight: &WeightField, total: f64, v: &mut [f64]) {
    let mean = weight.integral(v) / total;
    v.iter_mut().for_each(|x| *x -= mean);
}

/// One minimizing-movement step: argmin 𝓔(u) + ‖u − u₀‖²_m / 2δ.
///
/// Damped Newton with I/δ − Δ^{(u)} as the model Hessian, except that g* is
/// replaced by its quadratic majorant where they differ (ℓᵖ with p > 2).
/// There g* is unbounded near coordinate planes and exact Newton
/// oscillates across them for hundreds of iterations; the majorant turns
/// the step into a monotone majorize-minimize iteration. Systems are solved
/// by sparse Cholesky, with Armijo backtracking on the objective. With
/// `regularization_eps` > 0 the model (never the objective) uses the
/// regularized norm. A step that stalls within a small factor of
/// `roundoff_floor` is accepted and flagged; otherwise L-BFGS takes over.
pub fn mm_step(dom: &Domain, u0: &[f64], cfg: &SolverConfig) -> Result<Step, FlowError> {
    cfg.validate()?;
    check_len(dom, u0)?;
    let hess_dom = if cfg.regularization_eps > 0.0 {
        Some(dom.with_field(dom.field.regularized(cfg.regularization_eps)?))
    } else {
        None
    };
    let mut u = u0.to_vec();
    let (iters, residual, status) = newton_mm(dom, hess_dom.as_ref().unwrap_or(dom), u0, &mut u, cfg);
    match status {
        NewtonStatus::Converged => {
            return Ok(Step {
                u: ScalarField::new(u),
                inner_iters: iters,
                residual,
                roundoff_floor: None,
            })
        }
        NewtonStatus::RoundoffLimited(floor) => {
            return Ok(Step {
                u: ScalarField::new(u),
                inner_iters: iters,
                residual,
                roundoff_floor: Some(floor),
            })
        }
        NewtonStatus::Failed => {}
    }
    let budget = cfg.inner_max_iter.saturating_sub(iters).max(1);
    lbfgs_mm(dom, u0, u, cfg, budget, iters)
}

/// Objective value and metric gradient (u − u₀)/δ − Δu (mass-projected on
/// periodic grids).
fn mm_objective(dom: &Domain, u0: &[f64], delta: f64, x: &[f64], g: &mut [f64]) -> f64 {
    let m = &dom.weight.m;
    let e = energy_and_gradient(dom, x, Some(g));
    let mut p = 0.0;
    for i in 0..x.len() {
        let d = x[i] - u0[i];
        g[i] = g[i] / m[i] + d / delta;
        p += m[i] * d * d;
    }
    if dom.grid.is_periodic() {
        project_mean(&dom.weight, dom.weight.total_mass(), g);
    }
    e + p / (2.0 * delta)
}

enum NewtonStatus {
    Converged,
    /// stalled at a residual within the round-off floor (the value)
    RoundoffLimited(f64),
    Failed,
}

/// Residual change caused by perturbing u at the level of machine epsilon.
/// For norms whose J* is only Hölder continuous (ℓᵖ with p > 2) this is far
/// above δ·ε·‖Δu‖ and bounds the attainable residual.
pub fn roundoff_floor(dom: &Domain, u: &[f64], delta: f64) -> f64 {
    let lap = laplacian(dom, u);
    let scale = u.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
    let mut worst = 0.0_f64;
    for k in 0..3usize {
        let v: Vec<f64> = u
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let e = ((i * 7919 + k * 104_729) % 13) as f64 - 6.0;
                x + 2.0 * f64::EPSILON * e * scale
            })
            .collect();
        let l = laplacian(dom, &v);
        let d: Vec<f64> = l.iter().zip(lap.iter()).map(|(a, b)| a - b).collect();
        worst = worst.max(delta * dom.weight.l2_norm(&d));
    }
    worst
}

const ROUNDOFF_FACTOR: f64 = 10.0;

fn newton_mm(
    dom: &Domain,
    hess_dom: &Domain,
    u0: &[f64],
    u: &mut [f64],
    cfg: &SolverConfig,
) -> (usize, f64, NewtonStatus) {
    let n = u.len();
    let m = &dom.weight.m;
    let delta = cfg.delta;
    let periodic = dom.grid.is_periodic();
    let total = dom.weight.total_mass();
    let mut g = vec![0.0; n];
    let mut gt = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut value = mm_objective(dom, u0, delta, u, &mut g);
    let mut chol = optim::SparseCholesky::new();
    let mut iters = 0;
    let mut residual = delta * dom.weight.l2_norm(&g);
    let mut best = residual;
    let mut since_best = 0;
    let stalled = |u: &[f64], residual: f64| {
        let floor = roundoff_floor(dom, u, delta);
        if residual <= ROUNDOFF_FACTOR * floor {
            NewtonStatus::RoundoffLimited(floor)
        } else {
            NewtonStatus::Failed
        }
    };
    while iters < cfg.inner_max_iter {
        if residual <= cfg.inner_tol {
            return (iters, residual, NewtonStatus::Converged);
        }
        if since_best >= 8 {
            return (iters, residual, stalled(u, residual));
        }
        iters += 1;
        let op = WeightedLaplacian::majorant(hess_dom, u);
        let mut entries = op.stiffness();
        entries.extend((0..n).map(|i| (i, i, m[i] / delta)));
        for i in 0..n {
            d[i] = -m[i] * g[i];
        }
        if !chol.solve(n, &entries, &mut d) {
            // not expected (the matrix is SPD); Jacobi CG as a safety net
            let rhs: Vec<f64> = g.iter().map(|x| -x).collect();
            d.iter_mut().for_each(|x| *x = 0.0);
            let diag: Vec<f64> = op.neg_diagonal().iter().map(|x| x + 1.0 / delta).collect();
            optim::preconditioned_cg(
                |v, out| {
                    op.apply_into(v, out);
                    for i in 0..v.len() {
                        out[i] = v[i] / delta - out[i];
                    }
                },
                Some(&diag),
                &rhs,
                &mut d,
                m,
                1e-10,
                4 * n.max(250),
            );
        }
        if periodic {
            project_mean(&dom.weight, total, &mut d);
        }
        let slope = dom.weight.inner(&g, &d);
        if !(slope < 0.0) {
            return (iters, residual, stalled(u, residual));
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            for i in 0..n {
                trial[i] = u[i] + step * d[i];
            }
            let vt = mm_objective(dom, u0, delta, &trial, &mut gt);
            let rt = delta * dom.weight.l2_norm(&gt);
            // below round-off in the objective, fall back to the residual
            let ok = if value - vt > 1e-13 * value.abs() {
                vt <= value + 1e-4 * step * slope
            } else {
                rt < residual
            };
            if vt.is_finite() && ok {
                u.copy_from_slice(&trial);
                g.copy_from_slice(&gt);
                value = vt;
                residual = rt;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return (iters, residual, stalled(u, residual));
        }
        if residual < 0.5 * best {
            best = residual;
            since_best = 0;
        } else {
            since_best += 1;
        }
    }
    let status = if residual <= cfg.inner_tol {
        NewtonStatus::Converged
    } else {
        stalled(u, residual)
    };
    (iters, residual, status)
}

fn lbfgs_mm(
    dom: &Domain,
    u0: &[f64],
    mut u: Vec<f64>,
    cfg: &SolverConfig,
    budget: usize,
    used: usize,
) -> Result<Step, FlowError> {
    let m = &dom.weight.m;
    let delta = cfg.delta;
    let mut residual = f64::INFINITY;
    let out = optim::minimize(
        &mut u,
        m,
        |x, g| {
            // minimize wants the Euclidean gradient
            let v = mm_objective(dom, u0, delta, x, g);
            for i in 0..x.len() {
                g[i] *= m[i];
            }
            v
        },
        |_| {},
        |_, g, _| {
            residual = delta * dom.weight.l2_norm(g);
            residual <= cfg.inner_tol
        },
        LbfgsOptions {
            memory: 12,
            max_iter: budget,
        },
    );
    if out.termination != Termination::Converged {
        return Err(FlowError::NonConvergence {
            iterations: used + out.iterations,
            residual,
            last: ScalarField::new(u),
        });
    }
    Ok(Step {
        u: ScalarField::new(u),
        inner_iters: used + out.iterations,
        residual,
        roundoff_floor: None,
    })
}

fn linear_step(dom: &Domain, u0: &[f64], cfg: &SolverConfig) -> Result<Step, FlowError> {
    let op = WeightedLaplacian::new(dom, u0);
    let delta = cfg.delta;
    let m = &dom.weight.m;
    let n = u0.len();
    let apply = |v: &[f64], out: &mut [f64]| {
        op.apply_into(v, out);
        for i in 0..v.len() {
            out[i] = v[i] - delta * out[i];
        }
    };
    // (M + δK)u = Mu₀
    let mut entries: Vec<(usize, usize, f64)> =
        op.stiffness().into_iter().map(|(i, j, v)| (i, j, delta * v)).collect();
    entries.extend((0..n).map(|i| (i, i, m[i])));
    let mut u: Vec<f64> = (0..n).map(|i| m[i] * u0[i]).collect();
    let mut iters = 1;
    if !optim::SparseCholesky::new().solve(n, &entries, &mut u) {
        u.copy_from_slice(u0);
        let (it, _, _) = optim::conjugate_gradient(
            apply,
            u0,
            &mut u,
            m,
            cfg.inner_tol / dom.weight.l2_norm(u0).max(1e-300),
            cfg.inner_max_iter,
        );
        iters = it;
    }
    let mut r = vec![0.0; n];
    apply(&u, &mut r);
    r.iter_mut().zip(u0).for_each(|(a, b)| *a -= b);
    let residual = dom.weight.l2_norm(&r);
    if !(residual <= cfg.inner_tol.max(1e-13 * dom.weight.l2_norm(u0))) {
        return Err(FlowError::NonConvergence {
            iterations: iters,
            residual,
            last: ScalarField::new(u),
        });
    }
    Ok(Step {
        u: ScalarField::new(u),
        inner_iters: iters,
        residual,
        roundoff_floor: None,
    })
}

/// One step of (I − δΔ^{(u₀)})u = u₀ (sparse Cholesky, CG if that fails); with
/// `regularization_eps` > 0 the coefficients come from the regularized norm.
pub fn semi_implicit_step(dom: &Domain, u0: &[f64], cfg: &SolverConfig) -> Result<Step, FlowError> {
    cfg.validate()?;
    check_len(dom, u0)?;
    if cfg.regularization_eps > 0.0 {
        let reg = dom.with_field(dom.field.regularized(cfg.regularization_eps)?);
        linear_step(&reg, u0, cfg)
    } else {
        linear_step(dom, u0, cfg)
    }
}

pub fn step(dom: &Domain, u0: &[f64], cfg: &SolverConfig) -> Result<Step, FlowError> {
    match cfg.scheme {
        Scheme::MinimizingMovement => mm_step(dom, u0, cfg),
        Scheme::SemiImplicit => semi_implicit_step(dom, u0, cfg),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub t: f64,
    pub mass: f64,
    pub energy: f64,
    pub l2: f64,
    pub laplacian_l2: f64,
    pub inner_iters: usize,
}

#[derive(Debug, Clone)]
pub struct FlowTrajectory {
    /// one row per step, starting at t = 0
    pub diagnostics: Vec<Diagnostics>,
    pub state_times: Vec<f64>,
    pub states: Vec<ScalarField>,
}

impl FlowTrajectory {
    pub fn times(&self) -> Vec<f64> {
        self.diagnostics.iter().map(|d| d.t).collect()
    }

    pub fn final_state(&self) -> &ScalarField {
        self.states.last().expect("trajectory holds the initial state")
    }

    pub fn final_time(&self) -> f64 {
        *self.state_times.last().expect("trajectory holds the initial state")
    }

    /// Recorded state closest to time t.
    pub fn state_near(&self, t: f64) -> (f64, &ScalarField) {
        let i = self
            .state_times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        (self.state_times[i], &self.states[i])
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,mass,energy,l2,laplacian_l2,inner_iters")?;
        for d in &self.diagnostics {
            writeln!(
                w,
                "{:.12e},{:.17e},{:.17e},{:.17e},{:.17e},{}",
                d.t, d.mass, d.energy, d.l2, d.laplacian_l2, d.inner_iters
            )?;
        }
        Ok(())
    }
}

fn diagnose(dom: &Domain, u: &[f64], t: f64, inner_iters: usize) -> Diagnostics {
    let lap = laplacian(dom, u);
    Diagnostics {
        t,
        mass: dom.weight.integral(u),
        energy: energy(dom, u),
        l2: dom.weight.l2_norm(u),
        laplacian_l2: dom.weight.l2_norm(&lap),
        inner_iters,
    }
}

/// Step from 0 to `t_end`; the last step is shortened to land on `t_end`.
pub fn evolve(dom: &Domain, u0: &[f64], t_end: f64, cfg: &SolverConfig) -> Result<FlowTrajectory, FlowError> {
    cfg.validate()?;
    check_len(dom, u0)?;
    if !(t_end.is_finite() && t_end > 0.0) {
        return Err(FlowError::Invalid(format!("final time {t_end} not > 0")));
    }
    let n_steps = ((t_end / cfg.delta) - 1e-9).ceil().max(1.0) as usize;
    let mut traj = FlowTrajectory {
        diagnostics: vec![diagnose(dom, u0, 0.0, 0)],
        state_times: vec![0.0],
        states: vec![ScalarField::new(u0.to_vec())],
    };
    let mut u = u0.to_vec();
    let mut t = 0.0;
    for k in 1..=n_steps {
        let dt = if k == n_steps { t_end - t } else { cfg.delta };
        let local = SolverConfig {
            delta: dt,
            ..cfg.clone()
        };
        let s = step(dom, &u, &local)?;
        u = s.u.values;
        t = if k == n_steps { t_end } else { k as f64 * cfg.delta };
        traj.diagnostics.push(diagnose(dom, &u, t, s.inner_iters));
        let record = k == n_steps || (cfg.record_every > 0 && k % cfg.record_every == 0);
        if record {
            traj.state_times.push(t);
            traj.states.push(ScalarField::new(u.clone()));
        }
    }
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralMode {
    /// inf 2𝓔(u)/‖u‖² over fields vanishing on the boundary
    DirichletChi,
    /// the same over fields with ∫u dm = 0
    MeanZeroChiBar,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralReport {
    pub mode: SpectralMode,
    pub value: f64,
    #[serde(skip)]
    pub minimizer: Vec<f64>,
    /// Rayleigh quotient per iteration of the best start
    pub history: Vec<f64>,
    /// final value of every start
    pub start_values: Vec<f64>,
    pub iterations: usize,
}

fn starts(dom: &Domain, mode: SpectralMode, seed: u64) -> Vec<Vec<f64>> {
    use std::f64::consts::PI;
    let g = &dom.grid;
    let n = g.dim();
    let origin = g.spec().origin.clone().unwrap_or_else(|| vec![0.0; n]);
    let mut out = Vec::new();
    let rel = |x: &[f64], k: usize| (x[k] - origin[k]) / g.lengths()[k];
    match mode {
        SpectralMode::DirichletChi => {
            out.push(g.scalar_field(|x| (0..n).map(|k| (PI * rel(x, k)).sin()).product()).values);
        }
        SpectralMode::MeanZeroChiBar => {
            for k in 0..n {
                if g.is_periodic() {
                    out.push(g.scalar_field(|x| (2.0 * PI * rel(x, k)).cos()).values);
                    out.push(g.scalar_field(|x| (2.0 * PI * rel(x, k)).sin()).values);
                } else {
                    out.push(g.scalar_field(|x| rel(x, k) - 0.5).values);
                    out.push(g.scalar_field(|x| (PI * rel(x, k)).cos()).values);
                }
            }
            if g.is_periodic() && n >= 2 {
                out.push(g.scalar_field(|x| (2.0 * PI * (rel(x, 0) + rel(x, 1))).sin()).values);
                out.push(g.scalar_field(|x| (2.0 * PI * (rel(x, 0) - rel(x, 1))).sin()).values);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..2 {
        let mut v: Vec<f64> = (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        for _ in 0..20 {
            v = smooth(g, &v);
        }
        out.push(v);
    }
    out
}

/// One pass of neighbour averaging (ghosts count as zero).
fn smooth(g: &crate::field::Grid, v: &[f64]) -> Vec<f64> {
    (0..v.len())
        .map(|c| {
            let mut s = v[c];
            for k in 0..g.dim() {
                for dir in [-1, 1] {
                    s += g.neighbor(c, k, dir).map_or(0.0, |j| v[j]);
                }
            }
            s / (1 + 2 * g.dim()) as f64
        })
        .collect()
}

/// Ground state by L-BFGS on the Rayleigh quotient 2𝓔(u)/‖u‖²_m from a
/// handful of starts; returns the smallest value found.
pub fn ground_state(
    dom: &Domain,
    mode: SpectralMode,
    tol: f64,
    max_iter: usize,
) -> Result<SpectralReport, FlowError> {
    if mode == SpectralMode::DirichletChi && dom.grid.is_periodic() {
        return Err(FlowError::Invalid("dirichlet_chi needs a Dirichlet grid".into()));
    }
    let m = &dom.weight.m;
    let total = dom.weight.total_mass();
    let mean_zero = mode == SpectralMode::MeanZeroChiBar;
    let mut best: Option<SpectralReport> = None;
    let mut start_values = Vec::new();
    let mut any_converged = false;
    for mut u in starts(dom, mode, 7) {
        if mean_zero {
            project_mean(&dom.weight, total, &mut u);
        }
        let nu = dom.weight.l2_norm(&u);
        if nu == 0.0 {
            continue;
        }
        u.iter_mut().for_each(|x| *x /= nu);
        let mut history = Vec::new();
        let out = optim::minimize(
            &mut u,
            m,
            |x, g| {
                let e = energy_and_gradient(dom, x, Some(g));
                let nrm = dom.weight.inner(x, x);
                let r = 2.0 * e / nrm;
                for i in 0..x.len() {
                    g[i] = (2.0 * g[i] - 2.0 * r * m[i] * x[i]) / nrm;
                }
                r
            },
            |g| {
                if mean_zero {
                    project_mean(&dom.weight, total, g);
                }
            },
            |x, g, r| {
                history.push(r);
                dom.weight.l2_norm(g) * dom.weight.l2_norm(x) <= tol * r.abs().max(1e-300)
            },
            LbfgsOptions {
                memory: 20,
                max_iter,
            },
        );
        any_converged |= out.termination == Termination::Converged;
        let nu = dom.weight.l2_norm(&u);
        u.iter_mut().for_each(|x| *x /= nu);
        let value = 2.0 * energy(dom, &u);
        start_values.push(value);
        if best.as_ref().is_none_or(|b| value < b.value) {
            best = Some(SpectralReport {
                mode,
                value,
                minimizer: u,
                history,
                start_values: Vec::new(),
                iterations: out.iterations,
            });
        }
    }
    if !any_converged {
        let b = best.ok_or_else(|| FlowError::Invalid("no usable start".into()))?;
        return Err(FlowError::NonConvergence {
            iterations: b.iterations,
            residual: f64::NAN,
            last: ScalarField::new(b.minimizer),
        });
    }
    let mut b = best.expect("at least one start");
    b.start_values = start_values;
    Ok(b)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContractionReport {
    pub p: f64,
    pub kappa: f64,
    pub chi: f64,
    pub rate: f64,
    pub tolerance: f64,
    /// (t, ‖u_t − v_t‖_p / (e^{−rate t}‖u₀ − v₀‖_p))
    pub ratios: Vec<(f64, f64)>,
    pub max_ratio: f64,
    pub certified: bool,
    /// initial data coincide and stay equal
    pub coincident: bool,
}

/// Lᵖ contraction certificate at rate 4(p−1)/p²·κχ.
pub fn contraction_report(
    weight: &WeightField,
    u: &FlowTrajectory,
    v: &FlowTrajectory,
    p: f64,
    kappa: f64,
    chi: f64,
    tolerance: f64,
) -> Result<ContractionReport, FlowError> {
    if u.state_times.len() != v.state_times.len()
        || u.state_times
            .iter()
            .zip(&v.state_times)
            .any(|(a, b)| (a - b).abs() > 1e-12 * a.abs().max(1.0))
    {
        return Err(FlowError::Invalid("trajectories record different times".into()));
    }
    if !(p >= 1.0) {
        return Err(FlowError::Invalid(format!("p = {p} < 1")));
    }
    let rate = if p.is_infinite() {
        0.0
    } else {
        4.0 * (p - 1.0) / (p * p) * kappa * chi
    };
    let diff = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x - y).collect() };
    let d0 = weight.lp_norm(&diff(&u.states[0], &v.states[0]), p);
    let mut ratios = Vec::new();
    // the ratio is 1 at t = 0 by construction; the max is over later states
    let mut max_ratio = if u.states.len() > 1 { 0.0_f64 } else { 1.0 };
    let mut coincident = d0 == 0.0;
    for i in 0..u.states.len() {
        let t = u.state_times[i];
        let d = weight.lp_norm(&diff(&u.states[i], &v.states[i]), p);
        let r = if d0 == 0.0 {
            if d != 0.0 {
                coincident = false;
                f64::INFINITY
            } else {
                0.0
            }
        } else {
            d / ((-rate * t).exp() * d0)
        };
        if i > 0 {
            max_ratio = max_ratio.max(r);
        }
        ratios.push((t, r));
    }
    Ok(ContractionReport {
        p,
        kappa,
        chi,
        rate,
        tolerance,
        certified: max_ratio <= 1.0 + tolerance,
        ratios,
        max_ratio,
        coincident,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DaviesEntry {
    pub t: f64,
    /// ∫ u₀ P_t v₀ dm
    pub pairing: f64,
    pub bound: f64,
    pub ratio: f64,
    /// ratio against the bound built from d(supp v₀, supp u₀)
    pub ratio_source_to_target: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DaviesReport {
    /// inf d(x, y), x ∈ supp u₀, y ∈ supp v₀
    pub distance: f64,
    /// inf d(y, x), y ∈ supp v₀, x ∈ supp u₀
    pub distance_source_to_target: f64,
    pub entries: Vec<DaviesEntry>,
    pub tolerance: f64,
    pub certified: bool,
    pub source_to_target_holds: bool,
    pub overlapping: bool,
}

/// Distances between the supports of u₀ and v₀ in both orientations:
/// (inf d(x,y), inf d(y,x)) with x ∈ supp u₀, y ∈ supp v₀.
pub fn support_distances(dom: &Domain, u0: &[f64], v0: &[f64]) -> (f64, f64) {
    let su: Vec<usize> = (0..u0.len()).filter(|&c| u0[c] != 0.0).collect();
    let sv: Vec<usize> = (0..v0.len()).filter(|&c| v0[c] != 0.0).collect();
    let mut uv = f64::INFINITY;
    let mut vu = f64::INFINITY;
    for &x in &su {
        let from = distance_field(&dom.field, &dom.grid, x, DistanceDirection::FromZ);
        let to = distance_field(&dom.field, &dom.grid, x, DistanceDirection::ToZ);
        for &y in &sv {
            uv = uv.min(from.values[y]);
            vu = vu.min(to.values[y]);
        }
    }
    (uv, vu)
}

/// Integrated Gaussian bound ∫u₀ P_t v₀ dm ≤ exp(−d²/4t)‖u₀‖‖v₀‖ at the
/// requested times. The certificate uses d = inf d(x, y) from the support of
/// u₀ to that of v₀; the opposite orientation is reported alongside.
pub fn davies_check(
    dom: &Domain,
    u0: &[f64],
    v0: &[f64],
    times: &[f64],
    cfg: &SolverConfig,
    tolerance: f64,
) -> Result<DaviesReport, FlowError> {
    check_len(dom, u0)?;
    check_len(dom, v0)?;
    let t_end = times.iter().cloned().fold(0.0, f64::max);
    if times.is_empty() || t_end <= 0.0 {
        return Err(FlowError::Invalid("need positive report times".into()));
    }
    let (d, d_rev) = support_distances(dom, u0, v0);
    let overlapping = (0..u0.len()).any(|c| u0[c] != 0.0 && v0[c] != 0.0);
    let cfg = SolverConfig {
        record_every: 1,
        ..cfg.clone()
    };
    let traj = evolve(dom, v0, t_end, &cfg)?;
    let norms = dom.weight.l2_norm(u0) * dom.weight.l2_norm(v0);
    let mut entries = Vec::new();
    for &t in times {
        let (ts, state) = traj.state_near(t);
        let pairing = dom.weight.inner(u0, state);
        let bound = (-d * d / (4.0 * ts)).exp() * norms;
        let bound_rev = (-d_rev * d_rev / (4.0 * ts)).exp() * norms;
        entries.push(DaviesEntry {
            t: ts,
            pairing,
            bound,
            ratio: pairing / bound,
            ratio_source_to_target: pairing / bound_rev,
        });
    }
    Ok(DaviesReport {
        distance: d,
        distance_source_to_target: d_rev,
        certified: entries.iter().all(|e| e.ratio <= 1.0 + tolerance),
        source_to_target_holds: entries.iter().all(|e| e.ratio_source_to_target <= 1.0 + tolerance),
        entries,
        tolerance,
        overlapping,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentityDetails {
    /// max |mass_k − mass_{k−1}| / max(|mass_0|, 1)
    pub max_mass_drift: f64,
    /// max E_k − E_{k−1}; negative when the energy strictly decreases
    pub max_energy_increase: f64,
    pub energy_strictly_decreasing: bool,
    /// max |(½‖u_k‖² − ½‖u_{k−1}‖²)/δ_k + 2E_k| / E_k
    pub max_identity_error: f64,
    pub steps: usize,
}

/// Per-step gradient-flow identities along a trajectory: mass drift
/// ≤ `mass_tol`, E strictly decreasing and the L² identity
/// ∂ₜ½‖u‖² = −2E within `identity_tol`·E. Slack is the identity error.
/// Mass is only meaningful on periodic grids.
pub fn gradient_flow_identities(traj: &FlowTrajectory, mass_tol: f64, identity_tol: f64) -> crate::report::Report {
    let d = &traj.diagnostics;
    let m0 = d.first().map_or(1.0, |r| r.mass.abs().max(1.0));
    let (mut drift, mut rise, mut ident) = (0.0_f64, f64::NEG_INFINITY, 0.0_f64);
    for w in d.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let dt = b.t - a.t;
        drift = drift.max((b.mass - a.mass).abs() / m0);
        rise = rise.max(b.energy - a.energy);
        let lhs = (0.5 * b.l2 * b.l2 - 0.5 * a.l2 * a.l2) / dt + 2.0 * b.energy;
        if b.energy > 0.0 {
            ident = ident.max(lhs.abs() / b.energy);
        } else if lhs != 0.0 {
            ident = f64::INFINITY;
        }
    }
    let details = IdentityDetails {
        max_mass_drift: drift,
        max_energy_increase: rise,
        energy_strictly_decreasing: rise < 0.0,
        max_identity_error: ident,
        steps: d.len().saturating_sub(1),
    };
    let mut rep = crate::report::Report::new(
        "gradient_flow_identities",
        serde_json::json!({"mass_tol": mass_tol, "steps": details.steps}),
        ident,
        identity_tol,
    )
    .with_details(&details);
    rep.certified &= drift <= mass_tol && details.energy_strictly_decreasing;
    rep
}
