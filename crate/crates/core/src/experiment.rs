//! Config-driven experiments: one JSON document in, `summary.json`,
//! `series.csv` and field dumps out.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::comparison::{self, ComparisonError, ModelParams, Orientation};
use crate::field::{self, Domain, FieldError, FinslerField, FinslerSpec, Grid, GridSpec, WeightField, WeightSpec};
use crate::flow::{self, FlowError, Scheme, SolverConfig, SpectralMode};
use crate::norms::{self, NormError, NormSpec};
use crate::report::Report;
use crate::wasserstein::{self, Density1D, JkoConfig, Norm1D, WassersteinError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config: {0}")]
    Schema(String),
    #[error("non-convergence: {0}")]
    NonConvergence(String),
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Schema(_) | RunError::Io(_) => 2,
            RunError::NonConvergence(_) => 3,
        }
    }
}

impl From<FlowError> for RunError {
    fn from(e: FlowError) -> Self {
        match e {
            FlowError::NonConvergence { .. } => RunError::NonConvergence(e.to_string()),
            FlowError::Io(io) => RunError::Io(io),
            other => RunError::Schema(other.to_string()),
        }
    }
}

impl From<ComparisonError> for RunError {
    fn from(e: ComparisonError) -> Self {
        match e {
            ComparisonError::Flow(f) => f.into(),
            other => RunError::Schema(other.to_string()),
        }
    }
}

impl From<WassersteinError> for RunError {
    fn from(e: WassersteinError) -> Self {
        match e {
            WassersteinError::Flow(f) => f.into(),
            WassersteinError::Comparison(c) => c.into(),
            WassersteinError::NoConvergence(_) => RunError::NonConvergence(e.to_string()),
            other => RunError::Schema(other.to_string()),
        }
    }
}

impl From<FieldError> for RunError {
    fn from(e: FieldError) -> Self {
        match e {
            FieldError::Io(io) => RunError::Io(io),
            other => RunError::Schema(other.to_string()),
        }
    }
}

impl From<NormError> for RunError {
    fn from(e: NormError) -> Self {
        RunError::Schema(e.to_string())
    }
}

/// Optional overrides of the grid-derived [`SolverConfig`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOverrides {
    pub delta: Option<f64>,
    pub scheme: Option<Scheme>,
    pub inner_tol: Option<f64>,
    pub inner_max_iter: Option<usize>,
    pub regularization_eps: Option<f64>,
    pub record_every: Option<usize>,
}

impl SolverOverrides {
    pub fn apply(&self, dom: &Domain) -> Result<SolverConfig, RunError> {
        let mut c = SolverConfig::default_for(dom);
        if let Some(v) = self.delta {
            c.delta = v;
        }
        if let Some(v) = self.scheme {
            c.scheme = v;
        }
        if let Some(v) = self.inner_tol {
            c.inner_tol = v;
        }
        if let Some(v) = self.inner_max_iter {
            c.inner_max_iter = v;
        }
        if let Some(v) = self.regularization_eps {
            c.regularization_eps = v;
        }
        if let Some(v) = self.record_every {
            c.record_every = v;
        }
        c.validate().map_err(|e| RunError::Schema(format!("solver: {e}")))?;
        Ok(c)
    }
}

fn one() -> f64 {
    1.0
}

/// Initial data on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    Constant {
        value: f64,
    },
    /// background + amplitude·exp(−|x − center|²/(2 width²))
    Gaussian {
        center: Vec<f64>,
        width: f64,
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default)]
        background: f64,
    },
    /// amplitude·exp(1 − 1/(1 − |x − center|²/radius²)) inside the ball
    Bump {
        center: Vec<f64>,
        radius: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// amplitude·∏ sin(2π·modes·xₖ/Lₖ + phase)
    Sine {
        amplitude: f64,
        #[serde(default = "one")]
        modes: f64,
        #[serde(default)]
        phase: f64,
    },
    /// smoothed uniform noise, seeded by the run seed
    Random {
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default)]
        smoothing: usize,
    },
    Table {
        values: Vec<f64>,
    },
    Sum {
        terms: Vec<InitialData>,
    },
}

impl InitialData {
    pub fn sample(&self, grid: &Grid, seed: u64) -> Result<Vec<f64>, RunError> {
        let n = grid.dim();
        let origin = grid.spec().origin.clone().unwrap_or_else(|| vec![0.0; n]);
        let check_center = |c: &[f64]| {
            if c.len() != n {
                Err(RunError::Schema(format!("center has {} coordinates, grid has {n}", c.len())))
            } else {
                Ok(())
            }
        };
        let out = match self {
            InitialData::Constant { value } => vec![*value; grid.len()],
            InitialData::Gaussian {
                center,
                width,
                amplitude,
                background,
            } => {
                check_center(center)?;
                positive("width", *width)?;
                grid.scalar_field(|x| {
                    let r2: f64 = x.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum();
                    background + amplitude * (-r2 / (2.0 * width * width)).exp()
                })
                .values
            }
            InitialData::Bump {
                center,
                radius,
                amplitude,
            } => {
                check_center(center)?;
                positive("radius", *radius)?;
                grid.scalar_field(|x| {
                    let q: f64 = x.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / (radius * radius);
                    if q < 1.0 {
                        amplitude * (1.0 - 1.0 / (1.0 - q)).exp()
                    } else {
                        0.0
                    }
                })
                .values
            }
            InitialData::Sine { amplitude, modes, phase } => {
                let tau = 2.0 * std::f64::consts::PI;
                grid.scalar_field(|x| {
                    amplitude
                        * (0..n)
                            .map(|k| (tau * modes * (x[k] - origin[k]) / grid.lengths()[k] + phase).sin())
                            .product::<f64>()
                })
                .values
            }
            InitialData::Random { amplitude, smoothing } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut v: Vec<f64> = (0..grid.len()).map(|_| amplitude * rng.random_range(-1.0..1.0)).collect();
                for _ in 0..*smoothing {
                    v = (0..v.len())
                        .map(|c| {
                            let mut s = v[c];
                            let mut k = 1.0;
                            for a in 0..n {
                                for d in [-1, 1] {
                                    if let Some(j) = grid.neighbor(c, a, d) {
                                        s += v[j];
                                        k += 1.0;
                                    }
                                }
                            }
                            s / k
                        })
                        .collect();
                }
                v
            }
            InitialData::Table { values } => {
                if values.len() != grid.len() {
                    return Err(RunError::Schema(format!("table has {} values, grid has {} cells", values.len(), grid.len())));
                }
                values.clone()
            }
            InitialData::Sum { terms } => {
                let mut acc = vec![0.0; grid.len()];
                for (i, t) in terms.iter().enumerate() {
                    for (a, b) in acc.iter_mut().zip(t.sample(grid, seed.wrapping_add(i as u64))?) {
                        *a += b;
                    }
                }
                acc
            }
        };
        if out.iter().any(|v| !v.is_finite()) {
            return Err(RunError::Schema("initial data is not finite".into()));
        }
        Ok(out)
    }
}

/// (K, N) of the comparison model; N defaults to the grid dimension.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub k: f64,
    pub n: Option<f64>,
}

impl ModelConfig {
    fn params(&self, dim: usize) -> Result<ModelParams, RunError> {
        Ok(ModelParams::new(self.k, self.n.unwrap_or(dim as f64))?)
    }
}

/// Subsolution candidate u = f(t, d(x, z)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Candidate {
    /// t^{−N/2} exp(−d²/4t)
    ExampleI { n: f64 },
    /// t^{−3/2} (d/sinh d) exp(−t − d²/4t)
    ExampleIi,
}

/// An Lᵖ exponent; JSON has no ∞, so `"inf"` is accepted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Exponent {
    Finite(f64),
    Named(InfName),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InfName {
    Inf,
}

impl Exponent {
    pub fn value(&self) -> f64 {
        match self {
            Exponent::Finite(p) => *p,
            Exponent::Named(_) => f64::INFINITY,
        }
    }
}

fn default_ladder() -> Vec<usize> {
    vec![64, 128]
}
fn default_exclude() -> usize {
    2
}
fn default_radial_points() -> usize {
    4001
}
fn default_levels() -> usize {
    JkoConfig::default().levels
}
fn default_gated() -> Vec<Exponent> {
    vec![Exponent::Finite(1.0), Exponent::Finite(2.0), Exponent::Named(InfName::Inf)]
}

/// The experiment variant and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Experiment {
    /// evolve and check the per-step gradient-flow identities
    Heat {
        u0: InitialData,
        t_end: f64,
        #[serde(default = "mass_tol")]
        mass_tol: f64,
        #[serde(default = "identity_tol")]
        identity_tol: f64,
    },
    /// Δ(F(x−y)²) = 2n on Dirichlet boxes
    RadialIdentity {
        #[serde(default = "default_ladder")]
        levels: Vec<usize>,
        #[serde(default = "three")]
        exclude: usize,
        tolerance: f64,
        #[serde(default = "half")]
        max_ratio: f64,
    },
    GaussianCheck {
        #[serde(default = "default_ladder")]
        levels: Vec<usize>,
        t: f64,
        #[serde(default = "orientation")]
        orientation: Orientation,
        #[serde(default = "one")]
        min_order: f64,
    },
    Contraction {
        u0: InitialData,
        v0: InitialData,
        t_end: f64,
        #[serde(default = "default_gated")]
        gated: Vec<Exponent>,
        #[serde(default)]
        reported: Vec<Exponent>,
        #[serde(default = "lp_tol")]
        tolerance: f64,
        #[serde(default = "l2_tol")]
        l2_tolerance: f64,
    },
    Davies {
        u0: InitialData,
        v0: InitialData,
        times: Vec<f64>,
        #[serde(default = "davies_tol")]
        tolerance: f64,
    },
    CheegerYau {
        center: Vec<f64>,
        /// h₀(r) = exp(−r²/(4·width))
        width: f64,
        times: Vec<f64>,
        #[serde(default)]
        model: ModelConfig,
        #[serde(default = "default_radial_points")]
        radial_points: usize,
        tolerance: f64,
    },
    KernelBound {
        center: Vec<f64>,
        times: Vec<f64>,
        eps: Vec<f64>,
        #[serde(default)]
        model: ModelConfig,
        tolerance: f64,
    },
    LaplacianCompare {
        center: Vec<f64>,
        #[serde(default)]
        model: ModelConfig,
        #[serde(default = "default_exclude")]
        exclude: usize,
        tolerance: f64,
    },
    Subsolution {
        candidate: Candidate,
        center: Vec<f64>,
        times: Vec<f64>,
        #[serde(default = "default_exclude")]
        exclude: usize,
        tolerance: f64,
    },
    Jko {
        mu0: InitialData,
        delta: f64,
        steps: usize,
        #[serde(default = "default_levels")]
        levels: usize,
    },
    JkoEquivalence {
        mu0: InitialData,
        t_end: f64,
        deltas: Vec<f64>,
        reference_delta: Option<f64>,
        #[serde(default = "default_levels")]
        levels: usize,
        tolerance: f64,
        max_ratio: f64,
    },
    /// entropy drop against the time integral of the Fisher information
    Dissipation {
        mu0: InitialData,
        t_end: f64,
        tolerance: f64,
    },
    Spectral {
        mode: SpectralMode,
        /// certify |value − expected| ≤ rel_tol·expected
        expected: Option<f64>,
        /// certify value ≥ (1 − rel_tol)·lower_bound
        lower_bound: Option<f64>,
        #[serde(default = "rel_tol")]
        rel_tol: f64,
    },
    NormInfo {
        #[serde(default = "budget")]
        sample_budget: usize,
        /// random (norm, ξ) pairs across every variant
        #[serde(default = "duality_samples")]
        duality_samples: usize,
        #[serde(default = "duality_tol")]
        duality_tol: f64,
    },
    Cconcavity {
        phi: InitialData,
        /// defaults to the cost of one lattice step
        tolerance: Option<f64>,
    },
}

fn mass_tol() -> f64 {
    1e-8
}
fn identity_tol() -> f64 {
    0.05
}
fn three() -> usize {
    3
}
fn half() -> f64 {
    0.5
}
fn orientation() -> Orientation {
    Orientation::YMinusX
}
fn lp_tol() -> f64 {
    0.05
}
fn l2_tol() -> f64 {
    0.02
}
fn davies_tol() -> f64 {
    1e-6
}
fn rel_tol() -> f64 {
    0.01
}
fn budget() -> usize {
    field::DEFAULT_SAMPLE_BUDGET
}
fn duality_samples() -> usize {
    1000
}
fn duality_tol() -> f64 {
    1e-10
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Heat { .. } => "heat",
            Experiment::RadialIdentity { .. } => "radial-identity",
            Experiment::GaussianCheck { .. } => "gaussian-check",
            Experiment::Contraction { .. } => "contraction",
            Experiment::Davies { .. } => "davies",
            Experiment::CheegerYau { .. } => "cheeger-yau",
            Experiment::KernelBound { .. } => "kernel-bound",
            Experiment::LaplacianCompare { .. } => "laplacian-compare",
            Experiment::Subsolution { .. } => "subsolution",
            Experiment::Jko { .. } => "jko",
            Experiment::JkoEquivalence { .. } => "jko-equivalence",
            Experiment::Dissipation { .. } => "dissipation",
            Experiment::Spectral { .. } => "spectral",
            Experiment::NormInfo { .. } => "norm-info",
            Experiment::Cconcavity { .. } => "cconcavity",
        }
    }

    fn needs_grid(&self) -> bool {
        !matches!(
            self,
            Experiment::RadialIdentity { .. } | Experiment::GaussianCheck { .. } | Experiment::NormInfo { .. }
        )
    }
}

/// The whole config document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub norm: NormSpec,
    pub grid: Option<GridSpec>,
    #[serde(default = "lebesgue")]
    pub weight: WeightSpec,
    /// replaces `norm` on the grid when given (e.g. a varying field)
    pub field: Option<FinslerSpec>,
    #[serde(default)]
    pub solver: SolverOverrides,
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: u64,
    pub out: Option<PathBuf>,
}

fn lebesgue() -> WeightSpec {
    WeightSpec::Lebesgue
}

fn positive(key: &str, v: f64) -> Result<(), RunError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(RunError::Schema(format!("`{key}` must be > 0, got {v}")))
    }
}

fn all_positive(key: &str, vs: &[f64]) -> Result<(), RunError> {
    if vs.is_empty() {
        return Err(RunError::Schema(format!("`{key}` is empty")));
    }
    vs.iter().try_for_each(|v| positive(key, *v))
}

impl ExperimentConfig {
    /// Parses and validates; every error maps to exit code 2.
    pub fn from_json(text: &str) -> Result<ExperimentConfig, RunError> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| RunError::Schema(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig, RunError> {
        let text = fs::read_to_string(path).map_err(|e| RunError::Schema(format!("cannot read {}: {e}", path.display())))?;
        ExperimentConfig::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.version != SCHEMA_VERSION {
            return Err(RunError::Schema(format!("`version` must be {SCHEMA_VERSION}, got {}", self.version)));
        }
        self.norm.validate().map_err(|e| RunError::Schema(format!("`norm`: {e}")))?;
        if self.experiment.needs_grid() && self.grid.is_none() {
            return Err(RunError::Schema(format!("`grid` is required by {}", self.experiment.name())));
        }
        if self.grid.is_some() {
            self.domain()?;
        }
        match &self.experiment {
            Experiment::Heat { t_end, .. } => positive("t_end", *t_end),
            Experiment::RadialIdentity { levels, tolerance, .. } => {
                positive("tolerance", *tolerance)?;
                nonempty("levels", levels)
            }
            Experiment::GaussianCheck { levels, t, .. } => {
                positive("t", *t)?;
                if levels.len() < 2 {
                    return Err(RunError::Schema("`levels` needs two entries".into()));
                }
                Ok(())
            }
            Experiment::Contraction { t_end, .. } => positive("t_end", *t_end),
            Experiment::Davies { times, .. } => all_positive("times", times),
            Experiment::CheegerYau { width, times, .. } => {
                positive("width", *width)?;
                all_positive("times", times)
            }
            Experiment::KernelBound { times, eps, .. } => {
                all_positive("times", times)?;
                all_positive("eps", eps)
            }
            Experiment::LaplacianCompare { .. } => Ok(()),
            Experiment::Subsolution { times, .. } => all_positive("times", times),
            Experiment::Jko { delta, steps, .. } => {
                positive("delta", *delta)?;
                if *steps == 0 {
                    return Err(RunError::Schema("`steps` must be ≥ 1".into()));
                }
                Ok(())
            }
            Experiment::JkoEquivalence { t_end, deltas, .. } => {
                positive("t_end", *t_end)?;
                all_positive("deltas", deltas)
            }
            Experiment::Dissipation { t_end, .. } => positive("t_end", *t_end),
            Experiment::Spectral { rel_tol, .. } => positive("rel_tol", *rel_tol),
            Experiment::NormInfo { sample_budget, .. } => {
                if *sample_budget == 0 {
                    return Err(RunError::Schema("`sample_budget` must be ≥ 1".into()));
                }
                Ok(())
            }
            Experiment::Cconcavity { .. } => Ok(()),
        }
    }

    pub fn domain(&self) -> Result<Domain, RunError> {
        let spec = self
            .grid
            .as_ref()
            .ok_or_else(|| RunError::Schema("`grid` is missing".into()))?;
        let grid = Grid::new(spec).map_err(|e| RunError::Schema(format!("`grid`: {e}")))?;
        let weight = WeightField::build(&grid, &self.weight).map_err(|e| RunError::Schema(format!("`weight`: {e}")))?;
        let field = match &self.field {
            Some(f) => FinslerField::build(&grid, f),
            None => FinslerField::uniform(&self.norm),
        }
        .map_err(|e| RunError::Schema(format!("`field`: {e}")))?;
        Domain::new(grid, weight, field).map_err(|e| RunError::Schema(e.to_string()))
    }
}

fn nonempty<T>(key: &str, v: &[T]) -> Result<(), RunError> {
    if v.is_empty() {
        Err(RunError::Schema(format!("`{key}` is empty")))
    } else {
        Ok(())
    }
}

/// A table with a fixed header.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Series {
    fn new(header: &[&str]) -> Series {
        Series {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", self.header.join(","))?;
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// What a run produced before anything is written.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub reports: Vec<Report>,
    /// measured constants and other scalar outputs
    pub measured: Value,
    pub series: Series,
    pub fields: Vec<(String, Vec<f64>)>,
    pub grid: Option<Grid>,
}

impl Outcome {
    pub fn certified(&self) -> bool {
        self.reports.iter().all(|r| r.certified)
    }
}

fn diagnostics_series(traj: &flow::FlowTrajectory) -> Series {
    let mut s = Series::new(&["t", "mass", "energy", "l2", "laplacian_l2", "inner_iters"]);
    s.rows = traj
        .diagnostics
        .iter()
        .map(|d| vec![d.t, d.mass, d.energy, d.l2, d.laplacian_l2, d.inner_iters as f64])
        .collect();
    s
}

fn center_cell(dom: &Domain, center: &[f64]) -> Result<usize, RunError> {
    if center.len() != dom.grid.dim() {
        return Err(RunError::Schema(format!("`center` needs {} coordinates", dom.grid.dim())));
    }
    Ok(dom.grid.nearest_cell(center))
}

fn uniform_spec(cfg: &ExperimentConfig) -> Result<&NormSpec, RunError> {
    if cfg.field.is_some() {
        return Err(RunError::Schema(format!("{} needs a uniform norm, not `field`", cfg.experiment.name())));
    }
    Ok(&cfg.norm)
}

/// Runs the configured experiment without touching the filesystem.
pub fn execute(cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
    cfg.validate()?;
    let seed = cfg.seed;
    let mut out = Outcome {
        reports: Vec::new(),
        measured: Value::Null,
        series: Series::default(),
        fields: Vec::new(),
        grid: None,
    };
    let dom = if cfg.grid.is_some() { Some(cfg.domain()?) } else { None };
    let dom_ref = || dom.as_ref().ok_or_else(|| RunError::Schema("`grid` is missing".into()));
    match &cfg.experiment {
        Experiment::Heat {
            u0,
            t_end,
            mass_tol,
            identity_tol,
        } => {
            let d = dom_ref()?;
            let solver = cfg.solver.apply(d)?;
            let u0 = u0.sample(&d.grid, seed)?;
            let traj = flow::evolve(d, &u0, *t_end, &solver)?;
            out.reports.push(flow::gradient_flow_identities(&traj, *mass_tol, *identity_tol));
            out.series = diagnostics_series(&traj);
            // fields/u_0000 is u0; u_k sits at state_times[k]
            out.measured = json!({
                "delta": solver.delta,
                "constants": d.field.constants(),
                "state_times": traj.state_times,
            });
            for (k, s) in traj.states.iter().enumerate() {
                out.fields.push((format!("u_{k:04}"), s.values.clone()));
            }
        }
        Experiment::RadialIdentity {
            levels,
            exclude,
            tolerance,
            max_ratio,
        } => {
            out.reports
                .push(comparison::quadratic_identity_check(uniform_spec(cfg)?, levels, *exclude, *tolerance, *max_ratio)?);
        }
        Experiment::GaussianCheck {
            levels,
            t,
            orientation,
            min_order,
        } => {
            let rep = comparison::gaussian_check(uniform_spec(cfg)?, levels, *t, *orientation, *min_order)?;
            let mut s = Series::new(&["cells", "h", "relative_residual"]);
            s.rows = rep.refinement.iter().map(|l| vec![l.cells as f64, l.h, l.slack]).collect();
            out.series = s;
            out.reports.push(rep);
        }
        Experiment::Contraction {
            u0,
            v0,
            t_end,
            gated,
            reported,
            tolerance,
            l2_tolerance,
        } => {
            let d = dom_ref()?;
            let solver = cfg.solver.apply(d)?;
            let u0 = u0.sample(&d.grid, seed)?;
            let v0 = v0.sample(&d.grid, seed.wrapping_add(1))?;
            let mode = if d.grid.is_periodic() {
                SpectralMode::MeanZeroChiBar
            } else {
                SpectralMode::DirichletChi
            };
            let spec = flow::ground_state(d, mode, 1e-10, 2000)?;
            let kappa = d.field.constants().kappa;
            let tu = flow::evolve(d, &u0, *t_end, &solver)?;
            let tv = flow::evolve(d, &v0, *t_end, &solver)?;
            let mut s = Series::new(&["p", "t", "ratio"]);
            for (list, gate) in [(gated, true), (reported, false)] {
                for p in list {
                    let pv = p.value();
                    let tol = if pv == 2.0 { l2_tolerance.min(*tolerance) } else { *tolerance };
                    let c = flow::contraction_report(&d.weight, &tu, &tv, pv, kappa, spec.value, tol)?;
                    for (t, r) in &c.ratios {
                        s.rows.push(vec![pv, *t, *r]);
                    }
                    let mut rep = Report::new(
                        "contraction",
                        json!({"p": p, "gated": gate, "kappa": kappa, "chi": spec.value}),
                        c.max_ratio - 1.0,
                        tol,
                    )
                    .with_details(&c);
                    if !gate {
                        // reported only
                        rep.certified = true;
                    }
                    out.reports.push(rep);
                }
            }
            out.series = s;
            out.measured = json!({"kappa": kappa, "chi": spec.value, "spectral_mode": mode, "delta": solver.delta});
        }
        Experiment::Davies {
            u0,
            v0,
            times,
            tolerance,
        } => {
            let d = dom_ref()?;
            let solver = cfg.solver.apply(d)?;
            let u0 = u0.sample(&d.grid, seed)?;
            let v0 = v0.sample(&d.grid, seed.wrapping_add(1))?;
            let r = flow::davies_check(d, &u0, &v0, times, &solver, *tolerance)?;
            let worst = r.entries.iter().map(|e| e.ratio).fold(f64::NEG_INFINITY, f64::max);
            let mut s = Series::new(&["t", "pairing", "bound", "ratio", "ratio_source_to_target"]);
            s.rows = r
                .entries
                .iter()
                .map(|e| vec![e.t, e.pairing, e.bound, e.ratio, e.ratio_source_to_target])
                .collect();
            out.series = s;
            let mut rep = Report::new("davies", json!({"times": times}), worst - 1.0, *tolerance).with_details(&r);
            rep.certified = r.certified;
            out.reports.push(rep);
            out.fields.push(("u0".into(), u0));
            out.fields.push(("v0".into(), v0));
        }
        Experiment::CheegerYau {
            center,
            width,
            times,
            model,
            radial_points,
            tolerance,
        } => {
            let d = dom_ref()?;
            let solver = cfg.solver.apply(d)?;
            let z = center_cell(d, center)?;
            let w = *width;
            let rep = comparison::cheeger_yau_check(
                d,
                z,
                &model.params(d.grid.dim())?,
                move |r| (-r * r / (4.0 * w)).exp(),
                times,
                &solver,
                *radial_points,
                *tolerance,
            )?;
            out.reports.push(rep);
        }
        Experiment::KernelBound {
            center,
            times,
            eps,
            model,
            tolerance,
        } => {
            let d = dom_ref()?;
            let solver = cfg.solver.apply(d)?;
            let z = center_cell(d, center)?;
            out.reports.push(comparison::kernel_lower_bound_check(
                d,
                z,
                &model.params(d.grid.dim())?,
                times,
                eps,
                &solver,
                *tolerance,
            )?);
        }
        Experiment::LaplacianCompare {
            center,
            model,
            exclude,
            tolerance,
        } => {
            let d = dom_ref()?;
            let z = center_cell(d, center)?;
            out.reports.push(comparison::laplacian_comparison_check(
                d,
                z,
                &model.params(d.grid.dim())?,
                *exclude,
                *tolerance,
            )?);
        }
        Experiment::Subsolution {
            candidate,
            center,
            times,
            exclude,
            tolerance,
        } => {
            let d = dom_ref()?;
            let z = center_cell(d, center)?;
            let rep = match candidate {
                Candidate::ExampleI { n } => {
                    comparison::subsolution_residual(d, &comparison::example_i(*n), z, times, *exclude, *tolerance)?
                }
                Candidate::ExampleIi => {
                    comparison::subsolution_residual(d, &comparison::example_ii(), z, times, *exclude, *tolerance)?
                }
            };
            out.reports.push(rep);
        }
        Experiment::Jko {
            mu0,
            delta,
            steps,
            levels,
        } => {
            let d = dom_ref()?;
            let norm = Norm1D::try_from(uniform_spec(cfg)?)?;
            let mu = Density1D::normalized(&d.grid, &d.weight, mu0.sample(&d.grid, seed)?)?;
            let jcfg = JkoConfig {
                levels: *levels,
                ..JkoConfig::default()
            };
            let traj = wasserstein::jko_trajectory(&mu, &norm, &d.weight, *delta, *steps, &jcfg)?;
            let mut s = Series::new(&["t", "entropy", "mass"]);
            let mut rise = f64::NEG_INFINITY;
            let mut last = f64::INFINITY;
            for (k, dens) in traj.iter().enumerate() {
                let e = wasserstein::entropy(&d.weight, dens.rho());
                if k > 0 {
                    rise = rise.max(e - last);
                }
                last = e;
                s.rows.push(vec![k as f64 * delta, e, dens.cell_masses().iter().sum()]);
            }
            out.series = s;
            out.reports.push(Report::new(
                "jko_entropy_decrease",
                json!({"delta": delta, "steps": steps, "levels": levels}),
                rise,
                1e-12,
            ));
            out.fields.push(("rho0".into(), traj[0].rho().values.clone()));
            out.fields.push(("rho_final".into(), traj[traj.len() - 1].rho().values.clone()));
        }
        Experiment::JkoEquivalence {
            mu0,
            t_end,
            deltas,
            reference_delta,
            levels,
            tolerance,
            max_ratio,
        } => {
            let d = dom_ref()?;
            let norm = Norm1D::try_from(uniform_spec(cfg)?)?;
            let mu = Density1D::normalized(&d.grid, &d.weight, mu0.sample(&d.grid, seed)?)?;
            let jcfg = JkoConfig {
                levels: *levels,
                ..JkoConfig::default()
            };
            let dmin = deltas.iter().cloned().fold(f64::INFINITY, f64::min);
            let rep = wasserstein::jko_equivalence_check(
                &mu,
                &norm,
                &d.weight,
                *t_end,
                deltas,
                reference_delta.unwrap_or(dmin / 32.0),
                &jcfg,
                *tolerance,
                *max_ratio,
            )?;
            let mut s = Series::new(&["delta", "error", "error_same_norm"]);
            if let Some(levels) = rep.details.get("levels").and_then(|v| v.as_array()) {
                for l in levels {
                    let f = |k: &str| l.get(k).and_then(|v| v.as_f64()).unwrap_or(f64::NAN);
                    s.rows.push(vec![f("delta"), f("error"), f("error_same_norm")]);
                }
            }
            out.series = s;
            out.reports.push(rep);
        }
        Experiment::Dissipation { mu0, t_end, tolerance } => {
            let d = dom_ref()?;
            let solver = cfg.solver.apply(d)?;
            let rho0 = mu0.sample(&d.grid, seed)?;
            let total = d.weight.integral(&rho0);
            positive("mass of mu0", total)?;
            let rho0: Vec<f64> = rho0.iter().map(|v| v / total).collect();
            out.reports.push(wasserstein::dissipation_check(d, &rho0, *t_end, &solver, *tolerance)?);
        }
        Experiment::Spectral {
            mode,
            expected,
            lower_bound,
            rel_tol,
        } => {
            let d = dom_ref()?;
            let r = flow::ground_state(d, *mode, 1e-10, 2000)?;
            let mut s = Series::new(&["iteration", "rayleigh_quotient"]);
            s.rows = r.history.iter().enumerate().map(|(i, v)| vec![i as f64, *v]).collect();
            out.series = s;
            if let Some(e) = expected {
                out.reports.push(
                    Report::new("spectral_value", json!({"mode": mode, "expected": e}), (r.value - e).abs() / e.abs(), *rel_tol)
                        .with_details(&r),
                );
            }
            if let Some(b) = lower_bound {
                out.reports.push(
                    Report::new("spectral_lower_bound", json!({"mode": mode, "bound": b}), (b - r.value) / b.abs(), *rel_tol)
                        .with_details(&r),
                );
            }
            out.measured = json!({"value": r.value, "mode": mode, "iterations": r.iterations});
            out.fields.push(("ground_state".into(), r.minimizer.clone()));
        }
        Experiment::NormInfo {
            sample_budget,
            duality_samples,
            duality_tol,
        } => {
            let norm = cfg.norm.build()?;
            let primal = norms::convexity_constants(&norm, *sample_budget, seed);
            let dr = norms::duality_check(*duality_samples, seed);
            out.reports.push(
                Report::new(
                    "legendre_duality",
                    json!({"samples": duality_samples, "seed": seed}),
                    dr.max_value_error.max(dr.max_inverse_error),
                    *duality_tol,
                )
                .with_details(&dr),
            );
            out.measured = json!({"constants": primal, "reversible": cfg.norm.is_reversible()});
        }
        Experiment::Cconcavity { phi, tolerance } => {
            let d = dom_ref()?;
            let phi = phi.sample(&d.grid, seed)?;
            let tol = tolerance.unwrap_or_else(|| wasserstein::grid_tolerance(d));
            out.reports.push(wasserstein::cconcavity_check(d, &phi, tol)?);
            out.fields.push(("phi".into(), phi));
        }
    }
    out.grid = dom.map(|d| d.grid);
    Ok(out)
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

/// The summary.json document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub version: u32,
    pub experiment: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub certified: bool,
    pub measured: Value,
    pub reports: Vec<Report>,
}

/// Fallback table for experiments without their own diagnostics: one row per
/// refinement level, `report` indexing into summary.json's reports.
fn refinement_series(reports: &[Report]) -> Series {
    let mut s = Series::new(&["report", "cells", "h", "slack"]);
    for (i, r) in reports.iter().enumerate() {
        for l in &r.refinement {
            s.rows.push(vec![i as f64, l.cells as f64, l.h, l.slack]);
        }
    }
    s
}

/// Writes summary.json, series.csv and fields/<name>.{bin,csv} into `dir`.
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, out: &Outcome) -> Result<Summary, RunError> {
    fs::create_dir_all(dir)?;
    let summary = Summary {
        version: SCHEMA_VERSION,
        experiment: cfg.experiment.name().to_string(),
        seed: cfg.seed,
        config: cfg.clone(),
        certified: out.certified(),
        measured: out.measured.clone(),
        reports: out.reports.clone(),
    };
    let text = serde_json::to_string_pretty(&summary).map_err(|e| RunError::Schema(e.to_string()))?;
    write_atomic(&dir.join("summary.json"), text.as_bytes())?;
    let mut csv = Vec::new();
    if out.series.header.is_empty() {
        refinement_series(&out.reports).write_csv(&mut csv)?;
    } else {
        out.series.write_csv(&mut csv)?;
    }
    write_atomic(&dir.join("series.csv"), &csv)?;
    if let Some(grid) = &out.grid {
        if !out.fields.is_empty() {
            let fdir = dir.join("fields");
            fs::create_dir_all(&fdir)?;
            for (name, values) in &out.fields {
                if values.len() != grid.len() {
                    continue;
                }
                let mut bin = Vec::new();
                field::write_binary(grid, values, &mut bin)?;
                write_atomic(&fdir.join(format!("{name}.bin")), &bin)?;
                let mut txt = Vec::new();
                field::write_csv(grid, values, &mut txt)?;
                write_atomic(&fdir.join(format!("{name}.csv")), &txt)?;
            }
        }
    }
    Ok(summary)
}

/// Execute and write; the exit code is 0 when certified, 1 otherwise.
pub fn run(cfg: &ExperimentConfig, dir: &Path) -> Result<(Summary, i32), RunError> {
    let out = execute(cfg)?;
    let summary = write_outputs(dir, cfg, &out)?;
    let code = if summary.certified { 0 } else { 1 };
    Ok((summary, code))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norm_info() -> Value {
        json!({
            "version": 1,
            "norm": {"variant": "lp", "dim": 2, "p": 1.5},
            "experiment": {"kind": "norm-info", "sample_budget": 256, "duality_samples": 60}
        })
    }

    #[test]
    fn unknown_key_is_named() {
        let mut v = norm_info();
        v["experiment"]["bogus"] = json!(1);
        let e = ExperimentConfig::from_json(&v.to_string()).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("bogus"), "{e}");
    }

    #[test]
    fn missing_grid_is_a_schema_error() {
        let v = json!({
            "version": 1,
            "norm": {"variant": "lp", "dim": 2, "p": 4.0},
            "experiment": {"kind": "heat", "u0": {"kind": "constant", "value": 1.0}, "t_end": 0.1}
        });
        let e = ExperimentConfig::from_json(&v.to_string()).unwrap_err();
        assert!(e.to_string().contains("grid"), "{e}");
    }

    #[test]
    fn negative_time_rejected() {
        let v = json!({
            "version": 1,
            "norm": {"variant": "lp", "dim": 1, "p": 2.0},
            "grid": {"cells": [16], "lengths": [1.0], "boundary": "periodic"},
            "experiment": {"kind": "heat", "u0": {"kind": "constant", "value": 1.0}, "t_end": -1.0}
        });
        let e = ExperimentConfig::from_json(&v.to_string()).unwrap_err();
        assert!(e.to_string().contains("t_end"), "{e}");
    }

    #[test]
    fn norm_info_runs() {
        let cfg = ExperimentConfig::from_json(&norm_info().to_string()).unwrap();
        let out = execute(&cfg).unwrap();
        assert!(out.certified());
        let c = &out.measured["constants"];
        let ks = c["kappa_star"].as_f64().unwrap();
        assert!((ks - 0.5).abs() < 1e-6, "{ks}");
        // l1.5 has unbounded curvature on the axes
        assert_eq!(c["kappa_degenerate"].as_bool(), Some(true));
    }

    #[test]
    fn exponent_accepts_inf() {
        let v: Vec<Exponent> = serde_json::from_str(r#"[1, 2.5, "inf"]"#).unwrap();
        assert_eq!(v[2].value(), f64::INFINITY);
        assert_eq!(v[1].value(), 2.5);
    }

    #[test]
    fn heat_writes_outputs_deterministically() {
        let v = json!({
            "version": 1,
            "norm": {"variant": "lp", "dim": 1, "p": 3.0},
            "grid": {"cells": [32], "lengths": [1.0], "boundary": "periodic"},
            "solver": {"record_every": 0},
            "experiment": {"kind": "heat", "u0": {"kind": "gaussian", "center": [0.5], "width": 0.1}, "t_end": 0.002},
            "seed": 4
        });
        let cfg = ExperimentConfig::from_json(&v.to_string()).unwrap();
        let base = std::env::temp_dir().join(format!("fh-exp-{}", std::process::id()));
        let (a, code) = run(&cfg, &base.join("a")).unwrap();
        let (_, _) = run(&cfg, &base.join("b")).unwrap();
        assert_eq!(code, 0, "{:?}", a.reports);
        let sa = fs::read(base.join("a/summary.json")).unwrap();
        let sb = fs::read(base.join("b/summary.json")).unwrap();
        assert_eq!(sa, sb);
        let series = fs::read_to_string(base.join("a/series.csv")).unwrap();
        assert!(series.starts_with("t,mass,energy,l2,laplacian_l2,inner_iters\n"));
        assert!(base.join("a/fields/u_0000.bin").exists());
        fs::remove_dir_all(&base).ok();
    }
}
