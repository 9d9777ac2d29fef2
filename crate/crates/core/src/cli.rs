//! `run`, `sweep` and `validate`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::Value;

use crate::experiment::{self, ExperimentConfig, RunError, SCHEMA_VERSION};

/// Only environment knob: where outputs go when `--out` is absent.
pub const OUT_ENV: &str = "FINSLER_HEAT_OUT";

#[derive(Debug, Parser)]
#[command(name = "finsler-heat", version, about = "Finsler heat flow experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment.
    Run(Common),
    /// Run a parameter grid of experiments and aggregate one row per run.
    Sweep(Common),
    /// Check a config (experiment or sweep) without running it.
    Validate(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// overrides the config's seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// worker threads for sweep
    #[arg(long, default_value_t = default_jobs())]
    pub jobs: usize,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// A sweep document: a base experiment config plus JSON-pointer axes.
///
/// ```json
/// {"version": 1, "base": {...}, "grid": {"/experiment/deltas/0": [0.001, 0.0005]}}
/// ```
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub version: u32,
    pub base: Value,
    pub grid: serde_json::Map<String, Value>,
    pub out: Option<PathBuf>,
}

pub struct SweepPoint {
    pub values: Vec<Value>,
    pub config: Result<ExperimentConfig, RunError>,
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<SweepConfig, RunError> {
        let s: SweepConfig = serde_json::from_str(text).map_err(|e| RunError::Schema(e.to_string()))?;
        if s.version != SCHEMA_VERSION {
            return Err(RunError::Schema(format!("`version` must be {SCHEMA_VERSION}, got {}", s.version)));
        }
        if s.grid.is_empty() {
            return Err(RunError::Schema("`grid` is empty".into()));
        }
        for (k, v) in &s.grid {
            match v.as_array() {
                Some(a) if !a.is_empty() => {}
                _ => return Err(RunError::Schema(format!("`grid` axis `{k}` must be a non-empty array"))),
            }
            if !k.starts_with('/') {
                return Err(RunError::Schema(format!("`grid` axis `{k}` is not a JSON pointer")));
            }
        }
        Ok(s)
    }

    pub fn axes(&self) -> Vec<&String> {
        self.grid.keys().collect()
    }

    /// Cartesian product, last axis fastest.
    pub fn points(&self, seed: Option<u64>) -> Vec<SweepPoint> {
        let axes: Vec<&Vec<Value>> = self.grid.values().filter_map(|v| v.as_array()).collect();
        let total: usize = axes.iter().map(|a| a.len()).product();
        let keys = self.axes();
        (0..total)
            .map(|mut i| {
                let mut idx = vec![0; axes.len()];
                for k in (0..axes.len()).rev() {
                    idx[k] = i % axes[k].len();
                    i /= axes[k].len();
                }
                let values: Vec<Value> = idx.iter().enumerate().map(|(k, &j)| axes[k][j].clone()).collect();
                let mut doc = self.base.clone();
                let mut config = Ok(());
                for (key, v) in keys.iter().zip(&values) {
                    if !set_pointer(&mut doc, key, v.clone()) {
                        config = Err(RunError::Schema(format!("`grid` axis `{key}` does not exist in `base`")));
                        break;
                    }
                }
                let config = config.and_then(|_| {
                    let mut c: ExperimentConfig =
                        serde_json::from_value(doc).map_err(|e| RunError::Schema(format!("base: {e}")))?;
                    if let Some(s) = seed {
                        c.seed = s;
                    }
                    c.validate()?;
                    Ok(c)
                });
                SweepPoint { values, config }
            })
            .collect()
    }
}

/// Replaces the value at `ptr`, or adds it when only the leaf key is
/// missing from an object.
fn set_pointer(doc: &mut Value, ptr: &str, v: Value) -> bool {
    if let Some(slot) = doc.pointer_mut(ptr) {
        *slot = v;
        return true;
    }
    let Some((parent, leaf)) = ptr.rsplit_once('/') else {
        return false;
    };
    match doc.pointer_mut(parent).and_then(|p| p.as_object_mut()) {
        Some(obj) => {
            obj.insert(leaf.replace("~1", "/").replace("~0", "~"), v);
            true
        }
        None => false,
    }
}

/// Parses argv and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Run(c) => report(cmd_run(&c)),
        Command::Sweep(c) => report(cmd_sweep(&c)),
        Command::Validate(c) => report(cmd_validate(&c)),
    }
}

fn report(r: Result<i32, RunError>) -> i32 {
    match r {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn out_dir(flag: &Option<PathBuf>, cfg: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .or_else(|| cfg.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn read(path: &Path) -> Result<String, RunError> {
    fs::read_to_string(path).map_err(|e| RunError::Schema(format!("cannot read {}: {e}", path.display())))
}

pub fn cmd_run(c: &Common) -> Result<i32, RunError> {
    let mut cfg = ExperimentConfig::from_json(&read(&c.config)?)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let dir = out_dir(&c.out, &cfg.out);
    let (summary, code) = experiment::run(&cfg, &dir)?;
    for r in &summary.reports {
        println!(
            "{} {} slack={:.3e} tolerance={:.3e}",
            if r.certified { "PASS" } else { "FAIL" },
            r.check,
            r.slack,
            r.tolerance
        );
    }
    println!("wrote {}", dir.join("summary.json").display());
    Ok(code)
}

pub fn cmd_validate(c: &Common) -> Result<i32, RunError> {
    let text = read(&c.config)?;
    let v: Value = serde_json::from_str(&text).map_err(|e| RunError::Schema(e.to_string()))?;
    if v.get("base").is_some() {
        let s = SweepConfig::from_json(&text)?;
        let pts = s.points(c.seed);
        for (i, p) in pts.iter().enumerate() {
            if let Err(e) = &p.config {
                return Err(RunError::Schema(format!("run {i}: {e}")));
            }
        }
        println!("ok: sweep of {} runs", pts.len());
    } else {
        let cfg = ExperimentConfig::from_json(&text)?;
        println!("ok: {}", cfg.experiment.name());
    }
    Ok(0)
}

/// One aggregate row.
#[derive(Debug, Clone)]
pub struct Row {
    pub values: Vec<Value>,
    pub exit_code: i32,
    pub certified: bool,
    pub check: String,
    pub slack: f64,
    pub tolerance: f64,
    pub worst_slack: f64,
    pub message: String,
}

fn run_point(p: &SweepPoint, dir: &Path) -> Row {
    let mut row = Row {
        values: p.values.clone(),
        exit_code: 0,
        certified: false,
        check: String::new(),
        slack: f64::NAN,
        tolerance: f64::NAN,
        worst_slack: f64::NAN,
        message: String::new(),
    };
    let res = p.config.as_ref().map_err(|e| RunError::Schema(e.to_string())).and_then(|cfg| experiment::run(cfg, dir));
    match res {
        Ok((s, code)) => {
            row.exit_code = code;
            row.certified = s.certified;
            if let Some(r) = s.reports.first() {
                row.check = r.check.clone();
                row.slack = r.slack;
                row.tolerance = r.tolerance;
            }
            row.worst_slack = s.reports.iter().map(|r| r.slack).fold(f64::NEG_INFINITY, f64::max);
        }
        Err(e) => {
            row.exit_code = e.exit_code();
            row.message = e.to_string();
        }
    }
    row
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn aggregate_csv(axes: &[&String], rows: &[Row]) -> String {
    let mut out = String::from("run");
    for a in axes {
        out.push(',');
        out.push_str(&csv_field(a));
    }
    out.push_str(",exit_code,certified,check,slack,tolerance,worst_slack,message\n");
    for (i, r) in rows.iter().enumerate() {
        out.push_str(&format!("{i:04}"));
        for v in &r.values {
            out.push(',');
            out.push_str(&csv_field(&v.to_string()));
        }
        out.push_str(&format!(
            ",{},{},{},{:e},{:e},{:e},{}\n",
            r.exit_code,
            r.certified,
            csv_field(&r.check),
            r.slack,
            r.tolerance,
            r.worst_slack,
            csv_field(&r.message)
        ));
    }
    out
}

/// Runs every point on `jobs` workers; rows come back in grid order.
pub fn sweep(s: &SweepConfig, dir: &Path, seed: Option<u64>, jobs: usize) -> Result<Vec<Row>, RunError> {
    let pts = s.points(seed);
    if pts.is_empty() {
        return Err(RunError::Schema("`grid` has no points".into()));
    }
    fs::create_dir_all(dir)?;
    let next = AtomicUsize::new(0);
    let rows: Mutex<Vec<Option<Row>>> = Mutex::new(vec![None; pts.len()]);
    std::thread::scope(|sc| {
        for _ in 0..jobs.clamp(1, pts.len()) {
            sc.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= pts.len() {
                    break;
                }
                let row = run_point(&pts[i], &dir.join(format!("run_{i:04}")));
                rows.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(row);
            });
        }
    });
    let rows: Vec<Row> = rows
        .into_inner()
        .unwrap_or_else(|e| e.into_inner())
        .into_iter()
        .map(|r| r.expect("every point ran"))
        .collect();
    experiment::write_atomic(&dir.join("sweep.csv"), aggregate_csv(&s.axes(), &rows).as_bytes())?;
    Ok(rows)
}

pub fn cmd_sweep(c: &Common) -> Result<i32, RunError> {
    let s = SweepConfig::from_json(&read(&c.config)?)?;
    let dir = out_dir(&c.out, &s.out);
    let rows = sweep(&s, &dir, c.seed, c.jobs)?;
    let failed = rows.iter().filter(|r| r.exit_code != 0).count();
    println!("{} runs, {} failed; wrote {}", rows.len(), failed, dir.join("sweep.csv").display());
    Ok(if failed > 0 { 1 } else { 0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn base() -> Value {
        json!({
            "version": 1,
            "norm": {"variant": "lp", "dim": 2, "p": 1.5},
            "experiment": {"kind": "norm-info", "sample_budget": 64, "duality_samples": 10}
        })
    }

    #[test]
    fn product_order() {
        let s = SweepConfig::from_json(
            &json!({"version": 1, "base": base(), "grid": {"/norm/p": [1.5, 3.0], "/seed": [1, 2, 3]}}).to_string(),
        )
        .unwrap();
        let pts = s.points(None);
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[1].values, vec![json!(1.5), json!(2)]);
        assert_eq!(pts[3].values, vec![json!(3.0), json!(1)]);
        assert_eq!(pts[3].config.as_ref().unwrap().seed, 1);
    }

    #[test]
    fn empty_axis_is_schema_error() {
        let e = SweepConfig::from_json(&json!({"version": 1, "base": base(), "grid": {"/norm/p": []}}).to_string())
            .unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e = SweepConfig::from_json(&json!({"version": 1, "base": base(), "grid": {}}).to_string()).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn bad_pointer_fails_its_row_only() {
        let s = SweepConfig::from_json(&json!({"version": 1, "base": base(), "grid": {"/nope/x": [1]}}).to_string())
            .unwrap();
        let pts = s.points(None);
        assert!(pts[0].config.is_err());
    }

    #[test]
    fn csv_quotes() {
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("x"), "x");
    }
}
