//! Driving an experiment from a JSON config, the way the CLI does, and
//! writing summary.json / series.csv / fields into a temp directory.
//!
//! Run: cargo run --release --example run_config

use finsler_heat::experiment::{run, ExperimentConfig};

fn main() {
    let text = r#"{
        "version": 1,
        "norm": {"variant": "lp", "dim": 2, "p": 4.0},
        "grid": {"cells": [32, 32], "lengths": [1.0, 1.0], "boundary": "periodic"},
        "solver": {"record_every": 10},
        "experiment": {
            "kind": "heat",
            "u0": {"kind": "sum", "terms": [
                {"kind": "constant", "value": 0.5},
                {"kind": "random", "amplitude": 0.2, "smoothing": 3}]},
            "t_end": 0.001
        },
        "seed": 7
    }"#;
    let cfg = ExperimentConfig::from_json(text).unwrap();
    let dir = std::env::temp_dir().join("finsler-heat-run-config");
    let (summary, code) = run(&cfg, &dir).unwrap();
    println!("exit code {code}; wrote {}", dir.display());
    for r in &summary.reports {
        println!("{}: slack {:.3e} (tolerance {:.1e}) certified {}", r.check, r.slack, r.tolerance, r.certified);
    }
    for e in std::fs::read_dir(dir.join("fields")).unwrap().flatten() {
        println!("  fields/{}", e.file_name().to_string_lossy());
    }

    // the schema rejects unknown keys and names them
    let bad = text.replace("\"t_end\"", "\"t_final\"");
    println!("\nbad config: {}", ExperimentConfig::from_json(&bad).unwrap_err());
}
