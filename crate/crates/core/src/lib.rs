//! Nonlinear heat flow on Finsler–Minkowski grids.

pub mod cli;
pub mod comparison;
pub mod experiment;
pub mod field;
pub mod flow;
pub mod norms;
pub mod operators;
pub mod optim;
pub mod report;
pub mod small;
pub mod wasserstein;
