//! Simulation laboratory: data generation, ground-truth oracle and replicated
//! experiments.

pub mod dgp;
pub mod experiment;
pub mod oracle;

pub use dgp::{generate_dgp, DgpConfig, SimSeries};
pub use experiment::{coverage_experiment, run_experiment, ExperimentConfig, PropensitySource, SimReport};
pub use oracle::{oracle_estimand, oracle_monte_carlo};
