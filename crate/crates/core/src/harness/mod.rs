//! Experiment driver: configuration, closed-loop episodes, Monte-Carlo
//! aggregation, CSV tables and SVG plots.

pub mod config;
pub mod episode;
pub mod io;
pub mod montecarlo;
pub mod plot;
pub mod seeds;

pub use config::{ExperimentConfig, Steering};
pub use episode::{draw_theta, Experiment, PlanRecord, RunRecord, StepRecord};
pub use montecarlo::{run_montecarlo, sign_test, summarize, MonteCarloOutcome, SignTest, SummaryRow};
