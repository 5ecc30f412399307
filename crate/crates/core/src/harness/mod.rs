//! Experiment orchestration and result persistence.

pub mod config;
pub mod ks;
pub mod loss;
pub mod persist;
pub mod risk;

pub use config::{generate_seed, Experiment, ExperimentConfig};
pub use ks::{ks_normal, normal_cdf};
pub use loss::{orlicz_norm, LossFunction, OrliczNorm};
pub use persist::{read_json, write_csv, write_many, write_one, CsvRow, Format};
pub use risk::{
    bias_eval, fit_slopes, normality_experiment, rate_sweep, risk_eval, BiasReport,
    NormalityResult, OrliczEntry, RiskReport, SlopeFit, SlopeMetric, SweepResult,
};
