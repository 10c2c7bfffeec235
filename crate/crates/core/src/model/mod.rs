//! The full forecaster: embedding, stacked blocks and the dimensional
//! adapter, with data preparation, training, metrics, the historical average
//! baseline and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod metrics;
pub mod network;
pub mod selfcheck;
pub mod train;

pub use config::{ModelConfig, CONFIG_KEYS};
pub use data::{
    calendar_from, make_samples, prepare, split_steps, zscore_fit_apply, NormStats, PreparedData, Sample,
    Signal, SplitPolicy, Splits,
};
pub use metrics::{ha_baseline, MetricsReport};
pub use network::{AdapterParams, ForecastModel};
pub use train::{evaluate, evaluate_horizons, train, EpochRecord, TrainReport, TRACE_HEADER};
pub use selfcheck::toy_gradient_checks;
