//! Benchmark driver: TOML configuration, seeded synthetic data, the ablation
//! experiments, metric files and store snapshots.

pub mod config;
pub mod dataset;
pub mod experiments;
pub mod metrics;
pub mod snapshot;

pub use config::{ContentDistribution, ExperimentConfig, Method, MONTH_SECONDS};
pub use dataset::{generate_dataset, generate_queries, QuerySpec};
pub use experiments::{
    prepare_static, run_alpha_sweep, run_ef_sweep, run_method_comparison, run_streaming_ablation,
    run_weight_ablation, AlphaPoint, ExperimentOutput, StaticFixture, StreamMonth, StreamRun,
};
pub use metrics::MetricRow;
pub use snapshot::{restore, snapshot};
