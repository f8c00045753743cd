//! Training, evaluation protocol and experiment drivers.

mod config;
mod eval;
mod experiments;
mod metrics;
mod trainer;

pub use config::{Configuration, TrainConfig};
pub use eval::{
    candidates, evaluate, sample_negatives, EvalOptions, OracleScorer, PopularityScorer,
    RandomScorer, ScoreRequest, Scorer, DEFAULT_NEGATIVES,
};
pub use experiments::{
    curve_series, dynamic_experiment, run_configuration_suite, sweep, test_options, CurvePoint,
    SuiteRun, SweepOutcome, SweepRun,
};
pub use metrics::{
    comparison_table, metrics_at_k, rank_of_truth, table_columns, EvalMode, MetricKind, Metrics,
    MetricsReport, K_VALUES,
};
pub use trainer::{
    batch_loss, fingerprint, train, Adam, BatchLoss, EpochRecord, Example, TrainOutcome, GRAD_CHUNK,
};
