//! Configuration, metrics, persistence and the experiment protocols.

mod checkpoint;
mod config;
mod experiment;
mod metrics;
mod verify;

pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint, RunState,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{cav_count, parse_config, RunConfig};
pub use experiment::{
    episode_seed, eval_seed, evaluate_run, final_fraction_mean, mixed_csv,
    mixed_traffic_experiment, run_experiment, summarize, summary_csv, EvalReport,
    ExperimentResult, MixedRow, MixedTable, SeedSeries, Summary, WindowSummary,
};
pub use metrics::{
    format_sig6, metrics_csv, parse_metrics, read_metrics, window_mean, write_metrics,
    MetricsRecord, WindowMean, METRICS_HEADER,
};
pub use verify::{run_verification, CheckResult};
