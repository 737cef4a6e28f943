//! Run configuration, single runs, sweeps and post-hoc analysis.

mod analyze;
mod config;
mod run;

pub use analyze::{analyze_log, analyze_run, RunAnalysis};
pub use config::{apply_overrides, RunConfig, DEFAULT_RHO};
pub use run::{
    export_compressed, run_experiment, starting_point, sweep, sweep_csv, RunArtifacts, RunSummary,
    SweepCell, SweepSpec, COMPRESSED_DIR, CONFIG_FILE, DECAY_FILE, FINAL_CHECKPOINT, METRICS_FILE,
    PRETRAINED_CHECKPOINT, RESIDUALS_FILE, SUMMARY_FILE, SWEEP_SUMMARY_CSV, SWEEP_SUMMARY_JSON,
};
