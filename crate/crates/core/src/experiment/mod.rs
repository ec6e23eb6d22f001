//! Experiment protocols: multi-split runs, ablation sweeps and reports.

pub mod config;
pub mod data;
pub mod report;
pub mod runner;
pub mod sweeps;

pub use config::{ExperimentConfig, FeatureFile, Method, Subset, SweepConfig, CLEAN};
pub use data::{Dataset, FeatureProvider, FileProvider, MemoryProvider};
pub use report::{render_report, render_sweep, write_report, write_sweep, ReportFormat};
pub use runner::{
    run_experiment, run_with, run_with_partitioner, AuditEntry, Failure, Partition, RunRecord, Stage, TrainedModel,
    TOOLKIT_VERSION,
};
pub use sweeps::{
    class_count_sweep, few_shot_sweep, layer_sweep, perturbation_eval, with_known_count, SweepKind, SweepRow,
    SweepTable, CLEAN_TRAINED, IMMUNIZED,
};
