pub mod experiment;
pub mod metrics;
pub mod suites;

pub use experiment::{
    clean_fpr_audit, horizon_sweep, run_experiment, run_experiment_to_dir, run_experiment_with, CancelToken, Cell,
    CellStatus, ExperimentResult, ExperimentSpec, RunRecord, Variant, ENSEMBLE,
};
pub use metrics::{auroc, confusion_metrics, MetricsReport};
pub use suites::{suite_spec, Suite, SuiteOptions};
