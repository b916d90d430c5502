//! Error metrics, the experiment grid with its sub-grids, and runtime
//! measurements.

mod bench;
mod grid;
mod metrics;

pub use bench::{
    runtime_benchmark, BenchConfig, BenchReport, SolveTimeRow, TrainingTimeRow, RESIDUAL_NAIVE, RESIDUAL_OPTIMIZED,
    SNAPSHOT,
};
pub use grid::{
    Appendix, EvalMode, EvalReport, Experiment, ExperimentContext, GridConfig, GridReports, ModelKind, NetVariant,
    Obtained, ReportRow,
};
pub use metrics::{geometric_mean_relative_error, metric_e_r, metric_e_u, RELATIVE_ERROR_FLOOR};

