//! Sequential-task training runs, optimizer comparisons and their metrics.

mod compare;
mod curve;
mod metrics;
mod run;

pub use compare::{comparison_csv, compare_optimizers, row_from_outcome, ComparisonBlock, ComparisonRow, COMPARISON_COLUMNS};
pub use curve::{curve_csv, emit_csv, fmt_f64, parse_curve_csv, CurveRecord, CURVE_HEADER};
pub use metrics::{convergence_epoch, convergence_of, epoch_val_acc, validation_accuracy_pct, Convergence};
pub use run::{
    initial_params, model_for, prepare_warps, run_sequential_tasks, source_rng, stream, HOLDOUT_STREAM, META_STREAM,
    MODEL_STREAM, TASK_STREAM, Divergence, RunConfig, RunOutcome, TaskData,
    WarpSource,
};
