//! Two-phase training, evaluation, baselines and run artifacts.

mod checkpoint;
mod config;
mod eval;
mod output;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use config::RunConfig;
pub use eval::{
    baseline_majority, baseline_retrieval, evaluate, predict, report_from_predictions, EvalMode,
};
pub use output::{
    adapter_checkpoint_path, metrics_path, write_report, write_two_phase, INDEX_FILE, MODEL_FILE,
};
pub use train::{
    build_index, index_from_queries, queries, train_phase1, train_two_phase, AdapterRun, Phase1Stats,
    TwoPhaseOutcome, EVAL_BATCH,
};
