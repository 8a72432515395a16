//! Run configuration, training, evaluation, checkpoints and ablations.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod gradcheck;
pub mod prep;
pub mod train;

pub use ablation::{ablation_csv, ablation_variants, run_ablation_suite, write_ablation, AblationRow, CSV_HEADER};
pub use checkpoint::{Checkpoint, RngState, CHECKPOINT_FORMAT};
pub use config::{EvalConfig, ModelConfig, RunConfig, TrainConfig};
pub use eval::{evaluate, evaluate_with, EvalReport, EvalSettings, FamilyReport};
pub use gradcheck::{check_terms, check_total_loss, grad_check_run, GradCheckSettings};
pub use prep::{align_anchors, held_out_with, prepare, split_by_episode, to_examples, Prepared, Split};
pub use train::{eval_settings, prepare_run, read_metrics, train, train_prepared, train_with, MetricsLine, Objective, RunPaths, TrainOutcome};
