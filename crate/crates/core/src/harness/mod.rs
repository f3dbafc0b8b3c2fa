//! Experiment plumbing behind the `dbp` binary: configuration, training,
//! evaluation, gradient checking and result files.

pub mod commands;
pub mod config;
pub mod eval;
pub mod gradcheck;
pub mod io;
pub mod train;

pub use commands::{
    cmd_ablate, cmd_eval, cmd_gen_data, cmd_gradcheck, cmd_perturb, cmd_train, Manifest, Overrides, TrainSummary,
};
pub use config::{DataConfig, ExperimentConfig, IoConfig, OptimizerConfig, RunConfig};
pub use eval::{evaluate, inertia_free_bound, thread_count, ModelPlanner, OraclePlanner, Planner, ResultRow};
pub use gradcheck::{op_suite, run_suite, OpResult};
pub use train::{model_checkpoint, model_from_checkpoint, train, LossRow, TrainReport};
