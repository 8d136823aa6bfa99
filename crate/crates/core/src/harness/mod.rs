//! Experiment orchestration: training, evaluation, sweeps, trend fitting and persistence.

pub mod checkpoint;
pub mod eval;
pub mod stats;
pub mod train;
pub mod trend;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use eval::{
    default_sweep_ranges, evaluate, evaluate_network, run_episode, sweep_connectivity, write_eval_csv,
    write_sweep_csv, EpisodeRecord, EvalStats, SweepPoint, SweepResult,
};
pub use stats::{spearman, Summary};
pub use train::{LogRow, TrainConfig, Trainer, TRAINER_STATE_VERSION};
pub use trend::{baseline_gradient, fit_saturating_trend, optimal_range, Trend};
