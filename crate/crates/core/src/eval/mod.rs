// SPDX-License-Identifier: MIT OR Apache-2.0

//! Desk-scale evaluation: perplexity, last-token cloze and multiple-choice
//! micro-tasks, normalization between random guessing and the full model,
//! and variant sweeps.

mod score;
mod sweep;
mod task;

pub use score::{aggregate_normalized_median, normalize_score, random_baseline, NormalizedScore};
pub use sweep::{
    best_iterations_csv, normalized_median, run_sweep, BestIterations, SweepOptions, SweepResult, SweepRow,
    DEFAULT_RANDOM_SEEDS,
};
pub use task::{
    cloze_task, multiple_choice_task, perplexity_task, run_task, Task, TaskItem, TaskKind,
    TaskResult,
};
