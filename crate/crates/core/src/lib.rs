//! Building blocks for a small-model-first language model improvement loop.
//!
//! * [`scorer`] scores multiple-choice continuations through deterministic
//!   stubs or a remote HTTP backend.
//! * [`harness`] builds k-shot prompts, evaluates datasets, averages
//!   accuracies and applies the strict-improvement corpus selection rule.
//! * [`store`] and [`merge`] read and write the `TSTOR1` tensor container and
//!   merge checkpoints linearly.
//! * [`arena`] holds the pairwise judge votes: ELO (plain and
//!   permutation-averaged), win percentage, correlation matrices and the
//!   blind matchup service.

pub mod arena;
pub mod harness;
pub mod merge;
pub mod scorer;
pub mod seed;
pub mod store;

pub use arena::analytics::{
    category_correlation, elo_permuted, elo_sequence, judge_correlation, metric_correlation,
    pearson, win_pct, win_pct_all, CorrelationMatrix, EloConfig, EloReport, MetricTable,
    ModelRating, WinPct,
};
pub use arena::vote::{Outcome, Vote};
pub use harness::{
    average_accuracy, build_prompt, emit_training_config, evaluate_dataset, select_corpora,
    DatasetResult, MCDataset, MCItem, SelectionReport, ShotPolicy, TrainingConfig,
};
pub use merge::{linear_merge, MergeRecipe};
pub use scorer::{score_continuations, ContinuationScores, Scorer, ScorerConfig, ScorerKind};
pub use store::{parse_store, write_store, DType, Tensor, TensorStore};
