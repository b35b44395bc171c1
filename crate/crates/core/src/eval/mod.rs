//! Splits, repeated trials, accuracy, statistical comparison, saliency and
//! parameter sweeps.

mod bootstrap;
mod metrics;
mod saliency;
mod split;
pub mod stats;

pub use bootstrap::{
    accuracies, bundles_hash, curve_csv, posthoc_table, prepare_trial, run_bootstrap, score, summarize,
    sweep, temporal_ablation, train_and_score, trial_report, AblationReport, CategoryAccuracy, CurveRow,
    PreparedTrial, SummaryRow, SweepParam, TrialReport,
};
pub use metrics::{
    accuracy, bundle_categories, category_key, score_bundle, StratifiedTally, Tally, THRESHOLD,
};
pub use saliency::{
    input_importance, saliency_importance, saliency_table, InputGradient, SaliencyRow,
    TOP_PER_MODALITY,
};
pub use split::{cohorts, split_loco, split_random, Split, SplitKind, LOCO_VAL_FRACTION, RANDOM_FRACTIONS};

use crate::data::DataError;
use crate::models::{ModelError, ModelKind};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("split: {0}")]
    Split(String),
    #[error("unknown cohort `{0}`")]
    UnknownCohort(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("no scored predictions")]
    NothingScored,
    #[error("statistics: {0}")]
    Stats(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("trial {trial}, {model}: {source}")]
    Trial {
        trial: usize,
        model: ModelKind,
        source: ModelError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}
