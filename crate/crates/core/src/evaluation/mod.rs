//! Prequential evaluation, targeting and lift analysis.

mod metrics;
mod synth;
mod targeting;

pub use metrics::{kappa, prequential_step, ConfusionMatrix, MetricsRow, Prediction, PrequentialState, DEFAULT_WINDOW};
pub use synth::{campaign_rule, synth_campaign_stream, SynthCampaign};
pub use targeting::{lift_table, rank_and_select, Decile, LiftTable, ScoredRecord, Selection, TargetingReport};

use thiserror::Error;

use crate::learners::LearnerError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvaluationError {
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("no records to rank")]
    EmptyInput,
    #[error("fraction {0} not in (0, 1]")]
    BadFraction(f64),
    #[error("score {0} not in [0, 1]")]
    BadScore(f64),
    #[error("need at least 2 buckets, got {0}")]
    BadBuckets(usize),
    #[error("no positive records; lift is undefined")]
    NoPositives,
    #[error("need at least {needed} records, got {got}")]
    TooFewRecords { needed: usize, got: usize },
    #[error("noise rate {0} not in [0, 0.5)")]
    BadNoise(f64),
    #[error("window size must be >= 1")]
    BadWindow,
    #[error("instance has no label")]
    UnlabeledInstance,
    #[error(transparent)]
    Learner(#[from] LearnerError),
}
