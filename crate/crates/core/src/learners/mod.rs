//! Online classifiers trained one instance at a time.
//!
//! Every learner implements [`Classifier`]. Predictions are probability
//! distributions over the class domain; an untrained model predicts the
//! uniform distribution.

mod hoeffding;
mod majority;
mod naive_bayes;
mod snapshot;
mod stats;

pub use hoeffding::{HoeffdingConfig, HoeffdingNode, HoeffdingTree, SplitTest};
pub use majority::MajorityClass;
pub use naive_bayes::{AttributeStats, NaiveBayes, VARIANCE_FLOOR};
pub use snapshot::{decode_learner, decode_model, encode_learner, encode_model};
pub use stats::{entropy, hoeffding_bound, info_gain, CategoricalCounts, GaussianStats};

use thiserror::Error;

use crate::schema::{AttributeKind, Cell, DatasetSchema, Instance};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnerError {
    #[error("instance does not match the model schema: {0}")]
    SchemaMismatch(String),
    #[error("training instance has no label")]
    UnlabeledInstance,
    #[error("argument outside its domain: {0}")]
    DomainError(String),
    #[error("partition counts do not sum to the parent counts")]
    CountMismatch,
    #[error("bad model snapshot: {0}")]
    Snapshot(String),
}

pub trait Classifier {
    fn train_one(&mut self, instance: &Instance) -> Result<(), LearnerError>;
    fn predict(&self, instance: &Instance) -> Result<Vec<f64>, LearnerError>;
    fn reset(&mut self);
    fn num_classes(&self) -> usize;
}

/// Index of the largest probability; ties go to the lower class index.
pub fn argmax(distribution: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in distribution.iter().enumerate().skip(1) {
        if p > distribution[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Numeric,
    /// Categorical with the given domain size.
    Categorical(usize),
}

/// What a learner needs to know about the schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureLayout {
    pub features: Vec<FeatureKind>,
    pub num_classes: usize,
}

impl FeatureLayout {
    pub fn from_schema(schema: &DatasetSchema) -> Self {
        Self {
            features: schema
                .features()
                .map(|a| match a.kind {
                    AttributeKind::Numeric => FeatureKind::Numeric,
                    AttributeKind::Categorical => FeatureKind::Categorical(a.domain.len()),
                })
                .collect(),
            num_classes: schema.num_classes(),
        }
    }

    pub fn check(&self, instance: &Instance) -> Result<(), LearnerError> {
        if instance.values.len() != self.features.len() {
            return Err(LearnerError::SchemaMismatch(format!(
                "expected {} cells, got {}",
                self.features.len(),
                instance.values.len()
            )));
        }
        for (i, (cell, kind)) in instance.values.iter().zip(&self.features).enumerate() {
            let ok = match (cell, kind) {
                (Cell::Missing, _) => true,
                (Cell::Numeric(v), FeatureKind::Numeric) => v.is_finite(),
                (Cell::Categorical(c), FeatureKind::Categorical(d)) => (*c as usize) < *d,
                _ => false,
            };
            if !ok {
                return Err(LearnerError::SchemaMismatch(format!("cell {i} holds {cell:?}")));
            }
        }
        if let Some(label) = instance.label {
            if label as usize >= self.num_classes {
                return Err(LearnerError::SchemaMismatch(format!(
                    "label {label} outside {} classes",
                    self.num_classes
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn label_of(&self, instance: &Instance) -> Result<usize, LearnerError> {
        self.check(instance)?;
        instance.label.map(usize::from).ok_or(LearnerError::UnlabeledInstance)
    }

    pub(crate) fn uniform(&self) -> Vec<f64> {
        vec![1.0 / self.num_classes as f64; self.num_classes]
    }
}

/// Add-one smoothed, normalized class counts.
pub(crate) fn smoothed(counts: &[u64]) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    let denom = (total + counts.len() as u64) as f64;
    counts.iter().map(|&c| (c + 1) as f64 / denom).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LearnerKind {
    Majority,
    NaiveBayes,
    Hoeffding,
}

impl std::str::FromStr for LearnerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "majority" => Ok(Self::Majority),
            "nb" => Ok(Self::NaiveBayes),
            "ht" => Ok(Self::Hoeffding),
            other => Err(format!("unknown learner `{other}` (expected majority, nb or ht)")),
        }
    }
}

impl std::fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Majority => "majority",
            Self::NaiveBayes => "nb",
            Self::Hoeffding => "ht",
        })
    }
}

/// Any of the built-in learners behind one type.
#[derive(Debug, Clone, PartialEq)]
pub enum Learner {
    Majority(MajorityClass),
    NaiveBayes(NaiveBayes),
    Hoeffding(HoeffdingTree),
}

impl Learner {
    pub fn new(kind: LearnerKind, schema: &DatasetSchema, ht: HoeffdingConfig) -> Result<Self, LearnerError> {
        Ok(match kind {
            LearnerKind::Majority => Learner::Majority(MajorityClass::new(schema)),
            LearnerKind::NaiveBayes => Learner::NaiveBayes(NaiveBayes::new(schema)),
            LearnerKind::Hoeffding => Learner::Hoeffding(HoeffdingTree::new(schema, ht)?),
        })
    }

    pub fn kind(&self) -> LearnerKind {
        match self {
            Learner::Majority(_) => LearnerKind::Majority,
            Learner::NaiveBayes(_) => LearnerKind::NaiveBayes,
            Learner::Hoeffding(_) => LearnerKind::Hoeffding,
        }
    }

    fn inner(&self) -> &dyn Classifier {
        match self {
            Learner::Majority(m) => m,
            Learner::NaiveBayes(m) => m,
            Learner::Hoeffding(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Classifier {
        match self {
            Learner::Majority(m) => m,
            Learner::NaiveBayes(m) => m,
            Learner::Hoeffding(m) => m,
        }
    }
}

impl Classifier for Learner {
    fn train_one(&mut self, instance: &Instance) -> Result<(), LearnerError> {
        self.inner_mut().train_one(instance)
    }

    fn predict(&self, instance: &Instance) -> Result<Vec<f64>, LearnerError> {
        self.inner().predict(instance)
    }

    fn reset(&mut self) {
        self.inner_mut().reset()
    }

    fn num_classes(&self) -> usize {
        self.inner().num_classes()
    }
}
