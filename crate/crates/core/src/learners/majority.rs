use super::{Classifier, FeatureLayout, LearnerError};
use crate::schema::{DatasetSchema, Instance};

/// Predicts the normalized label counts seen so far, ignoring features.
#[derive(Debug, Clone, PartialEq)]
pub struct MajorityClass {
    pub(crate) layout: FeatureLayout,
    pub(crate) counts: Vec<u64>,
}

impl MajorityClass {
    pub fn new(schema: &DatasetSchema) -> Self {
        Self::with_layout(FeatureLayout::from_schema(schema))
    }

    pub(crate) fn with_layout(layout: FeatureLayout) -> Self {
        let counts = vec![0; layout.num_classes];
        Self { layout, counts }
    }

    pub fn class_counts(&self) -> &[u64] {
        &self.counts
    }
}

impl Classifier for MajorityClass {
    fn train_one(&mut self, instance: &Instance) -> Result<(), LearnerError> {
        let label = self.layout.label_of(instance)?;
        self.counts[label] += 1;
        Ok(())
    }

    fn predict(&self, instance: &Instance) -> Result<Vec<f64>, LearnerError> {
        self.layout.check(instance)?;
        let total: u64 = self.counts.iter().sum();
        if total == 0 {
            return Ok(self.layout.uniform());
        }
        Ok(self.counts.iter().map(|&c| c as f64 / total as f64).collect())
    }

    fn reset(&mut self) {
        self.counts.iter_mut().for_each(|c| *c = 0);
    }

    fn num_classes(&self) -> usize {
        self.layout.num_classes
    }
}
