use super::stats::{CategoricalCounts, GaussianStats};
use super::{smoothed, Classifier, FeatureKind, FeatureLayout, LearnerError};
use crate::schema::{Cell, DatasetSchema, Instance};

/// Lower bound on the Gaussian variance used in likelihoods.
pub const VARIANCE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum AttributeStats {
    /// One Gaussian per class.
    Numeric(Vec<GaussianStats>),
    Categorical(CategoricalCounts),
}

/// Streaming Naive Bayes over mixed numeric and categorical attributes.
///
/// Class priors and categorical likelihoods use add-one smoothing. A numeric
/// attribute contributes a Gaussian factor only once every class has at
/// least two observations of it, so that all classes are compared on the
/// same set of factors. Missing cells contribute nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct NaiveBayes {
    pub(crate) layout: FeatureLayout,
    pub(crate) class_counts: Vec<u64>,
    pub(crate) attributes: Vec<AttributeStats>,
}

impl NaiveBayes {
    pub fn new(schema: &DatasetSchema) -> Self {
        Self::with_layout(FeatureLayout::from_schema(schema))
    }

    pub(crate) fn with_layout(layout: FeatureLayout) -> Self {
        let k = layout.num_classes;
        let attributes = layout
            .features
            .iter()
            .map(|f| match f {
                FeatureKind::Numeric => AttributeStats::Numeric(vec![GaussianStats::default(); k]),
                FeatureKind::Categorical(d) => AttributeStats::Categorical(CategoricalCounts::new(k, *d)),
            })
            .collect();
        Self {
            class_counts: vec![0; k],
            layout,
            attributes,
        }
    }

    pub fn class_counts(&self) -> &[u64] {
        &self.class_counts
    }

    pub fn attribute_stats(&self, feature: usize) -> &AttributeStats {
        &self.attributes[feature]
    }

    /// Per-class log posterior up to an additive constant.
    pub fn log_scores(&self, instance: &Instance) -> Result<Vec<f64>, LearnerError> {
        self.layout.check(instance)?;
        let k = self.layout.num_classes;
        let total: u64 = self.class_counts.iter().sum();
        let mut scores: Vec<f64> = self
            .class_counts
            .iter()
            .map(|&c| ((c + 1) as f64 / (total + k as u64) as f64).ln())
            .collect();
        for (cell, stats) in instance.values.iter().zip(&self.attributes) {
            match (cell, stats) {
                (Cell::Numeric(x), AttributeStats::Numeric(per_class)) => {
                    if per_class.iter().all(|g| g.count >= 2) {
                        for (s, g) in scores.iter_mut().zip(per_class) {
                            *s += g.log_density(*x, VARIANCE_FLOOR);
                        }
                    }
                }
                (Cell::Categorical(v), AttributeStats::Categorical(counts)) => {
                    let d = counts.num_categories() as u64;
                    for (c, s) in scores.iter_mut().enumerate() {
                        let num = (counts.count(c, *v as usize) + 1) as f64;
                        let den = (counts.class_total(c) + d) as f64;
                        *s += (num / den).ln();
                    }
                }
                _ => {}
            }
        }
        Ok(scores)
    }
}

impl Classifier for NaiveBayes {
    fn train_one(&mut self, instance: &Instance) -> Result<(), LearnerError> {
        let label = self.layout.label_of(instance)?;
        self.class_counts[label] += 1;
        for (cell, stats) in instance.values.iter().zip(self.attributes.iter_mut()) {
            match (cell, stats) {
                (Cell::Numeric(x), AttributeStats::Numeric(per_class)) => per_class[label].update(*x),
                (Cell::Categorical(v), AttributeStats::Categorical(counts)) => counts.increment(label, *v as usize),
                _ => {}
            }
        }
        Ok(())
    }

    fn predict(&self, instance: &Instance) -> Result<Vec<f64>, LearnerError> {
        if self.class_counts.iter().all(|&c| c == 0) {
            self.layout.check(instance)?;
            return Ok(self.layout.uniform());
        }
        let scores = self.log_scores(instance)?;
        Ok(softmax(&scores))
    }

    fn reset(&mut self) {
        *self = Self::with_layout(self.layout.clone());
    }

    fn num_classes(&self) -> usize {
        self.layout.num_classes
    }
}

fn softmax(log_scores: &[f64]) -> Vec<f64> {
    let max = log_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return smoothed(&vec![0; log_scores.len()]);
    }
    let exp: Vec<f64> = log_scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::parse_schema;

    fn cat_schema() -> DatasetSchema {
        parse_schema("c categorical {a,b}\ny class {yes,no}").unwrap()
    }

    fn num_schema() -> DatasetSchema {
        parse_schema("x numeric\ny class {yes,no}").unwrap()
    }

    #[test]
    fn numeric_welford_updates() {
        let mut nb = NaiveBayes::new(&num_schema());
        nb.train_one(&Instance::new(vec![Cell::Numeric(2.0)], Some(0))).unwrap();
        let AttributeStats::Numeric(g) = nb.attribute_stats(0) else {
            panic!()
        };
        assert_eq!(
            g[0],
            GaussianStats {
                count: 1,
                mean: 2.0,
                m2: 0.0
            }
        );
        nb.train_one(&Instance::new(vec![Cell::Numeric(4.0)], Some(0))).unwrap();
        let AttributeStats::Numeric(g) = nb.attribute_stats(0) else {
            panic!()
        };
        assert_eq!(
            g[0],
            GaussianStats {
                count: 2,
                mean: 3.0,
                m2: 2.0
            }
        );
    }

    #[test]
    fn missing_cell_skipped() {
        let mut nb = NaiveBayes::new(&num_schema());
        nb.train_one(&Instance::new(vec![Cell::Missing], Some(1))).unwrap();
        assert_eq!(nb.class_counts(), &[0, 1]);
        let AttributeStats::Numeric(g) = nb.attribute_stats(0) else {
            panic!()
        };
        assert_eq!(g[1].count, 0);
    }

    #[test]
    fn untrained_is_uniform() {
        let nb = NaiveBayes::new(&cat_schema());
        let p = nb.predict(&Instance::new(vec![Cell::Categorical(0)], None)).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn smoothed_categorical_posterior() {
        let mut nb = NaiveBayes::new(&cat_schema());
        for (c, y) in [(0, 0), (0, 0), (1, 1), (1, 1)] {
            nb.train_one(&Instance::new(vec![Cell::Categorical(c)], Some(y)))
                .unwrap();
        }
        let p = nb.predict(&Instance::new(vec![Cell::Categorical(0)], None)).unwrap();
        assert!((p[0] - 0.75).abs() < 1e-12, "{p:?}");
        assert!((p[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let mut nb = NaiveBayes::new(&cat_schema());
        assert_eq!(
            nb.train_one(&Instance::new(vec![Cell::Categorical(0)], None)),
            Err(LearnerError::UnlabeledInstance)
        );
        assert!(matches!(
            nb.predict(&Instance::new(vec![Cell::Numeric(1.0)], None)),
            Err(LearnerError::SchemaMismatch(_))
        ));
        assert!(matches!(
            nb.train_one(&Instance::new(vec![Cell::Categorical(5)], Some(0))),
            Err(LearnerError::SchemaMismatch(_))
        ));
    }

    #[test]
    fn constant_attribute_uses_variance_floor() {
        let mut nb = NaiveBayes::new(&num_schema());
        for _ in 0..3 {
            nb.train_one(&Instance::new(vec![Cell::Numeric(1.0)], Some(0))).unwrap();
            nb.train_one(&Instance::new(vec![Cell::Numeric(5.0)], Some(1))).unwrap();
        }
        let p = nb.predict(&Instance::new(vec![Cell::Numeric(1.0)], None)).unwrap();
        assert!(p[0] > 0.999_999);
        assert!(p.iter().all(|v| v.is_finite()));
    }
}
