//! Processor logics and the factory that resolves logic references.
//!
//! Built-in references:
//!
//! | reference | behaviour |
//! |---|---|
//! | `source` | forwards every record |
//! | `normalize` | maps the `pdays = 999` sentinel to missing |
//! | `learner/majority`, `learner/nb` | test-then-train, emits a prediction record |
//! | `learner/ht[/<grace>/<delta>/<tie>]` | same, with a Hoeffding tree |
//! | `evaluator[/<window>[/<report_every>]]` | prequential metrics over prediction records |

use smdm_core::codec::{Reader, Writer};
use smdm_core::evaluation::{ConfusionMatrix, MetricsRow, PrequentialState, DEFAULT_WINDOW};
use smdm_core::learners::{argmax, encode_learner, Classifier, HoeffdingConfig, Learner, LearnerKind};
use smdm_core::schema::normalize_pdays;
use smdm_core::{AttributeSpec, Cell, DatasetSchema, Instance};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LogicError {
    #[error("unknown logic `{0}`")]
    Unknown(String),
    #[error("bad parameter in `{logic}`: {detail}")]
    BadParameter { logic: String, detail: String },
    #[error("input schema not accepted: {0}")]
    Schema(String),
}

/// Per-partition processing code. One instance is owned by exactly one unit.
pub trait ProcessorLogic: Send {
    fn output_schema(&self) -> DatasetSchema;
    /// Handles one record and appends any output records to `out`.
    fn process(&mut self, seq: u64, instance: &Instance, out: &mut Vec<Instance>) -> Result<(), String>;
    fn on_end(&mut self) -> Result<(), String> {
        Ok(())
    }
    fn snapshot(&self) -> Vec<u8>;
}

pub trait LogicFactory: Send + Sync {
    fn create(&self, logic: &str, input: &DatasetSchema, partition: u16)
        -> Result<Box<dyn ProcessorLogic>, LogicError>;
}

/// Resolves the built-in logic references.
#[derive(Debug, Clone, Copy, Default)]
pub struct StandardLogics;

impl LogicFactory for StandardLogics {
    fn create(
        &self,
        logic: &str,
        input: &DatasetSchema,
        _partition: u16,
    ) -> Result<Box<dyn ProcessorLogic>, LogicError> {
        let parts: Vec<&str> = logic.split('/').collect();
        let bad = |detail: String| LogicError::BadParameter {
            logic: logic.to_string(),
            detail,
        };
        match parts.as_slice() {
            ["source"] => Ok(Box::new(Forward { schema: input.clone() })),
            ["normalize"] => {
                if input.feature_index("pdays").is_none() {
                    return Err(LogicError::Schema("normalize needs a `pdays` attribute".into()));
                }
                Ok(Box::new(Normalize { schema: input.clone() }))
            }
            ["learner", kind, rest @ ..] => {
                let kind: LearnerKind = kind.parse().map_err(bad)?;
                let config = match (kind, rest) {
                    (_, []) => HoeffdingConfig::default(),
                    (LearnerKind::Hoeffding, [grace, delta, tie]) => HoeffdingConfig {
                        grace_period: grace.parse().map_err(|_| bad(format!("grace `{grace}`")))?,
                        delta: delta.parse().map_err(|_| bad(format!("delta `{delta}`")))?,
                        tie_threshold: tie.parse().map_err(|_| bad(format!("tie threshold `{tie}`")))?,
                    },
                    _ => return Err(bad("unexpected parameters".into())),
                };
                let model = Learner::new(kind, input, config).map_err(|e| bad(e.to_string()))?;
                Ok(Box::new(LearnerLogic {
                    output: prediction_schema(input),
                    model,
                }))
            }
            ["evaluator", rest @ ..] => {
                let num = |s: &str| {
                    s.parse::<usize>()
                        .ok()
                        .filter(|&v| v > 0)
                        .ok_or_else(|| bad(format!("`{s}`")))
                };
                let (window, report_every) = match rest {
                    [] => (DEFAULT_WINDOW, DEFAULT_WINDOW),
                    [w] => (num(w)?, DEFAULT_WINDOW),
                    [w, r] => (num(w)?, num(r)?),
                    _ => return Err(bad("too many parameters".into())),
                };
                check_prediction_schema(input)?;
                Ok(Box::new(Evaluator {
                    schema: input.clone(),
                    state: PrequentialState::new(input.num_classes(), window).map_err(|e| bad(e.to_string()))?,
                    report_every: report_every as u64,
                    rows: Vec::new(),
                }))
            }
            _ => Err(LogicError::Unknown(logic.to_string())),
        }
    }
}

/// Schema of learner output: `predicted`, one `p_<class>` per class, then the class.
pub fn prediction_schema(input: &DatasetSchema) -> DatasetSchema {
    let class = input.class_attribute();
    let mut attributes = vec![AttributeSpec::categorical("predicted", &class.domain)];
    attributes.extend(class.domain.iter().map(|c| AttributeSpec::numeric(format!("p_{c}"))));
    attributes.push(AttributeSpec::categorical(class.name.clone(), &class.domain));
    let class_index = attributes.len() - 1;
    DatasetSchema::new(format!("{}-predictions", input.name), attributes, class_index)
        .expect("prediction schema is valid")
}

fn check_prediction_schema(input: &DatasetSchema) -> Result<(), LogicError> {
    // A prediction schema maps onto itself, up to the name.
    let mut expected = prediction_schema(input);
    expected.name = input.name.clone();
    if &expected != input {
        return Err(LogicError::Schema("evaluator expects learner predictions".into()));
    }
    Ok(())
}

struct Forward {
    schema: DatasetSchema,
}

impl ProcessorLogic for Forward {
    fn output_schema(&self) -> DatasetSchema {
        self.schema.clone()
    }

    fn process(&mut self, _seq: u64, instance: &Instance, out: &mut Vec<Instance>) -> Result<(), String> {
        out.push(instance.clone());
        Ok(())
    }

    fn snapshot(&self) -> Vec<u8> {
        Vec::new()
    }
}

struct Normalize {
    schema: DatasetSchema,
}

impl ProcessorLogic for Normalize {
    fn output_schema(&self) -> DatasetSchema {
        self.schema.clone()
    }

    fn process(&mut self, _seq: u64, instance: &Instance, out: &mut Vec<Instance>) -> Result<(), String> {
        out.push(normalize_pdays(instance.clone(), &self.schema).map_err(|e| e.to_string())?);
        Ok(())
    }

    fn snapshot(&self) -> Vec<u8> {
        Vec::new()
    }
}

struct LearnerLogic {
    output: DatasetSchema,
    model: Learner,
}

impl ProcessorLogic for LearnerLogic {
    fn output_schema(&self) -> DatasetSchema {
        self.output.clone()
    }

    fn process(&mut self, _seq: u64, instance: &Instance, out: &mut Vec<Instance>) -> Result<(), String> {
        let dist = self.model.predict(&instance.unlabeled()).map_err(|e| e.to_string())?;
        let mut values = Vec::with_capacity(dist.len() + 1);
        values.push(Cell::Categorical(argmax(&dist) as u16));
        values.extend(dist.iter().map(|&p| Cell::Numeric(p)));
        out.push(Instance::new(values, instance.label));
        if instance.label.is_some() {
            self.model.train_one(instance).map_err(|e| e.to_string())?;
        }
        Ok(())
    }

    fn snapshot(&self) -> Vec<u8> {
        encode_learner(&self.model)
    }
}

struct Evaluator {
    schema: DatasetSchema,
    state: PrequentialState,
    report_every: u64,
    rows: Vec<MetricsRow>,
}

impl ProcessorLogic for Evaluator {
    fn output_schema(&self) -> DatasetSchema {
        self.schema.clone()
    }

    fn process(&mut self, _seq: u64, instance: &Instance, _out: &mut Vec<Instance>) -> Result<(), String> {
        let Some(actual) = instance.label else { return Ok(()) };
        let Some(Cell::Categorical(predicted)) = instance.values.first() else {
            return Err("prediction record without a predicted class".into());
        };
        self.state.record(actual as usize, *predicted as usize);
        if self.state.instances_seen().is_multiple_of(self.report_every) {
            self.rows.extend(self.state.row());
        }
        Ok(())
    }

    fn on_end(&mut self) -> Result<(), String> {
        if self.rows.last().map(|r| r.seq) != Some(self.state.instances_seen()) {
            self.rows.extend(self.state.row());
        }
        Ok(())
    }

    fn snapshot(&self) -> Vec<u8> {
        let m = self.state.confusion();
        let mut w = Writer::new();
        w.u16(m.num_classes() as u16);
        for row in m.rows() {
            for &c in row {
                w.u64(c);
            }
        }
        w.u32(self.rows.len() as u32);
        for r in &self.rows {
            w.u64(r.seq).f64(r.acc_cum).f64(r.acc_window).f64(r.kappa);
        }
        w.into_bytes()
    }
}

/// Decoded evaluator state: final confusion matrix and the metrics series.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluatorReport {
    pub confusion: ConfusionMatrix,
    pub rows: Vec<MetricsRow>,
}

impl EvaluatorReport {
    pub fn decode(bytes: &[u8]) -> Result<Self, String> {
        let mut r = Reader::new(bytes);
        let run = |r: &mut Reader<'_>| -> Result<Self, smdm_core::codec::DecodeError> {
            let k = r.u16()? as usize;
            let mut rows = Vec::with_capacity(k);
            for _ in 0..k {
                rows.push((0..k).map(|_| r.u64()).collect::<Result<Vec<_>, _>>()?);
            }
            let n = r.u32()? as usize;
            let mut series = Vec::with_capacity(n.min(1 << 16));
            for _ in 0..n {
                series.push(MetricsRow {
                    seq: r.u64()?,
                    acc_cum: r.f64()?,
                    acc_window: r.f64()?,
                    kappa: r.f64()?,
                });
            }
            r.finish()?;
            Ok(EvaluatorReport {
                confusion: ConfusionMatrix::from_rows(&rows),
                rows: series,
            })
        };
        run(&mut r).map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use smdm_core::schema::parse_schema;

    fn input() -> DatasetSchema {
        parse_schema("x numeric\ny class {no,yes}").unwrap()
    }

    #[test]
    fn prediction_schema_shape() {
        let s = prediction_schema(&input());
        assert_eq!(
            s.to_text(),
            "predicted categorical {no,yes}\np_no numeric\np_yes numeric\ny class {no,yes}\n"
        );
    }

    #[test]
    fn learner_predicts_then_trains() {
        let mut l = StandardLogics.create("learner/majority", &input(), 0).unwrap();
        let mut out = Vec::new();
        l.process(0, &Instance::new(vec![Cell::Numeric(1.0)], Some(1)), &mut out)
            .unwrap();
        l.process(1, &Instance::new(vec![Cell::Numeric(1.0)], Some(1)), &mut out)
            .unwrap();
        assert_eq!(
            out[0].values,
            vec![Cell::Categorical(0), Cell::Numeric(0.5), Cell::Numeric(0.5)]
        );
        assert_eq!(out[1].values[0], Cell::Categorical(1));
        assert_eq!(out[1].label, Some(1));
    }

    #[test]
    fn evaluator_series() {
        let schema = prediction_schema(&input());
        let mut e = StandardLogics.create("evaluator/10/2", &schema, 0).unwrap();
        let mut out = Vec::new();
        for (p, y) in [(0, 0), (1, 0), (1, 1)] {
            let inst = Instance::new(
                vec![Cell::Categorical(p), Cell::Numeric(0.5), Cell::Numeric(0.5)],
                Some(y),
            );
            e.process(0, &inst, &mut out).unwrap();
        }
        e.on_end().unwrap();
        let report = EvaluatorReport::decode(&e.snapshot()).unwrap();
        assert_eq!(report.confusion.total(), 3);
        assert_eq!(report.rows.iter().map(|r| r.seq).collect::<Vec<_>>(), vec![2, 3]);
        assert!(out.is_empty());
    }

    #[test]
    fn factory_errors() {
        let f = StandardLogics;
        assert!(matches!(f.create("bogus", &input(), 0), Err(LogicError::Unknown(_))));
        assert!(matches!(
            f.create("learner/svm", &input(), 0),
            Err(LogicError::BadParameter { .. })
        ));
        assert!(matches!(
            f.create("learner/ht/0/0.1/0.05", &input(), 0),
            Err(LogicError::BadParameter { .. })
        ));
        assert!(matches!(f.create("evaluator", &input(), 0), Err(LogicError::Schema(_))));
        assert!(matches!(f.create("normalize", &input(), 0), Err(LogicError::Schema(_))));
        assert!(f.create("learner/ht/50/1e-5/0.1", &input(), 0).is_ok());
    }
}
