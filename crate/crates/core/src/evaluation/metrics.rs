use std::collections::VecDeque;

use super::EvaluationError;
use crate::learners::{argmax, Classifier};
use crate::schema::Instance;

pub const DEFAULT_WINDOW: usize = 1000;

/// k×k counts indexed by (actual, predicted).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            k: num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Self {
        let k = rows.len();
        assert!(rows.iter().all(|r| r.len() == k), "confusion matrix must be square");
        Self {
            k,
            counts: rows.concat(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn add(&mut self, actual: usize, predicted: usize) {
        self.counts[actual * self.k + predicted] += 1;
    }

    pub fn get(&self, actual: usize, predicted: usize) -> u64 {
        self.counts[actual * self.k + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| self.correct() as f64 / total as f64)
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u64]> {
        self.counts.chunks(self.k.max(1))
    }
}

/// Cohen's kappa; 0 when chance agreement is already perfect.
pub fn kappa(matrix: &ConfusionMatrix) -> Result<f64, EvaluationError> {
    let n = matrix.total();
    if n == 0 {
        return Err(EvaluationError::EmptyMatrix);
    }
    let n = n as f64;
    let k = matrix.num_classes();
    let p_o = matrix.correct() as f64 / n;
    let p_e: f64 = (0..k)
        .map(|c| {
            let actual: u64 = (0..k).map(|p| matrix.get(c, p)).sum();
            let predicted: u64 = (0..k).map(|a| matrix.get(a, c)).sum();
            (actual as f64 / n) * (predicted as f64 / n)
        })
        .sum();
    if p_e >= 1.0 {
        return Ok(0.0);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrequentialState {
    cumulative: ConfusionMatrix,
    window: VecDeque<bool>,
    window_size: usize,
    window_correct: usize,
    instances_seen: u64,
}

impl PrequentialState {
    pub fn new(num_classes: usize, window_size: usize) -> Result<Self, EvaluationError> {
        if window_size == 0 {
            return Err(EvaluationError::BadWindow);
        }
        Ok(Self {
            cumulative: ConfusionMatrix::new(num_classes),
            window: VecDeque::with_capacity(window_size),
            window_size,
            window_correct: 0,
            instances_seen: 0,
        })
    }

    pub fn record(&mut self, actual: usize, predicted: usize) {
        self.cumulative.add(actual, predicted);
        let hit = actual == predicted;
        if self.window.len() == self.window_size && self.window.pop_front() == Some(true) {
            self.window_correct -= 1;
        }
        self.window.push_back(hit);
        self.window_correct += usize::from(hit);
        self.instances_seen += 1;
    }

    pub fn confusion(&self) -> &ConfusionMatrix {
        &self.cumulative
    }

    pub fn instances_seen(&self) -> u64 {
        self.instances_seen
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    pub fn cumulative_accuracy(&self) -> Option<f64> {
        self.cumulative.accuracy()
    }

    pub fn window_accuracy(&self) -> Option<f64> {
        (!self.window.is_empty()).then(|| self.window_correct as f64 / self.window.len() as f64)
    }

    pub fn kappa(&self) -> Result<f64, EvaluationError> {
        kappa(&self.cumulative)
    }

    /// Current metrics as a series row; `None` before the first instance.
    pub fn row(&self) -> Option<MetricsRow> {
        Some(MetricsRow {
            seq: self.instances_seen,
            acc_cum: self.cumulative_accuracy()?,
            acc_window: self.window_accuracy()?,
            kappa: self.kappa().ok()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub seq: u64,
    pub acc_cum: f64,
    pub acc_window: f64,
    pub kappa: f64,
}

impl MetricsRow {
    pub const HEADER: [&'static str; 4] = ["seq", "acc_cum", "acc_window", "kappa"];

    pub fn header(delimiter: char) -> String {
        Self::HEADER.join(&delimiter.to_string())
    }

    pub fn render(&self, delimiter: char) -> String {
        format!(
            "{}{d}{:.6}{d}{:.6}{d}{:.6}",
            self.seq,
            self.acc_cum,
            self.acc_window,
            self.kappa,
            d = delimiter
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub distribution: Vec<f64>,
}

/// Test-then-train: predict, record the outcome, then train on the same instance.
pub fn prequential_step<C: Classifier + ?Sized>(
    state: &mut PrequentialState,
    model: &mut C,
    instance: &Instance,
) -> Result<Prediction, EvaluationError> {
    let actual = instance.label.ok_or(EvaluationError::UnlabeledInstance)? as usize;
    let distribution = model.predict(&instance.unlabeled())?;
    let class = argmax(&distribution);
    state.record(actual, class);
    model.train_one(instance)?;
    Ok(Prediction { class, distribution })
}
