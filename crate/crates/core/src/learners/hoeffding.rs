//! Hoeffding tree (VFDT) with information-gain splits.
//!
//! Categorical attributes split multiway, one branch per category. Numeric
//! attributes split binary (`x <= threshold` goes left) at one of ten
//! equal-width thresholds between the leaf's observed minimum and maximum;
//! class counts on either side are estimated from per-class Gaussians, so
//! a leaf holds a constant amount of state per attribute.
//!
//! When a leaf splits, its class counts are handed down to the new leaves
//! (exact for categorical splits, Gaussian-estimated for numeric ones,
//! with the remainder following the majority branch), so the leaf class
//! counts always sum to the number of training instances.

use super::stats::{hoeffding_bound, info_gain, CategoricalCounts, GaussianStats};
use super::{argmax, smoothed, Classifier, FeatureKind, FeatureLayout, LearnerError};
use crate::schema::{Cell, DatasetSchema, Instance};

const NUM_THRESHOLDS: usize = 10;
/// A candidate split must send at least this fraction of the weight down
/// two different branches.
const MIN_BRANCH_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoeffdingConfig {
    pub grace_period: u64,
    pub delta: f64,
    pub tie_threshold: f64,
}

impl Default for HoeffdingConfig {
    fn default() -> Self {
        Self {
            grace_period: 200,
            delta: 1e-7,
            tie_threshold: 0.05,
        }
    }
}

impl HoeffdingConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        if self.grace_period == 0 {
            return Err(LearnerError::DomainError("grace_period must be >= 1".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(LearnerError::DomainError(format!("delta {} not in (0, 1)", self.delta)));
        }
        if !(self.tie_threshold > 0.0 && self.tie_threshold.is_finite()) {
            return Err(LearnerError::DomainError(format!(
                "tie_threshold {} must be > 0",
                self.tie_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct NumericObserver {
    pub(crate) per_class: Vec<GaussianStats>,
    pub(crate) min: Vec<f64>,
    pub(crate) max: Vec<f64>,
}

impl NumericObserver {
    fn new(k: usize) -> Self {
        Self {
            per_class: vec![GaussianStats::default(); k],
            min: vec![f64::INFINITY; k],
            max: vec![f64::NEG_INFINITY; k],
        }
    }

    fn observe(&mut self, class: usize, x: f64) {
        self.per_class[class].update(x);
        self.min[class] = self.min[class].min(x);
        self.max[class] = self.max[class].max(x);
    }

    fn class_weights(&self) -> Vec<f64> {
        self.per_class.iter().map(|g| g.count as f64).collect()
    }

    /// Estimated per-class weight with value `<= threshold`.
    fn weight_at_or_below(&self, threshold: f64) -> Vec<f64> {
        self.per_class
            .iter()
            .enumerate()
            .map(|(c, g)| {
                let n = g.count as f64;
                if g.count == 0 || threshold < self.min[c] {
                    0.0
                } else if threshold >= self.max[c] {
                    n
                } else {
                    let sd = g.std_dev();
                    let below = if sd > 0.0 {
                        n * normal_cdf((threshold - g.mean) / sd)
                    } else if threshold >= g.mean {
                        n
                    } else {
                        0.0
                    };
                    below.clamp(0.0, n)
                }
            })
            .collect()
    }

    fn thresholds(&self) -> Vec<f64> {
        let lo = self.min.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.max.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
            return Vec::new();
        }
        let step = (hi - lo) / (NUM_THRESHOLDS + 1) as f64;
        (1..=NUM_THRESHOLDS).map(|i| lo + step * i as f64).collect()
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z / std::f64::consts::SQRT_2))
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Observer {
    Numeric(NumericObserver),
    Categorical(CategoricalCounts),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Leaf {
    pub(crate) class_counts: Vec<u64>,
    /// Instances observed since the leaf was created.
    pub(crate) observed: u64,
    pub(crate) last_evaluation: u64,
    pub(crate) observers: Vec<Observer>,
}

impl Leaf {
    fn new(layout: &FeatureLayout, class_counts: Vec<u64>) -> Self {
        let k = layout.num_classes;
        Self {
            class_counts,
            observed: 0,
            last_evaluation: 0,
            observers: layout
                .features
                .iter()
                .map(|f| match f {
                    FeatureKind::Numeric => Observer::Numeric(NumericObserver::new(k)),
                    FeatureKind::Categorical(d) => Observer::Categorical(CategoricalCounts::new(k, *d)),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitTest {
    /// One branch per category index.
    Categorical,
    /// Branch 0 for `x <= threshold`, branch 1 otherwise.
    Numeric { threshold: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Split {
    pub(crate) feature: usize,
    pub(crate) test: SplitTest,
    pub(crate) children: Vec<usize>,
    /// Instances routed down each branch, including those inherited at split time.
    pub(crate) traffic: Vec<u64>,
}

impl Split {
    fn branch(&self, cell: &Cell) -> usize {
        match (cell, self.test) {
            (Cell::Categorical(v), SplitTest::Categorical) => *v as usize,
            (Cell::Numeric(x), SplitTest::Numeric { threshold }) => usize::from(*x > threshold),
            _ => self.majority_branch(),
        }
    }

    fn majority_branch(&self) -> usize {
        let mut best = 0;
        for (i, &t) in self.traffic.iter().enumerate() {
            if t > self.traffic[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Node {
    Leaf(Leaf),
    Split(Split),
}

/// Read-only view of a tree node.
#[derive(Debug, Clone, PartialEq)]
pub enum HoeffdingNode<'a> {
    Leaf {
        class_counts: &'a [u64],
    },
    Split {
        feature: usize,
        test: SplitTest,
        children: &'a [usize],
    },
}

#[derive(Debug, Clone, PartialEq)]
struct Candidate {
    feature: usize,
    gain: f64,
    test: SplitTest,
    /// Per-branch class counts (estimated for numeric tests).
    partitions: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HoeffdingTree {
    pub(crate) layout: FeatureLayout,
    pub(crate) config: HoeffdingConfig,
    /// Arena; node 0 is the root.
    pub(crate) nodes: Vec<Node>,
}

impl HoeffdingTree {
    pub fn new(schema: &DatasetSchema, config: HoeffdingConfig) -> Result<Self, LearnerError> {
        Self::with_layout(FeatureLayout::from_schema(schema), config)
    }

    pub(crate) fn with_layout(layout: FeatureLayout, config: HoeffdingConfig) -> Result<Self, LearnerError> {
        config.validate()?;
        let root = Leaf::new(&layout, vec![0; layout.num_classes]);
        Ok(Self {
            layout,
            config,
            nodes: vec![Node::Leaf(root)],
        })
    }

    pub fn config(&self) -> HoeffdingConfig {
        self.config
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, id: usize) -> HoeffdingNode<'_> {
        match &self.nodes[id] {
            Node::Leaf(l) => HoeffdingNode::Leaf {
                class_counts: &l.class_counts,
            },
            Node::Split(s) => HoeffdingNode::Split {
                feature: s.feature,
                test: s.test,
                children: &s.children,
            },
        }
    }

    pub fn root(&self) -> HoeffdingNode<'_> {
        self.node(0)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }

    /// Sum of class counts over all leaves.
    pub fn leaf_class_total(&self) -> u64 {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf(l) => Some(l.class_counts.iter().sum::<u64>()),
                Node::Split(_) => None,
            })
            .sum()
    }

    fn find_leaf(&self, instance: &Instance) -> usize {
        let mut id = 0;
        while let Node::Split(split) = &self.nodes[id] {
            id = split.children[split.branch(&instance.values[split.feature])];
        }
        id
    }

    fn route_for_training(&mut self, instance: &Instance) -> usize {
        let mut id = 0;
        loop {
            match &mut self.nodes[id] {
                Node::Split(split) => {
                    let b = split.branch(&instance.values[split.feature]);
                    split.traffic[b] += 1;
                    id = split.children[b];
                }
                Node::Leaf(_) => return id,
            }
        }
    }

    fn best_candidate_for(&self, feature: usize, observer: &Observer) -> Option<Candidate> {
        let admissible = |parts: &[Vec<f64>]| {
            let total: f64 = parts.iter().flatten().sum();
            total > 0.0
                && parts
                    .iter()
                    .filter(|p| p.iter().sum::<f64>() / total >= MIN_BRANCH_FRACTION)
                    .count()
                    >= 2
        };
        match observer {
            Observer::Categorical(counts) => {
                let parent: Vec<f64> = (0..counts.num_classes())
                    .map(|c| counts.class_total(c) as f64)
                    .collect();
                let partitions: Vec<Vec<f64>> = (0..counts.num_categories())
                    .map(|v| counts.category_distribution(v).into_iter().map(|x| x as f64).collect())
                    .collect();
                if !admissible(&partitions) {
                    return None;
                }
                let gain = info_gain(&parent, &partitions).ok()?;
                Some(Candidate {
                    feature,
                    gain,
                    test: SplitTest::Categorical,
                    partitions,
                })
            }
            Observer::Numeric(obs) => {
                let parent = obs.class_weights();
                let mut best: Option<Candidate> = None;
                for threshold in obs.thresholds() {
                    let left = obs.weight_at_or_below(threshold);
                    let right: Vec<f64> = parent.iter().zip(&left).map(|(p, l)| p - l).collect();
                    let partitions = vec![left, right];
                    if !admissible(&partitions) {
                        continue;
                    }
                    let Ok(gain) = info_gain(&parent, &partitions) else {
                        continue;
                    };
                    if best.as_ref().is_none_or(|b| gain > b.gain) {
                        best = Some(Candidate {
                            feature,
                            gain,
                            test: SplitTest::Numeric { threshold },
                            partitions,
                        });
                    }
                }
                best
            }
        }
    }

    fn try_split(&mut self, leaf_id: usize) -> Result<(), LearnerError> {
        let Node::Leaf(leaf) = &self.nodes[leaf_id] else {
            return Ok(());
        };
        let mut candidates: Vec<Candidate> = leaf
            .observers
            .iter()
            .enumerate()
            .filter_map(|(f, obs)| self.best_candidate_for(f, obs))
            .collect();
        if candidates.is_empty() {
            return Ok(());
        }
        // Stable sort keeps the lower feature index first on equal gains.
        candidates.sort_by(|a, b| b.gain.total_cmp(&a.gain));
        let best_gain = candidates[0].gain;
        let second_gain = candidates.get(1).map_or(0.0, |c| c.gain);
        let range = (self.layout.num_classes as f64).log2();
        let epsilon = hoeffding_bound(range, self.config.delta, leaf.observed)?;
        if best_gain > 0.0 && (best_gain - second_gain > epsilon || epsilon < self.config.tie_threshold) {
            let best = candidates.swap_remove(0);
            self.install_split(leaf_id, best);
        }
        Ok(())
    }

    fn install_split(&mut self, leaf_id: usize, candidate: Candidate) {
        let Node::Leaf(leaf) = &self.nodes[leaf_id] else { return };
        let k = self.layout.num_classes;
        let mut inherited: Vec<Vec<u64>> = vec![vec![0; k]; candidate.partitions.len()];
        match candidate.test {
            SplitTest::Categorical => {
                for (branch, part) in candidate.partitions.iter().enumerate() {
                    for (c, v) in part.iter().enumerate() {
                        inherited[branch][c] = *v as u64;
                    }
                }
            }
            SplitTest::Numeric { .. } => {
                let Observer::Numeric(obs) = &leaf.observers[candidate.feature] else {
                    return;
                };
                for (c, stats) in obs.per_class.iter().enumerate().take(k) {
                    let left = (candidate.partitions[0][c].round() as u64).min(stats.count);
                    inherited[0][c] = left;
                    inherited[1][c] = stats.count - left;
                }
            }
        }
        // Instances the observer never saw (missing values, counts inherited by
        // this leaf) follow the branch with the most traffic.
        let traffic_before: Vec<u64> = inherited.iter().map(|b| b.iter().sum()).collect();
        let majority = argmax(&traffic_before.iter().map(|&t| t as f64).collect::<Vec<_>>());
        for c in 0..k {
            let assigned: u64 = inherited.iter().map(|b| b[c]).sum();
            inherited[majority][c] += leaf.class_counts[c].saturating_sub(assigned);
        }
        let traffic: Vec<u64> = inherited.iter().map(|b| b.iter().sum()).collect();
        let first_child = self.nodes.len();
        let children: Vec<usize> = (first_child..first_child + inherited.len()).collect();
        for counts in inherited {
            let leaf = Leaf::new(&self.layout, counts);
            self.nodes.push(Node::Leaf(leaf));
        }
        self.nodes[leaf_id] = Node::Split(Split {
            feature: candidate.feature,
            test: candidate.test,
            children,
            traffic,
        });
    }
}

impl Classifier for HoeffdingTree {
    fn train_one(&mut self, instance: &Instance) -> Result<(), LearnerError> {
        let label = self.layout.label_of(instance)?;
        let leaf_id = self.route_for_training(instance);
        let grace = self.config.grace_period;
        let Node::Leaf(leaf) = &mut self.nodes[leaf_id] else {
            unreachable!()
        };
        leaf.class_counts[label] += 1;
        leaf.observed += 1;
        for (cell, obs) in instance.values.iter().zip(leaf.observers.iter_mut()) {
            match (cell, obs) {
                (Cell::Numeric(x), Observer::Numeric(o)) => o.observe(label, *x),
                (Cell::Categorical(v), Observer::Categorical(o)) => o.increment(label, *v as usize),
                _ => {}
            }
        }
        if leaf.observed - leaf.last_evaluation >= grace && self.layout.num_classes >= 2 {
            leaf.last_evaluation = leaf.observed;
            self.try_split(leaf_id)?;
        }
        Ok(())
    }

    fn predict(&self, instance: &Instance) -> Result<Vec<f64>, LearnerError> {
        self.layout.check(instance)?;
        let Node::Leaf(leaf) = &self.nodes[self.find_leaf(instance)] else {
            unreachable!()
        };
        Ok(smoothed(&leaf.class_counts))
    }

    fn reset(&mut self) {
        let root = Leaf::new(&self.layout, vec![0; self.layout.num_classes]);
        self.nodes = vec![Node::Leaf(root)];
    }

    fn num_classes(&self) -> usize {
        self.layout.num_classes
    }
}
