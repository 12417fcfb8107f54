use super::LearnerError;

/// Running mean and sum of squared deviations (Welford).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GaussianStats {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl GaussianStats {
    pub fn update(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
        if self.m2 < 0.0 {
            self.m2 = 0.0;
        }
    }

    /// Sample variance; defined from two observations on.
    pub fn variance(&self) -> Option<f64> {
        (self.count >= 2).then(|| self.m2 / (self.count - 1) as f64)
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().unwrap_or(0.0).sqrt()
    }

    /// Log of the normal density at `x`, with the variance floored at `floor`.
    pub fn log_density(&self, x: f64, floor: f64) -> f64 {
        let var = self.variance().unwrap_or(0.0).max(floor);
        let d = x - self.mean;
        -0.5 * (2.0 * std::f64::consts::PI * var).ln() - d * d / (2.0 * var)
    }
}

/// Per-(class, category) counts for one categorical attribute.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoricalCounts {
    num_categories: usize,
    /// Class-major: `counts[class * num_categories + category]`.
    counts: Vec<u64>,
    class_totals: Vec<u64>,
}

impl CategoricalCounts {
    pub fn new(num_classes: usize, num_categories: usize) -> Self {
        Self {
            num_categories,
            counts: vec![0; num_classes * num_categories],
            class_totals: vec![0; num_classes],
        }
    }

    pub(crate) fn from_parts(num_classes: usize, num_categories: usize, counts: Vec<u64>) -> Option<Self> {
        if counts.len() != num_classes * num_categories {
            return None;
        }
        let class_totals = counts
            .chunks(num_categories.max(1))
            .map(|row| row.iter().sum())
            .take(num_classes)
            .collect();
        Some(Self {
            num_categories,
            counts,
            class_totals,
        })
    }

    pub fn increment(&mut self, class: usize, category: usize) {
        self.counts[class * self.num_categories + category] += 1;
        self.class_totals[class] += 1;
    }

    pub fn count(&self, class: usize, category: usize) -> u64 {
        self.counts[class * self.num_categories + category]
    }

    pub fn class_total(&self, class: usize) -> u64 {
        self.class_totals[class]
    }

    pub fn num_categories(&self) -> usize {
        self.num_categories
    }

    pub fn num_classes(&self) -> usize {
        self.class_totals.len()
    }

    pub(crate) fn raw(&self) -> &[u64] {
        &self.counts
    }

    /// Class distribution of the instances holding `category`.
    pub fn category_distribution(&self, category: usize) -> Vec<u64> {
        (0..self.num_classes()).map(|c| self.count(c, category)).collect()
    }
}

/// Shannon entropy in bits of a count vector; `0 log 0 = 0`.
pub fn entropy(counts: &[f64]) -> f64 {
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    counts
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| {
            let p = c / total;
            -p * p.log2()
        })
        .sum()
}

/// `H(parent) - sum_i (n_i/n) H(partition_i)` in bits.
pub fn info_gain(parent: &[f64], partitions: &[Vec<f64>]) -> Result<f64, LearnerError> {
    let mut sums = vec![0.0; parent.len()];
    for part in partitions {
        if part.len() != parent.len() {
            return Err(LearnerError::CountMismatch);
        }
        for (s, v) in sums.iter_mut().zip(part) {
            *s += v;
        }
    }
    for (s, p) in sums.iter().zip(parent) {
        if (s - p).abs() > 1e-9 * p.abs().max(1.0) {
            return Err(LearnerError::CountMismatch);
        }
    }
    let total: f64 = parent.iter().sum();
    if total <= 0.0 {
        return Ok(0.0);
    }
    let weighted: f64 = partitions
        .iter()
        .map(|part| part.iter().sum::<f64>() / total * entropy(part))
        .sum();
    Ok(entropy(parent) - weighted)
}

/// `sqrt(R^2 ln(1/delta) / (2n))`.
pub fn hoeffding_bound(range: f64, delta: f64, n: u64) -> Result<f64, LearnerError> {
    if !(range > 0.0 && range.is_finite()) {
        return Err(LearnerError::DomainError(format!("range {range} must be > 0")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(LearnerError::DomainError(format!("delta {delta} must lie in (0, 1)")));
    }
    if n == 0 {
        return Err(LearnerError::DomainError("n must be >= 1".into()));
    }
    Ok((range * range * (1.0 / delta).ln() / (2.0 * n as f64)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct textbook entropy, kept separate from the implementation above.
    fn oracle_entropy(counts: &[u32]) -> f64 {
        let n: u32 = counts.iter().sum();
        let mut h = 0.0;
        for &c in counts {
            if c != 0 {
                let p = c as f64 / n as f64;
                h -= p * (p.ln() / 2f64.ln());
            }
        }
        h
    }

    #[test]
    fn welford_single_and_pair() {
        let mut g = GaussianStats::default();
        g.update(2.0);
        assert_eq!(
            g,
            GaussianStats {
                count: 1,
                mean: 2.0,
                m2: 0.0
            }
        );
        assert_eq!(g.variance(), None);
        g.update(4.0);
        assert_eq!(
            g,
            GaussianStats {
                count: 2,
                mean: 3.0,
                m2: 2.0
            }
        );
        assert_eq!(g.variance(), Some(2.0));
    }

    #[test]
    fn perfect_split_gain() {
        let g = info_gain(&[5.0, 5.0], &[vec![5.0, 0.0], vec![0.0, 5.0]]).unwrap();
        assert_eq!(g, 1.0);
    }

    #[test]
    fn identity_partition_gain() {
        let g = info_gain(&[3.0, 7.0], &[vec![3.0, 7.0]]).unwrap();
        assert_eq!(g, 0.0);
    }

    #[test]
    fn gain_matches_entropy_oracle() {
        let expected =
            oracle_entropy(&[8, 4]) - 7.0 / 12.0 * oracle_entropy(&[6, 1]) - 5.0 / 12.0 * oracle_entropy(&[2, 3]);
        let g = info_gain(&[8.0, 4.0], &[vec![6.0, 1.0], vec![2.0, 3.0]]).unwrap();
        assert!((g - expected).abs() < 1e-12);
        assert!((g - 0.168_590_632_192_019_9).abs() < 1e-12);
    }

    #[test]
    fn gain_count_mismatch() {
        assert_eq!(
            info_gain(&[8.0, 4.0], &[vec![6.0, 1.0], vec![2.0, 2.0]]),
            Err(LearnerError::CountMismatch)
        );
        assert_eq!(
            info_gain(&[8.0, 4.0], &[vec![8.0, 4.0, 0.0]]),
            Err(LearnerError::CountMismatch)
        );
    }

    #[test]
    fn hoeffding_reference_value() {
        let eps = hoeffding_bound(1.0, 1e-7, 1000).unwrap();
        assert!((eps - 0.0897716).abs() < 1e-6);
        assert!((eps - (1e7f64.ln() / 2000.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn hoeffding_doubling_n() {
        let a = hoeffding_bound(1.0, 1e-7, 500).unwrap();
        let b = hoeffding_bound(1.0, 1e-7, 1000).unwrap();
        assert!((a / b - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn hoeffding_domain_checks() {
        assert!(hoeffding_bound(1.0, 1.0, 10).is_err());
        assert!(hoeffding_bound(1.0, 0.0, 10).is_err());
        assert!(hoeffding_bound(0.0, 0.1, 10).is_err());
        assert!(hoeffding_bound(1.0, 0.1, 0).is_err());
    }

    #[test]
    fn hoeffding_monotone_grid() {
        for i in 0..20 {
            let r = 0.25 + i as f64 * 0.25;
            for j in 0..20 {
                let n = 1 + j * 50;
                let e = hoeffding_bound(r, 1e-7, n).unwrap();
                assert!(hoeffding_bound(r, 1e-7, n + 1).unwrap() < e);
                assert!(hoeffding_bound(r + 0.25, 1e-7, n).unwrap() > e);
            }
        }
    }
}
