use std::fmt::Write as _;

use super::EvaluationError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredRecord {
    pub id: u64,
    /// Predicted probability of the positive class.
    pub score: f64,
    pub actual: Option<bool>,
}

impl ScoredRecord {
    pub fn new(id: u64, score: f64) -> Self {
        Self {
            id,
            score,
            actual: None,
        }
    }

    pub fn labeled(id: u64, score: f64, actual: bool) -> Self {
        Self {
            id,
            score,
            actual: Some(actual),
        }
    }
}

/// Records in descending score order; the first `selected` are targeted.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub ranked: Vec<ScoredRecord>,
    pub selected: usize,
    pub fraction: f64,
}

fn check_scores(scored: &[ScoredRecord]) -> Result<(), EvaluationError> {
    match scored.iter().find(|r| !(0.0..=1.0).contains(&r.score)) {
        Some(r) => Err(EvaluationError::BadScore(r.score)),
        None => Ok(()),
    }
}

/// Stable descending sort; equal scores keep their input order.
fn rank(scored: &[ScoredRecord]) -> Vec<ScoredRecord> {
    let mut ranked = scored.to_vec();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
    ranked
}

pub fn rank_and_select(scored: &[ScoredRecord], fraction: f64) -> Result<Selection, EvaluationError> {
    if scored.is_empty() {
        return Err(EvaluationError::EmptyInput);
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(EvaluationError::BadFraction(fraction));
    }
    check_scores(scored)?;
    let ranked = rank(scored);
    let selected = ((fraction * ranked.len() as f64).ceil() as usize).min(ranked.len());
    Ok(Selection {
        ranked,
        selected,
        fraction,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decile {
    pub count: usize,
    pub positives: usize,
    pub response_rate: f64,
    pub lift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiftTable {
    pub deciles: Vec<Decile>,
    pub global_rate: f64,
    pub total_positives: usize,
    pub total: usize,
}

impl LiftTable {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>6} {:>8} {:>9} {:>9} {:>7}",
            "bucket", "count", "positives", "rate", "lift"
        );
        for (i, d) in self.deciles.iter().enumerate() {
            let _ = writeln!(
                out,
                "{:>6} {:>8} {:>9} {:>9.4} {:>7.3}",
                i + 1,
                d.count,
                d.positives,
                d.response_rate,
                d.lift
            );
        }
        let _ = writeln!(
            out,
            "total {:>9} {:>9} {:>9.4} {:>7.3}",
            self.total, self.total_positives, self.global_rate, 1.0
        );
        out
    }
}

/// Splits the ranked records into `buckets` near-equal groups (earlier groups
/// take the remainder) and reports response rate and lift for each.
pub fn lift_table(scored: &[ScoredRecord], buckets: usize) -> Result<LiftTable, EvaluationError> {
    if buckets < 2 {
        return Err(EvaluationError::BadBuckets(buckets));
    }
    if scored.len() < buckets {
        return Err(EvaluationError::TooFewRecords {
            needed: buckets,
            got: scored.len(),
        });
    }
    check_scores(scored)?;
    let ranked = rank(scored);
    let total = ranked.len();
    let total_positives = ranked.iter().filter(|r| r.actual == Some(true)).count();
    if total_positives == 0 {
        return Err(EvaluationError::NoPositives);
    }
    let global_rate = total_positives as f64 / total as f64;
    let base = total / buckets;
    let extra = total % buckets;
    let mut deciles = Vec::with_capacity(buckets);
    let mut start = 0;
    for i in 0..buckets {
        let count = base + usize::from(i < extra);
        let positives = ranked[start..start + count]
            .iter()
            .filter(|r| r.actual == Some(true))
            .count();
        let response_rate = positives as f64 / count as f64;
        deciles.push(Decile {
            count,
            positives,
            response_rate,
            lift: response_rate / global_rate,
        });
        start += count;
    }
    Ok(LiftTable {
        deciles,
        global_rate,
        total_positives,
        total,
    })
}

/// Ranked target list plus an optional lift table when labels are known.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetingReport {
    pub selection: Selection,
    pub lift: Option<LiftTable>,
}

impl TargetingReport {
    pub fn build(scored: &[ScoredRecord], fraction: f64, buckets: usize) -> Result<Self, EvaluationError> {
        let selection = rank_and_select(scored, fraction)?;
        let lift = if scored.iter().all(|r| r.actual.is_some()) {
            match lift_table(scored, buckets) {
                Ok(t) => Some(t),
                Err(EvaluationError::NoPositives | EvaluationError::TooFewRecords { .. }) => None,
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        Ok(Self { selection, lift })
    }

    /// `rank;id;score;selected` with a header row.
    pub fn render_ranking(&self, delimiter: char) -> String {
        let d = delimiter;
        let mut out = format!("rank{d}id{d}score{d}selected\n");
        for (i, r) in self.selection.ranked.iter().enumerate() {
            let _ = writeln!(
                out,
                "{}{d}{}{d}{:.6}{d}{}",
                i + 1,
                r.id,
                r.score,
                u8::from(i < self.selection.selected)
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::SplitMix64;

    #[test]
    fn full_fraction_selects_all() {
        let s: Vec<_> = (0..7).map(|i| ScoredRecord::new(i, 0.5)).collect();
        assert_eq!(rank_and_select(&s, 1.0).unwrap().selected, 7);
    }

    #[test]
    fn tenth_of_hundred() {
        let mut rng = SplitMix64::new(4);
        let s: Vec<_> = (0..100).map(|i| ScoredRecord::new(i, rng.next_f64())).collect();
        let sel = rank_and_select(&s, 0.1).unwrap();
        assert_eq!(sel.selected, 10);
        let min_selected = sel.ranked[..10].iter().map(|r| r.score).fold(1.0, f64::min);
        assert!(sel.ranked[10..].iter().all(|r| r.score <= min_selected));
    }

    #[test]
    fn ties_keep_input_order() {
        let s = vec![
            ScoredRecord::new(5, 0.2),
            ScoredRecord::new(8, 0.7),
            ScoredRecord::new(2, 0.7),
            ScoredRecord::new(9, 0.7),
        ];
        let sel = rank_and_select(&s, 0.5).unwrap();
        let ids: Vec<u64> = sel.ranked.iter().map(|r| r.id).collect();
        assert_eq!(ids, vec![8, 2, 9, 5]);
        assert_eq!(sel.selected, 2);
    }

    #[test]
    fn selection_errors() {
        assert_eq!(rank_and_select(&[], 0.5), Err(EvaluationError::EmptyInput));
        let s = [ScoredRecord::new(0, 0.5)];
        assert_eq!(rank_and_select(&s, 0.0), Err(EvaluationError::BadFraction(0.0)));
        assert_eq!(rank_and_select(&s, 1.5), Err(EvaluationError::BadFraction(1.5)));
        assert_eq!(
            rank_and_select(&[ScoredRecord::new(0, 1.2)], 0.5),
            Err(EvaluationError::BadScore(1.2))
        );
    }

    #[test]
    fn perfect_ranking_lift() {
        let s: Vec<_> = (0..100)
            .map(|i| {
                let pos = i % 10 == 3;
                ScoredRecord::labeled(i, if pos { 1.0 } else { 0.0 }, pos)
            })
            .collect();
        let t = lift_table(&s, 10).unwrap();
        assert_eq!(t.deciles[0].lift, 10.0);
        assert!(t.deciles[1..].iter().all(|d| d.lift == 0.0));
    }

    #[test]
    fn all_positive_lift_is_one() {
        let s: Vec<_> = (0..50)
            .map(|i| ScoredRecord::labeled(i, (i as f64) / 50.0, true))
            .collect();
        let t = lift_table(&s, 10).unwrap();
        assert!(t.deciles.iter().all(|d| d.lift == 1.0));
    }

    #[test]
    fn random_scores_lift_near_one() {
        let mut rng = SplitMix64::new(21);
        let s: Vec<_> = (0..100_000)
            .map(|i| ScoredRecord::labeled(i, rng.next_f64(), rng.next_f64() < 0.12))
            .collect();
        let t = lift_table(&s, 10).unwrap();
        for d in &t.deciles {
            assert!((d.lift - 1.0).abs() < 0.3, "{d:?}");
        }
    }

    #[test]
    fn remainder_goes_to_early_buckets() {
        let s: Vec<_> = (0..23).map(|i| ScoredRecord::labeled(i, 0.5, i == 0)).collect();
        let t = lift_table(&s, 10).unwrap();
        let counts: Vec<usize> = t.deciles.iter().map(|d| d.count).collect();
        assert_eq!(counts, vec![3, 3, 3, 2, 2, 2, 2, 2, 2, 2]);
    }

    #[test]
    fn lift_errors() {
        let s: Vec<_> = (0..5).map(|i| ScoredRecord::labeled(i, 0.5, false)).collect();
        assert_eq!(
            lift_table(&s, 10),
            Err(EvaluationError::TooFewRecords { needed: 10, got: 5 })
        );
        assert_eq!(lift_table(&s, 2), Err(EvaluationError::NoPositives));
    }

    #[test]
    fn ranking_text() {
        let s = vec![ScoredRecord::new(10, 0.25), ScoredRecord::new(11, 0.75)];
        let r = TargetingReport::build(&s, 0.5, 10).unwrap();
        assert_eq!(
            r.render_ranking(';'),
            "rank;id;score;selected\n1;11;0.750000;1\n2;10;0.250000;0\n"
        );
        assert!(r.lift.is_none());
    }
}
