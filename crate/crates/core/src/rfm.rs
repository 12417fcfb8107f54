//! Recency / frequency / monetary features.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::schema::{split_fields, Cell, DatasetSchema, Instance};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RfmError {
    #[error("transaction for `{0}` is dated after the reference date")]
    FutureTransaction(String),
    #[error("transaction for `{0}` has a negative or non-finite amount")]
    InvalidAmount(String),
    #[error("{quantiles} quantiles requested for {customers} customers")]
    DegenerateQuantiles { quantiles: usize, customers: usize },
    #[error("quantile count must be at least 2, got {0}")]
    TooFewQuantiles(usize),
    #[error("instance does not match the bank schema: {0}")]
    SchemaMismatch(String),
    #[error("line {line}: {reason}")]
    MalformedTransaction { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transaction {
    pub customer_id: String,
    /// Days since epoch.
    pub at: i64,
    pub amount: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RfmVector {
    /// Days since the last transaction; `None` without transactions.
    pub recency: Option<u64>,
    pub frequency: u64,
    /// `None` when spend is not tracked.
    pub monetary: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RfmScore {
    pub r_score: u32,
    pub f_score: u32,
    pub m_score: u32,
}

pub fn compute_rfm(transactions: &[Transaction], as_of: i64) -> Result<BTreeMap<String, RfmVector>, RfmError> {
    let mut last_seen: BTreeMap<&str, (i64, u64, f64)> = BTreeMap::new();
    for t in transactions {
        if t.at > as_of {
            return Err(RfmError::FutureTransaction(t.customer_id.clone()));
        }
        if !(t.amount >= 0.0 && t.amount.is_finite()) {
            return Err(RfmError::InvalidAmount(t.customer_id.clone()));
        }
        let entry = last_seen.entry(t.customer_id.as_str()).or_insert((i64::MIN, 0, 0.0));
        entry.0 = entry.0.max(t.at);
        entry.1 += 1;
        entry.2 += t.amount;
    }
    Ok(last_seen
        .into_iter()
        .map(|(id, (last, count, total))| {
            (
                id.to_string(),
                RfmVector {
                    recency: Some((as_of - last) as u64),
                    frequency: count,
                    monetary: Some(total),
                },
            )
        })
        .collect())
}

/// Rank-based bucket in `1..=q` for every value, ascending.
///
/// The value at sorted position `r` (0-based, ties broken by input order)
/// gets `floor(r*q/n) + 1`; equal values share the bucket of their first
/// occurrence.
fn rank_buckets<T, F>(values: &[T], q: usize, cmp: F) -> Vec<u32>
where
    F: Fn(&T, &T) -> std::cmp::Ordering,
{
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| cmp(&values[a], &values[b]));
    let mut buckets = vec![0u32; n];
    let mut run_bucket = 0u32;
    for (rank, &idx) in order.iter().enumerate() {
        let tied = rank > 0 && cmp(&values[order[rank - 1]], &values[idx]).is_eq();
        if !tied {
            run_bucket = (rank * q / n) as u32 + 1;
        }
        buckets[idx] = run_bucket;
    }
    buckets
}

/// Independent quantile scores per dimension.
///
/// Recency is inverted (more recent scores higher, missing recency counts
/// as oldest). Missing monetary values rank lowest, so they score 1.
pub fn score_rfm(vectors: &BTreeMap<String, RfmVector>, q: usize) -> Result<BTreeMap<String, RfmScore>, RfmError> {
    if q < 2 {
        return Err(RfmError::TooFewQuantiles(q));
    }
    if q > vectors.len() {
        return Err(RfmError::DegenerateQuantiles {
            quantiles: q,
            customers: vectors.len(),
        });
    }
    let rows: Vec<&RfmVector> = vectors.values().collect();
    // Descending recency with None first: an absent recency is the oldest.
    let r = rank_buckets(&rows, q, |a, b| match (a.recency, b.recency) {
        (None, None) => std::cmp::Ordering::Equal,
        (None, Some(_)) => std::cmp::Ordering::Less,
        (Some(_), None) => std::cmp::Ordering::Greater,
        (Some(x), Some(y)) => y.cmp(&x),
    });
    let f = rank_buckets(&rows, q, |a, b| a.frequency.cmp(&b.frequency));
    let m = rank_buckets(&rows, q, |a, b| match (a.monetary, b.monetary) {
        (None, None) => std::cmp::Ordering::Equal,
        (None, Some(_)) => std::cmp::Ordering::Less,
        (Some(_), None) => std::cmp::Ordering::Greater,
        (Some(x), Some(y)) => x.total_cmp(&y),
    });
    Ok(vectors
        .keys()
        .enumerate()
        .map(|(i, id)| {
            (
                id.clone(),
                RfmScore {
                    r_score: r[i],
                    f_score: f[i],
                    m_score: m[i],
                },
            )
        })
        .collect())
}

/// RFM proxy for a Bank Marketing record: recency from `pdays`, frequency
/// from `previous + campaign`, no monetary field.
///
/// Expects `pdays` to be normalized already; a never-contacted record has no
/// recency.
pub fn bank_rfm_proxy(instance: &Instance, schema: &DatasetSchema) -> Result<RfmVector, RfmError> {
    let locate = |name: &str| {
        schema
            .feature_index(name)
            .filter(|&i| schema.feature(i).is_numeric())
            .ok_or_else(|| RfmError::SchemaMismatch(format!("no numeric `{name}` attribute")))
    };
    let pdays = locate("pdays")?;
    let previous = locate("previous")?;
    let campaign = locate("campaign")?;
    if instance.values.len() != schema.feature_count() {
        return Err(RfmError::SchemaMismatch(format!(
            "expected {} cells, got {}",
            schema.feature_count(),
            instance.values.len()
        )));
    }
    let count = |idx: usize| -> Result<u64, RfmError> {
        match instance.values[idx] {
            Cell::Missing => Ok(0),
            Cell::Numeric(v) if v >= 0.0 => Ok(v.round() as u64),
            other => Err(RfmError::SchemaMismatch(format!("cell {idx} holds {other:?}"))),
        }
    };
    let recency = if instance.never_contacted() {
        None
    } else {
        match instance.values[pdays] {
            Cell::Numeric(v) if v >= 0.0 => Some(v.round() as u64),
            _ => None,
        }
    };
    Ok(RfmVector {
        recency,
        frequency: count(previous)? + count(campaign)?,
        monetary: None,
    })
}

/// Parses `customer_id<delim>days<delim>amount` lines. Blank lines and `#`
/// comments are skipped.
pub fn parse_transactions(text: &str, delimiter: char) -> Result<Vec<Transaction>, RfmError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
            continue;
        }
        let fields = split_fields(raw, delimiter);
        let malformed = |reason: String| RfmError::MalformedTransaction { line, reason };
        if fields.len() != 3 {
            return Err(malformed(format!("expected 3 fields, got {}", fields.len())));
        }
        let at = fields[1]
            .parse::<i64>()
            .map_err(|e| malformed(format!("day `{}`: {e}", fields[1])))?;
        let amount = fields[2]
            .parse::<f64>()
            .map_err(|e| malformed(format!("amount `{}`: {e}", fields[2])))?;
        out.push(Transaction {
            customer_id: fields[0].clone(),
            at,
            amount,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{builtin_bank_marketing_schema, parse_schema, Flags};

    fn tx(id: &str, at: i64, amount: f64) -> Transaction {
        Transaction {
            customer_id: id.into(),
            at,
            amount,
        }
    }

    fn vector(recency: Option<u64>, frequency: u64, monetary: Option<f64>) -> RfmVector {
        RfmVector {
            recency,
            frequency,
            monetary,
        }
    }

    #[test]
    fn single_transaction() {
        let out = compute_rfm(&[tx("c1", 10, 25.0)], 17).unwrap();
        assert_eq!(out["c1"], vector(Some(7), 1, Some(25.0)));
    }

    #[test]
    fn empty_input() {
        assert!(compute_rfm(&[], 0).unwrap().is_empty());
    }

    #[test]
    fn future_transaction_rejected() {
        assert_eq!(
            compute_rfm(&[tx("c1", 20, 1.0)], 17),
            Err(RfmError::FutureTransaction("c1".into()))
        );
        assert_eq!(
            compute_rfm(&[tx("c1", 2, -1.0)], 17),
            Err(RfmError::InvalidAmount("c1".into()))
        );
    }

    fn from_freqs(freqs: &[u64]) -> BTreeMap<String, RfmVector> {
        freqs
            .iter()
            .enumerate()
            .map(|(i, &f)| (format!("c{i}"), vector(Some(1), f, None)))
            .collect()
    }

    #[test]
    fn two_point_frequency_split() {
        let scores = score_rfm(&from_freqs(&[1, 9]), 2).unwrap();
        assert_eq!(scores["c0"].f_score, 1);
        assert_eq!(scores["c1"].f_score, 2);
    }

    #[test]
    fn recency_is_inverted() {
        let v: BTreeMap<_, _> = [
            ("a".to_string(), vector(Some(3), 1, None)),
            ("b".to_string(), vector(Some(30), 1, None)),
        ]
        .into();
        let scores = score_rfm(&v, 2).unwrap();
        assert_eq!(scores["a"].r_score, 2);
        assert_eq!(scores["b"].r_score, 1);
        // absent monetary always scores 1
        assert_eq!(scores["a"].m_score, 1);
        assert_eq!(scores["b"].m_score, 1);
    }

    #[test]
    fn ties_share_lower_bucket() {
        let scores = score_rfm(&from_freqs(&[5, 5, 5, 9]), 2).unwrap();
        assert_eq!(scores["c0"].f_score, 1);
        assert_eq!(scores["c1"].f_score, 1);
        assert_eq!(scores["c2"].f_score, 1);
        assert_eq!(scores["c3"].f_score, 2);
    }

    #[test]
    fn missing_recency_scores_lowest() {
        let v: BTreeMap<_, _> = [
            ("a".to_string(), vector(None, 0, None)),
            ("b".to_string(), vector(Some(400), 1, Some(3.0))),
            ("c".to_string(), vector(Some(2), 1, Some(1.0))),
        ]
        .into();
        let scores = score_rfm(&v, 3).unwrap();
        assert_eq!(scores["a"].r_score, 1);
        assert_eq!(scores["b"].r_score, 2);
        assert_eq!(scores["c"].r_score, 3);
        assert_eq!(scores["a"].m_score, 1);
        assert_eq!(scores["c"].m_score, 2);
        assert_eq!(scores["b"].m_score, 3);
    }

    #[test]
    fn degenerate_quantiles() {
        assert_eq!(
            score_rfm(&from_freqs(&[1, 2]), 3),
            Err(RfmError::DegenerateQuantiles {
                quantiles: 3,
                customers: 2
            })
        );
        assert_eq!(score_rfm(&from_freqs(&[1, 2]), 1), Err(RfmError::TooFewQuantiles(1)));
    }

    #[test]
    fn quintile_populations_balanced() {
        // Distinct values: the bucket of sorted position r is floor(r*q/n)+1.
        let freqs: Vec<u64> = (0..100).map(|i| (i * 37 % 100) as u64).collect();
        let scores = score_rfm(&from_freqs(&freqs), 5).unwrap();
        let mut pop = [0usize; 5];
        for s in scores.values() {
            pop[s.f_score as usize - 1] += 1;
        }
        assert_eq!(pop, [20; 5]);
        for (i, f) in freqs.iter().enumerate() {
            assert_eq!(scores[&format!("c{i}")].f_score, (*f as usize * 5 / 100) as u32 + 1);
        }
    }

    fn bank_instance(pdays: Cell, previous: f64, campaign: f64) -> Instance {
        let schema = builtin_bank_marketing_schema();
        let mut values = vec![Cell::Missing; schema.feature_count()];
        values[schema.feature_index("pdays").unwrap()] = pdays;
        values[schema.feature_index("previous").unwrap()] = Cell::Numeric(previous);
        values[schema.feature_index("campaign").unwrap()] = Cell::Numeric(campaign);
        Instance::new(values, None)
    }

    #[test]
    fn bank_proxy_mapping() {
        let schema = builtin_bank_marketing_schema();
        let v = bank_rfm_proxy(&bank_instance(Cell::Numeric(6.0), 2.0, 1.0), &schema).unwrap();
        assert_eq!(v, vector(Some(6), 3, None));

        let mut never = bank_instance(Cell::Missing, 0.0, 1.0);
        never.flags.insert(Flags::NEVER_CONTACTED);
        let v = bank_rfm_proxy(&never, &schema).unwrap();
        assert_eq!(v, vector(None, 1, None));
    }

    #[test]
    fn bank_proxy_rejects_other_schema() {
        let schema = parse_schema("x numeric\ny class {a,b}").unwrap();
        let inst = Instance::new(vec![Cell::Numeric(1.0)], None);
        assert!(matches!(
            bank_rfm_proxy(&inst, &schema),
            Err(RfmError::SchemaMismatch(_))
        ));
    }

    #[test]
    fn transaction_file() {
        let parsed = parse_transactions("# id;day;amount\nc1;10;2.5\n\n\"c2\";3;0\n", ';').unwrap();
        assert_eq!(parsed, vec![tx("c1", 10, 2.5), tx("c2", 3, 0.0)]);
        assert!(matches!(
            parse_transactions("c1;x;2", ';'),
            Err(RfmError::MalformedTransaction { line: 1, .. })
        ));
    }
}
