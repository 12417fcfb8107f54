//! Replays record files as ordered, optionally throttled event streams.

use std::fs;
use std::path::Path;
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::schema::{is_header_line, parse_record, DatasetSchema, IngestError, Instance};

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: IngestError,
    },
    #[error("I/O failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("invalid replay configuration: {0}")]
    InvalidConfig(String),
}

/// SplitMix64. Fixed so that shuffles are reproducible across implementations.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// `next_u64() % bound`; `bound` must be non-zero.
    pub fn next_below(&mut self, bound: u64) -> u64 {
        self.next_u64() % bound
    }
}

/// Seeded Fisher-Yates permutation of `0..n`.
///
/// Walks `i` from `n-1` down to `1`, swapping position `i` with
/// `next_u64() % (i + 1)`.
pub fn fisher_yates_order(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = SplitMix64::new(seed);
    for i in (1..n).rev() {
        let j = rng.next_below(i as u64 + 1) as usize;
        order.swap(i, j);
    }
    order
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayConfig {
    /// Events per second; `0.0` disables throttling.
    pub rate: f64,
    pub shuffle_seed: Option<u64>,
    pub limit: Option<usize>,
    pub delimiter: char,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            rate: 0.0,
            shuffle_seed: None,
            limit: None,
            delimiter: crate::schema::DEFAULT_DELIMITER,
        }
    }
}

impl ReplayConfig {
    pub fn validate(&self) -> Result<(), StreamError> {
        if !(self.rate >= 0.0 && self.rate.is_finite()) {
            return Err(StreamError::InvalidConfig(format!("rate {}", self.rate)));
        }
        if self.limit == Some(0) {
            return Err(StreamError::InvalidConfig("limit must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Punctuation {
    Data(Instance),
    EndOfStream,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamEvent {
    pub seq_no: u64,
    /// Milliseconds since stream start.
    pub timestamp: u64,
    pub punctuation: Punctuation,
}

impl StreamEvent {
    pub fn payload(&self) -> Option<&Instance> {
        match &self.punctuation {
            Punctuation::Data(i) => Some(i),
            Punctuation::EndOfStream => None,
        }
    }

    pub fn is_end(&self) -> bool {
        matches!(self.punctuation, Punctuation::EndOfStream)
    }
}

/// Produces data events then a single end-of-stream punctuation.
///
/// Records are parsed lazily, so a malformed line surfaces as an `Err` item
/// when the stream reaches it; the stream ends after the first error.
pub struct Replay<S> {
    source: S,
    next_seq: u64,
    rate: f64,
    started: Option<Instant>,
    finished: bool,
}

/// Yields `(line number, parse result)` pairs.
pub trait RecordSource {
    fn next_record(&mut self) -> Option<(usize, Result<Instance, IngestError>)>;
}

pub struct FileRecords {
    lines: Vec<(usize, String)>,
    order: std::vec::IntoIter<usize>,
    schema: DatasetSchema,
    delimiter: char,
}

impl RecordSource for FileRecords {
    fn next_record(&mut self) -> Option<(usize, Result<Instance, IngestError>)> {
        let idx = self.order.next()?;
        let (line_no, text) = &self.lines[idx];
        Some((*line_no, parse_record(text, &self.schema, self.delimiter)))
    }
}

pub struct MemoryRecords<I> {
    inner: I,
    index: usize,
}

impl<I: Iterator<Item = Instance>> RecordSource for MemoryRecords<I> {
    fn next_record(&mut self) -> Option<(usize, Result<Instance, IngestError>)> {
        let inst = self.inner.next()?;
        self.index += 1;
        Some((self.index, Ok(inst)))
    }
}

impl<S: RecordSource> Iterator for Replay<S> {
    type Item = Result<StreamEvent, StreamError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.finished {
            return None;
        }
        let started = *self.started.get_or_insert_with(Instant::now);
        let seq_no = self.next_seq;
        let timestamp = if self.rate > 0.0 {
            let due = Duration::from_secs_f64(seq_no as f64 / self.rate);
            let elapsed = started.elapsed();
            if due > elapsed {
                thread::sleep(due - elapsed);
            }
            due.as_millis() as u64
        } else {
            started.elapsed().as_millis() as u64
        };
        self.next_seq += 1;
        match self.source.next_record() {
            Some((_, Ok(instance))) => Some(Ok(StreamEvent {
                seq_no,
                timestamp,
                punctuation: Punctuation::Data(instance),
            })),
            Some((line, Err(source))) => {
                self.finished = true;
                Some(Err(StreamError::Parse { line, source }))
            }
            None => {
                self.finished = true;
                Some(Ok(StreamEvent {
                    seq_no,
                    timestamp,
                    punctuation: Punctuation::EndOfStream,
                }))
            }
        }
    }
}

/// Reads a record file and replays it under `config`.
///
/// Blank lines are ignored, as is a leading header line naming the schema's
/// attributes. Line numbers in errors are 1-based file lines.
pub fn replay_file(
    path: impl AsRef<Path>,
    schema: &DatasetSchema,
    config: &ReplayConfig,
) -> Result<Replay<FileRecords>, StreamError> {
    config.validate()?;
    let text = fs::read_to_string(path)?;
    let mut lines: Vec<(usize, String)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.to_string()))
        .collect();
    if lines
        .first()
        .is_some_and(|(_, l)| is_header_line(l, schema, config.delimiter))
    {
        lines.remove(0);
    }
    let mut order = match config.shuffle_seed {
        Some(seed) => fisher_yates_order(lines.len(), seed),
        None => (0..lines.len()).collect(),
    };
    if let Some(limit) = config.limit {
        order.truncate(limit);
    }
    Ok(Replay {
        source: FileRecords {
            lines,
            order: order.into_iter(),
            schema: schema.clone(),
            delimiter: config.delimiter,
        },
        next_seq: 0,
        rate: config.rate,
        started: None,
        finished: false,
    })
}

/// Replays already materialized instances. Shuffling is not applied here;
/// `limit` and `rate` are.
pub fn replay_instances<I>(
    instances: I,
    config: &ReplayConfig,
) -> Result<Replay<MemoryRecords<std::iter::Take<I::IntoIter>>>, StreamError>
where
    I: IntoIterator<Item = Instance>,
{
    config.validate()?;
    let limit = config.limit.unwrap_or(usize::MAX);
    Ok(Replay {
        source: MemoryRecords {
            inner: instances.into_iter().take(limit),
            index: 0,
        },
        next_seq: 0,
        rate: config.rate,
        started: None,
        finished: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{parse_schema, Cell};
    use std::io::Write;

    fn toy_schema() -> DatasetSchema {
        parse_schema("x numeric\ny class {no,yes}").unwrap()
    }

    fn toy_file(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    fn collect(r: impl Iterator<Item = Result<StreamEvent, StreamError>>) -> Vec<StreamEvent> {
        r.map(|e| e.unwrap()).collect()
    }

    #[test]
    fn splitmix_reference_values() {
        // First outputs for seed 0 as published with the reference implementation.
        let mut rng = SplitMix64::new(0);
        assert_eq!(rng.next_u64(), 0xe220a8397b1dcdaf);
        assert_eq!(rng.next_u64(), 0x6e789e6aa1b965f4);
        assert_eq!(rng.next_u64(), 0x06c45d188009454f);
    }

    #[test]
    fn fisher_yates_edges() {
        assert!(fisher_yates_order(0, 9).is_empty());
        assert_eq!(fisher_yates_order(1, 9), vec![0]);
        let a = fisher_yates_order(5, 1234);
        assert_eq!(a, fisher_yates_order(5, 1234));
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn file_order_then_end() {
        let f = toy_file(&["1;no", "2;yes", "3;no"]);
        let events = collect(replay_file(f.path(), &toy_schema(), &ReplayConfig::default()).unwrap());
        assert_eq!(events.len(), 4);
        for (i, e) in events.iter().enumerate() {
            assert_eq!(e.seq_no, i as u64);
        }
        assert_eq!(events[0].payload().unwrap().values[0], Cell::Numeric(1.0));
        assert_eq!(events[2].payload().unwrap().values[0], Cell::Numeric(3.0));
        assert!(events[3].is_end());
        assert!(events[3].payload().is_none());
    }

    #[test]
    fn shuffle_is_deterministic() {
        let lines: Vec<String> = (0..20).map(|i| format!("{i};no")).collect();
        let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
        let f = toy_file(&refs);
        let cfg = ReplayConfig {
            shuffle_seed: Some(42),
            ..Default::default()
        };
        let a = collect(replay_file(f.path(), &toy_schema(), &cfg).unwrap());
        let b = collect(replay_file(f.path(), &toy_schema(), &cfg).unwrap());
        let pa: Vec<_> = a.iter().map(|e| e.payload().cloned()).collect();
        let pb: Vec<_> = b.iter().map(|e| e.payload().cloned()).collect();
        assert_eq!(pa, pb);
        let plain = collect(replay_file(f.path(), &toy_schema(), &ReplayConfig::default()).unwrap());
        let pp: Vec<_> = plain.iter().map(|e| e.payload().cloned()).collect();
        assert_ne!(pa, pp);
    }

    #[test]
    fn limit_truncates() {
        let f = toy_file(&["1;no", "2;yes", "3;no"]);
        let cfg = ReplayConfig {
            limit: Some(1),
            ..Default::default()
        };
        let events = collect(replay_file(f.path(), &toy_schema(), &cfg).unwrap());
        assert_eq!(events.len(), 2);
        assert!(!events[0].is_end());
        assert!(events[1].is_end());
    }

    #[test]
    fn header_and_blank_lines_skipped() {
        let f = toy_file(&["x;y", "", "1;no"]);
        let events = collect(replay_file(f.path(), &toy_schema(), &ReplayConfig::default()).unwrap());
        assert_eq!(events.len(), 2);
    }

    #[test]
    fn parse_error_carries_line_number() {
        let f = toy_file(&["1;no", "oops;no"]);
        let mut r = replay_file(f.path(), &toy_schema(), &ReplayConfig::default()).unwrap();
        assert!(r.next().unwrap().is_ok());
        match r.next().unwrap() {
            Err(StreamError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(r.next().is_none());
    }

    #[test]
    fn missing_file_is_io_failure() {
        let r = replay_file("/nonexistent/file.csv", &toy_schema(), &ReplayConfig::default());
        assert!(matches!(r, Err(StreamError::IoFailure(_))));
    }

    #[test]
    fn bad_config_rejected() {
        let cfg = ReplayConfig {
            limit: Some(0),
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ReplayConfig {
            rate: -1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn throttled_replay_respects_lower_bound() {
        let f = toy_file(&["1;no", "2;no", "3;no", "4;no", "5;no"]);
        let cfg = ReplayConfig {
            rate: 100.0,
            ..Default::default()
        };
        let start = Instant::now();
        let events = collect(replay_file(f.path(), &toy_schema(), &cfg).unwrap());
        assert_eq!(events.len(), 6);
        assert!(start.elapsed() >= Duration::from_millis(40));
        assert_eq!(events[4].timestamp, 40);
    }

    #[test]
    fn in_memory_replay() {
        let insts = (0..3).map(|i| crate::Instance::new(vec![Cell::Numeric(i as f64)], Some(0)));
        let cfg = ReplayConfig {
            limit: Some(2),
            ..Default::default()
        };
        let events = collect(replay_instances(insts, &cfg).unwrap());
        assert_eq!(events.len(), 3);
        assert!(events[2].is_end());
    }
}
