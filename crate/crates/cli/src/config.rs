//! `key = value` configuration with flag > file > default precedence.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use smdm_core::learners::{HoeffdingConfig, LearnerKind};
use smdm_core::schema::{builtin_bank_marketing_schema, parse_schema, DEFAULT_DELIMITER};
use smdm_core::DatasetSchema;

use crate::CliError;

/// Every key the configuration understands.
pub const KEYS: &[&str] = &[
    "schema",
    "input",
    "delimiter",
    "synth_count",
    "synth_noise",
    "seed",
    "shuffle",
    "limit",
    "learner",
    "ht_grace",
    "ht_delta",
    "ht_tie",
    "partitions",
    "engine",
    "peers",
    "connect_timeout",
    "run_timeout",
    "window",
    "report_every",
    "fraction",
    "buckets",
    "positive",
    "model",
    "rfm",
    "output",
];

/// Parses a config file body. Keys must be known; later duplicates win.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("config line {}: expected `key = value`", i + 1)))?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(CliError::Config(format!("config line {}: unknown key `{key}`", i + 1)));
        }
        map.insert(key.to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Drops a `#` comment unless the `#` is the delimiter value itself.
fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(pos) if !line[..pos].trim_end().ends_with('=') => &line[..pos],
        _ => line,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InputSource {
    File(PathBuf),
    Synth { count: u64, noise: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EngineChoice {
    Local,
    Distributed,
}

/// Fully resolved settings for one subcommand.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub schema: DatasetSchema,
    pub input: Option<InputSource>,
    pub delimiter: char,
    pub seed: u64,
    pub shuffle: bool,
    pub limit: Option<usize>,
    pub learner: LearnerKind,
    pub hoeffding: HoeffdingConfig,
    pub partitions: u16,
    pub engine: EngineChoice,
    pub peers: Option<PathBuf>,
    pub connect_timeout: Duration,
    pub run_timeout: Duration,
    pub window: usize,
    pub report_every: usize,
    pub fraction: f64,
    pub buckets: usize,
    pub positive: Option<String>,
    pub model: Option<PathBuf>,
    pub rfm: bool,
    pub output: PathBuf,
}

struct Values(BTreeMap<String, String>);

impl Values {
    fn raw(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| CliError::Config(format!("`{key}`: cannot parse `{v}`"))),
        }
    }

    fn flag(&self, key: &str) -> Result<bool, CliError> {
        match self.raw(key) {
            None | Some("false" | "no" | "0") => Ok(false),
            Some("true" | "yes" | "1") => Ok(true),
            Some(v) => Err(CliError::Config(format!("`{key}`: expected true or false, got `{v}`"))),
        }
    }

    fn existing_path(&self, key: &str) -> Result<Option<PathBuf>, CliError> {
        match self.raw(key) {
            None => Ok(None),
            Some(p) if Path::new(p).exists() => Ok(Some(PathBuf::from(p))),
            Some(p) => Err(CliError::Config(format!("`{key}`: file `{p}` does not exist"))),
        }
    }
}

impl PipelineConfig {
    /// Resolves settings from merged key/value pairs, checking every constraint up front.
    pub fn resolve(values: BTreeMap<String, String>) -> Result<Self, CliError> {
        let v = Values(values);
        let schema = match v.raw("schema") {
            None | Some("builtin") => builtin_bank_marketing_schema(),
            Some(_) => {
                let path = v.existing_path("schema")?.expect("checked above");
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| CliError::Config(format!("reading schema `{}`: {e}", path.display())))?;
                parse_schema(&text).map_err(|e| CliError::Data(format!("schema `{}`: {e}", path.display())))?
            }
        };
        let input = match v.raw("input") {
            None => None,
            Some("synth") => {
                let noise: f64 = v.parse("synth_noise", 0.1)?;
                if !(0.0..0.5).contains(&noise) {
                    return Err(CliError::Config(format!(
                        "`synth_noise` must be in [0, 0.5), got {noise}"
                    )));
                }
                if schema != builtin_bank_marketing_schema() {
                    return Err(CliError::Config(
                        "the synthetic stream only follows the builtin schema".into(),
                    ));
                }
                Some(InputSource::Synth {
                    count: v.parse("synth_count", 50_000)?,
                    noise,
                })
            }
            Some(_) => v.existing_path("input")?.map(InputSource::File),
        };
        let delimiter = match v.raw("delimiter") {
            None => DEFAULT_DELIMITER,
            Some("\\t" | "tab") => '\t',
            Some(d) if d.chars().count() == 1 && d != "\"" => d.chars().next().unwrap(),
            Some(d) => {
                return Err(CliError::Config(format!(
                    "`delimiter`: expected one character, got `{d}`"
                )))
            }
        };
        let learner: LearnerKind = match v.raw("learner") {
            None => LearnerKind::NaiveBayes,
            Some(l) => l.parse().map_err(CliError::Config)?,
        };
        let defaults = HoeffdingConfig::default();
        let hoeffding = HoeffdingConfig {
            grace_period: v.parse("ht_grace", defaults.grace_period)?,
            delta: v.parse("ht_delta", defaults.delta)?,
            tie_threshold: v.parse("ht_tie", defaults.tie_threshold)?,
        };
        hoeffding
            .validate()
            .map_err(|e| CliError::Config(format!("hoeffding parameters: {e}")))?;
        let engine = match v.raw("engine") {
            None | Some("local") => EngineChoice::Local,
            Some("distributed") => EngineChoice::Distributed,
            Some(e) => {
                return Err(CliError::Config(format!(
                    "`engine`: expected local or distributed, got `{e}`"
                )))
            }
        };
        let peers = v.existing_path("peers")?;
        let fraction: f64 = v.parse("fraction", 0.1)?;
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(CliError::Config(format!(
                "`fraction` must be in (0, 1], got {fraction}"
            )));
        }
        let positive = v.raw("positive").map(str::to_string);
        if let Some(p) = &positive {
            if !schema.class_domain().contains(p) {
                return Err(CliError::Config(format!("`positive`: `{p}` is not a class value")));
            }
        }
        let config = Self {
            input,
            delimiter,
            seed: v.parse("seed", 7)?,
            shuffle: v.flag("shuffle")?,
            limit: match v.raw("limit") {
                None => None,
                Some(_) => Some(v.parse::<usize>("limit", 0)?).filter(|&l| l > 0),
            },
            learner,
            hoeffding,
            partitions: v.parse("partitions", 1)?,
            engine,
            peers,
            connect_timeout: Duration::from_secs_f64(v.parse("connect_timeout", 10.0)?),
            run_timeout: Duration::from_secs_f64(v.parse("run_timeout", 600.0)?),
            window: v.parse("window", 1000)?,
            report_every: v.parse("report_every", 1000)?,
            fraction,
            buckets: v.parse("buckets", 10)?,
            positive,
            model: v.existing_path("model")?,
            rfm: v.flag("rfm")?,
            output: PathBuf::from(v.raw("output").unwrap_or("out")),
            schema,
        };
        if v.raw("limit").is_some() && config.limit.is_none() {
            return Err(CliError::Config("`limit` must be at least 1".into()));
        }
        for (key, value) in [
            ("partitions", config.partitions as usize),
            ("window", config.window),
            ("report_every", config.report_every),
        ] {
            if value == 0 {
                return Err(CliError::Config(format!("`{key}` must be at least 1")));
            }
        }
        if config.buckets < 2 {
            return Err(CliError::Config("`buckets` must be at least 2".into()));
        }
        if config.engine == EngineChoice::Distributed && config.peers.is_none() {
            return Err(CliError::Config("the distributed engine needs a `peers` file".into()));
        }
        Ok(config)
    }

    pub fn require_input(&self) -> Result<&InputSource, CliError> {
        self.input
            .as_ref()
            .ok_or_else(|| CliError::Config("no `input` given (a file path or `synth`)".into()))
    }

    /// Index of the class value treated as a response: `positive`, else `yes`, else the last class.
    pub fn positive_class(&self) -> usize {
        let domain = self.schema.class_domain();
        let name = self.positive.as_deref().unwrap_or("yes");
        domain.iter().position(|c| c == name).unwrap_or(domain.len() - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn file_parsing() {
        let m = parse_config_text("# run\nlearner = ht  # tree\n\nfraction=0.2\ndelimiter = #\n").unwrap();
        assert_eq!(m["learner"], "ht");
        assert_eq!(m["fraction"], "0.2");
        assert_eq!(m["delimiter"], "#");
        assert!(matches!(parse_config_text("colour = red"), Err(CliError::Config(_))));
        assert!(matches!(parse_config_text("learner"), Err(CliError::Config(_))));
    }

    #[test]
    fn defaults() {
        let c = PipelineConfig::resolve(BTreeMap::new()).unwrap();
        assert_eq!(c.learner, LearnerKind::NaiveBayes);
        assert_eq!(c.delimiter, ';');
        assert_eq!(c.window, 1000);
        assert_eq!(c.schema.attribute_count(), 21);
        assert_eq!(c.positive_class(), 1);
        assert!(c.input.is_none());
    }

    #[test]
    fn constraints_are_checked() {
        for bad in [
            map(&[("fraction", "0")]),
            map(&[("fraction", "1.5")]),
            map(&[("learner", "svm")]),
            map(&[("ht_grace", "0")]),
            map(&[("engine", "distributed")]),
            map(&[("input", "/no/such/file.csv")]),
            map(&[("partitions", "0")]),
            map(&[("limit", "0")]),
            map(&[("positive", "maybe")]),
            map(&[("input", "synth"), ("synth_noise", "0.7")]),
        ] {
            assert!(
                matches!(PipelineConfig::resolve(bad.clone()), Err(CliError::Config(_))),
                "{bad:?}"
            );
        }
    }

    #[test]
    fn synth_input() {
        let c = PipelineConfig::resolve(map(&[("input", "synth"), ("synth_count", "10")])).unwrap();
        assert_eq!(c.input, Some(InputSource::Synth { count: 10, noise: 0.1 }));
    }
}
