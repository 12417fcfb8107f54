//! Command-line driver: one subcommand per stage of a mining project, from
//! describing the raw data to scoring a target list with a saved model.

pub mod config;
pub mod describe;
pub mod prepare;
pub mod target;
pub mod train;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use smdm_core::evaluation::synth_campaign_stream;
use smdm_core::schema::normalize_pdays;
use smdm_core::stream::{replay_file, ReplayConfig, StreamError};
use smdm_core::{DatasetSchema, Instance};
use thiserror::Error;

use config::{parse_config_text, InputSource, PipelineConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("runtime: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<StreamError> for CliError {
    fn from(e: StreamError) -> Self {
        match e {
            StreamError::InvalidConfig(m) => CliError::Config(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "smdm",
    version,
    about = "Stream mining for direct-marketing response modeling"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-attribute summary of the input.
    Describe(CommonArgs),
    /// Normalizes the input and writes it with its extended schema.
    Prepare(CommonArgs),
    /// Trains and evaluates prequentially, then saves the model.
    TrainEval(CommonArgs),
    /// Scores the input with a saved model and ranks the targets.
    Target(CommonArgs),
    /// Serves one distributed run.
    Worker(WorkerArgs),
    /// Runs train-eval on the distributed engine.
    Coordinate(CommonArgs),
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// `key = value` file; flags override it.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// `builtin` or a schema file.
    #[arg(long)]
    pub schema: Option<String>,
    /// Record file, or `synth` for the generated campaign stream.
    #[arg(long, short)]
    pub input: Option<String>,
    #[arg(long)]
    pub delimiter: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// majority, nb or ht.
    #[arg(long)]
    pub learner: Option<String>,
    #[arg(long)]
    pub partitions: Option<String>,
    /// local or distributed.
    #[arg(long)]
    pub engine: Option<String>,
    /// Peer table: one `id host:port` per line.
    #[arg(long)]
    pub peers: Option<String>,
    #[arg(long)]
    pub window: Option<String>,
    #[arg(long)]
    pub fraction: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, short)]
    pub output: Option<String>,
    /// Append recency/frequency/monetary proxy columns.
    #[arg(long)]
    pub rfm: bool,
    /// Any config key, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct WorkerArgs {
    /// This worker's id in the peer table.
    #[arg(long)]
    pub id: u16,
    /// Address to listen on, e.g. 127.0.0.1:7401.
    #[arg(long)]
    pub listen: String,
    #[command(flatten)]
    pub common: CommonArgs,
}

impl CommonArgs {
    /// Merges defaults, the config file and flags, in increasing priority.
    pub fn resolve(&self) -> Result<PipelineConfig, CliError> {
        let mut values = BTreeMap::new();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("reading `{}`: {e}", path.display())))?;
            values.extend(parse_config_text(&text)?);
        }
        let flags = [
            ("schema", &self.schema),
            ("input", &self.input),
            ("delimiter", &self.delimiter),
            ("seed", &self.seed),
            ("learner", &self.learner),
            ("partitions", &self.partitions),
            ("engine", &self.engine),
            ("peers", &self.peers),
            ("window", &self.window),
            ("fraction", &self.fraction),
            ("model", &self.model),
            ("output", &self.output),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                values.insert(key.to_string(), v.clone());
            }
        }
        if self.rfm {
            values.insert("rfm".into(), "true".into());
        }
        for pair in &self.set {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{pair}`")))?;
            let key = key.trim();
            if !config::KEYS.contains(&key) {
                return Err(CliError::Config(format!("unknown key `{key}`")));
            }
            values.insert(key.to_string(), value.trim().to_string());
        }
        PipelineConfig::resolve(values)
    }
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Describe(a) => describe::cmd_describe(&a.resolve()?).map(|report| print!("{report}")),
        Command::Prepare(a) => prepare::cmd_prepare(&a.resolve()?).map(|_| ()),
        Command::TrainEval(a) => train::cmd_train_eval(&a.resolve()?).map(|s| print!("{s}")),
        Command::Target(a) => target::cmd_target(&a.resolve()?).map(|s| print!("{s}")),
        Command::Worker(w) => train::cmd_worker(&w.common.resolve()?, w.id, &w.listen),
        Command::Coordinate(a) => {
            let mut config = a.resolve()?;
            if config.peers.is_none() {
                return Err(CliError::Config("coordinate needs a `peers` file".into()));
            }
            config.engine = config::EngineChoice::Distributed;
            train::cmd_train_eval(&config).map(|s| print!("{s}"))
        }
    }
}

/// Reads the configured input, in replay order.
pub fn load_records(config: &PipelineConfig, allow_shuffle: bool) -> Result<Vec<Instance>, CliError> {
    match config.require_input()? {
        InputSource::File(path) => {
            let replay = ReplayConfig {
                rate: 0.0,
                shuffle_seed: (allow_shuffle && config.shuffle).then_some(config.seed),
                limit: config.limit,
                delimiter: config.delimiter,
            };
            let mut out = Vec::new();
            for event in replay_file(path, &config.schema, &replay)? {
                if let Some(inst) = event?.payload() {
                    out.push(inst.clone());
                }
            }
            Ok(out)
        }
        InputSource::Synth { count, noise } => {
            let n = config.limit.map_or(*count, |l| (l as u64).min(*count));
            let stream = synth_campaign_stream(n, config.seed, *noise).map_err(|e| CliError::Config(e.to_string()))?;
            Ok(stream.collect())
        }
    }
}

/// Whether the schema carries a numeric `pdays` that the sentinel rule applies to.
pub fn has_pdays(schema: &DatasetSchema) -> bool {
    schema
        .feature_index("pdays")
        .is_some_and(|i| schema.feature(i).is_numeric())
}

pub fn normalize_all(records: Vec<Instance>, schema: &DatasetSchema) -> Result<Vec<Instance>, CliError> {
    if !has_pdays(schema) {
        return Ok(records);
    }
    records
        .into_iter()
        .map(|r| normalize_pdays(r, schema).map_err(|e| CliError::Data(e.to_string())))
        .collect()
}

pub(crate) fn write_output(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("creating `{}`: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| CliError::Runtime(format!("writing `{}`: {e}", path.display())))?;
    log::info!("wrote {}", path.display());
    Ok(path)
}
