use std::fmt::Write as _;
use std::net::TcpListener;

use smdm_core::evaluation::{kappa, MetricsRow};
use smdm_core::learners::{decode_learner, encode_model, LearnerKind};
use smdm_core::Instance;
use smdm_engine::{
    parse_peer_table, run_coordinator, run_local, run_worker, DistributedOptions, EngineError, EvaluatorReport,
    Grouping, KeySpec, Pipeline, RunResult, TopologySpec,
};

use crate::config::{EngineChoice, PipelineConfig};
use crate::{has_pdays, load_records, write_output, CliError};

pub const MODEL_FILE: &str = "model.snap";

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Topology(_) | EngineError::InvalidPipeline(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

pub fn learner_logic(config: &PipelineConfig) -> String {
    match config.learner {
        LearnerKind::Hoeffding => {
            let h = config.hoeffding;
            format!("learner/ht/{}/{}/{}", h.grace_period, h.delta, h.tie_threshold)
        }
        other => format!("learner/{other}"),
    }
}

/// source -> learner -> evaluator, both edges keyed by record id.
pub fn standard_pipeline(config: &PipelineConfig) -> Result<Pipeline, CliError> {
    let source = if has_pdays(&config.schema) {
        "normalize"
    } else {
        "source"
    };
    let spec = TopologySpec::default()
        .processor("source", 1, source)
        .processor("learner", config.partitions, &learner_logic(config))
        .processor(
            "evaluator",
            1,
            &format!("evaluator/{}/{}", config.window, config.report_every),
        )
        .edge("source", "learner", Grouping::Key(KeySpec::RecordId))
        .edge("learner", "evaluator", Grouping::Key(KeySpec::RecordId))
        .source("source");
    Ok(Pipeline::standard(spec, config.schema.clone())?)
}

fn distributed_options(config: &PipelineConfig) -> DistributedOptions {
    DistributedOptions {
        connect_timeout: config.connect_timeout,
        phase_timeout: config.connect_timeout,
        run_timeout: config.run_timeout,
        ..Default::default()
    }
}

fn execute(config: &PipelineConfig, pipeline: &Pipeline, records: Vec<Instance>) -> Result<RunResult, CliError> {
    match config.engine {
        EngineChoice::Local => Ok(run_local(pipeline, records)?),
        EngineChoice::Distributed => {
            let path = config.peers.as_ref().expect("validated with the config");
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("reading `{}`: {e}", path.display())))?;
            let peers = parse_peer_table(&text).map_err(|e| CliError::Config(e.to_string()))?;
            Ok(run_coordinator(
                pipeline,
                &peers,
                records,
                &distributed_options(config),
            )?)
        }
    }
}

/// Everything train-eval writes, as bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainOutputs {
    pub metrics: String,
    pub confusion: String,
    pub summary: String,
    pub model: Vec<u8>,
}

pub fn train_eval_outputs(config: &PipelineConfig, records: Vec<Instance>) -> Result<TrainOutputs, CliError> {
    let pipeline = standard_pipeline(config)?;
    let result = execute(config, &pipeline, records)?;
    let topo = pipeline.topology();
    let evaluator = topo.processor_id("evaluator").expect("standard topology");
    let learner = topo.processor_id("learner").expect("standard topology");

    let report = EvaluatorReport::decode(result.processor_states(evaluator)[0]).map_err(CliError::Runtime)?;
    let learners = result
        .processor_states(learner)
        .into_iter()
        .map(decode_learner)
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Runtime(format!("learner state: {e}")))?;
    let model = encode_model(&config.schema, &learners);

    let d = config.delimiter;
    let mut metrics = MetricsRow::header(d);
    metrics.push('\n');
    for row in &report.rows {
        metrics.push_str(&row.render(d));
        metrics.push('\n');
    }

    let classes = config.schema.class_domain();
    let mut confusion = String::from("actual");
    for c in classes {
        let _ = write!(confusion, "{d}pred_{c}");
    }
    confusion.push('\n');
    for (c, row) in classes.iter().zip(report.confusion.rows()) {
        confusion.push_str(c);
        for n in row {
            let _ = write!(confusion, "{d}{n}");
        }
        confusion.push('\n');
    }

    let m = &report.confusion;
    let mut summary = String::new();
    let _ = writeln!(
        summary,
        "learner={}",
        learner_logic(config).trim_start_matches("learner/")
    );
    let _ = writeln!(summary, "partitions={}", config.partitions);
    let _ = writeln!(summary, "instances={}", m.total());
    let _ = writeln!(
        summary,
        "accuracy={}",
        m.accuracy().map_or(String::new(), |a| format!("{a:.6}"))
    );
    let _ = writeln!(
        summary,
        "kappa={}",
        kappa(m).map_or(String::new(), |k| format!("{k:.6}"))
    );
    let _ = writeln!(summary, "model_fingerprint={:016x}", smdm_core::codec::fnv1a64(&model));

    Ok(TrainOutputs {
        metrics,
        confusion,
        summary,
        model,
    })
}

/// Writes metrics.csv, confusion.csv, summary.txt and model.snap; returns the summary.
pub fn cmd_train_eval(config: &PipelineConfig) -> Result<String, CliError> {
    let records = load_records(config, true)?;
    let out = train_eval_outputs(config, records)?;
    write_output(&config.output, "metrics.csv", &out.metrics)?;
    write_output(&config.output, "confusion.csv", &out.confusion)?;
    write_output(&config.output, "summary.txt", &out.summary)?;
    write_output(&config.output, MODEL_FILE, &out.model)?;
    Ok(out.summary)
}

/// Serves one distributed train-eval run for the pipeline `config` describes.
pub fn cmd_worker(config: &PipelineConfig, id: u16, listen: &str) -> Result<(), CliError> {
    let pipeline = standard_pipeline(config)?;
    let listener = TcpListener::bind(listen).map_err(|e| CliError::Runtime(format!("binding `{listen}`: {e}")))?;
    log::info!("worker {id} listening on {listen}");
    run_worker(&pipeline, id, listener, &distributed_options(config))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn config(pairs: &[(&str, &str)]) -> PipelineConfig {
        let map: BTreeMap<String, String> = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        PipelineConfig::resolve(map).unwrap()
    }

    #[test]
    fn logic_strings() {
        assert_eq!(learner_logic(&config(&[("learner", "nb")])), "learner/nb");
        assert_eq!(
            learner_logic(&config(&[("learner", "ht"), ("ht_grace", "50"), ("ht_delta", "1e-5")])),
            "learner/ht/50/0.00001/0.05"
        );
    }

    #[test]
    fn majority_on_synth_tracks_the_prior() {
        let c = config(&[("learner", "majority"), ("input", "synth"), ("synth_count", "3000")]);
        let records = load_records(&c, true).unwrap();
        let positives = records.iter().filter(|r| r.label == Some(1)).count() as f64 / records.len() as f64;
        let out = train_eval_outputs(&c, records).unwrap();
        let acc: f64 = out
            .summary
            .lines()
            .find_map(|l| l.strip_prefix("accuracy="))
            .unwrap()
            .parse()
            .unwrap();
        assert!(
            (acc - positives.max(1.0 - positives)).abs() < 0.05,
            "{acc} vs {positives}"
        );
        assert!(out.metrics.starts_with("seq;acc_cum;acc_window;kappa\n"));
        assert!(out.confusion.starts_with("actual;pred_no;pred_yes\n"));
    }
}
