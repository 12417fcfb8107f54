use std::fmt::Write as _;

use smdm_core::evaluation::{LiftTable, ScoredRecord, TargetingReport};
use smdm_core::learners::{decode_model, Classifier, Learner};
use smdm_core::Instance;

use crate::config::PipelineConfig;
use crate::train::MODEL_FILE;
use crate::{load_records, normalize_all, write_output, CliError};

/// Mean positive-class probability over the model's partitions.
pub fn score(models: &[Learner], instance: &Instance, positive: usize) -> Result<f64, CliError> {
    let query = instance.unlabeled();
    let mut total = 0.0;
    for m in models {
        let dist = m.predict(&query).map_err(|e| CliError::Data(e.to_string()))?;
        total += dist.get(positive).copied().unwrap_or(0.0);
    }
    Ok((total / models.len() as f64).clamp(0.0, 1.0))
}

/// Scores records in input order; ids are 0-based positions.
pub fn score_records(models: &[Learner], records: &[Instance], positive: usize) -> Result<Vec<ScoredRecord>, CliError> {
    let labeled = records.iter().all(|r| r.label.is_some());
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let s = score(models, r, positive)?;
            Ok(match r.label {
                Some(l) if labeled => ScoredRecord::labeled(i as u64, s, l as usize == positive),
                _ => ScoredRecord::new(i as u64, s),
            })
        })
        .collect()
}

/// `bucket;count;positives;rate;lift` with a header row.
pub fn render_lift(lift: &LiftTable, delimiter: char) -> String {
    let d = delimiter;
    let mut out = format!("bucket{d}count{d}positives{d}rate{d}lift\n");
    for (i, b) in lift.deciles.iter().enumerate() {
        let _ = writeln!(
            out,
            "{}{d}{}{d}{}{d}{:.6}{d}{:.6}",
            i + 1,
            b.count,
            b.positives,
            b.response_rate,
            b.lift
        );
    }
    out
}

pub fn render_summary(report: &TargetingReport) -> String {
    let sel = &report.selection;
    let mut out = String::new();
    let _ = writeln!(out, "records={}", sel.ranked.len());
    let _ = writeln!(out, "fraction={}", sel.fraction);
    let _ = writeln!(out, "selected={}", sel.selected);
    if let Some(lift) = &report.lift {
        let top = lift.deciles.first().map_or(String::new(), |d| format!("{:.6}", d.lift));
        let _ = writeln!(out, "top_bucket_lift={top}");
    }
    out
}

/// Writes ranking.csv, lift.csv (when the input is labeled) and target_summary.txt.
pub fn cmd_target(config: &PipelineConfig) -> Result<String, CliError> {
    let model_path = config.model.clone().unwrap_or_else(|| config.output.join(MODEL_FILE));
    let bytes = std::fs::read(&model_path)
        .map_err(|e| CliError::Config(format!("reading model `{}`: {e}", model_path.display())))?;
    let models =
        decode_model(&bytes, &config.schema).map_err(|e| CliError::Data(format!("`{}`: {e}", model_path.display())))?;
    if models.is_empty() {
        return Err(CliError::Data("model has no partitions".into()));
    }
    let records = normalize_all(load_records(config, false)?, &config.schema)?;
    if records.is_empty() {
        return Err(CliError::Data("no records to score".into()));
    }
    let scored = score_records(&models, &records, config.positive_class())?;
    let report =
        TargetingReport::build(&scored, config.fraction, config.buckets).map_err(|e| CliError::Data(e.to_string()))?;
    write_output(&config.output, "ranking.csv", report.render_ranking(config.delimiter))?;
    if let Some(lift) = &report.lift {
        write_output(&config.output, "lift.csv", render_lift(lift, config.delimiter))?;
    }
    let summary = render_summary(&report);
    write_output(&config.output, "target_summary.txt", &summary)?;
    Ok(summary)
}
