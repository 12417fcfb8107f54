use std::fmt::Write as _;

use smdm_core::schema::format_number;
use smdm_core::{AttributeSpec, Cell, DatasetSchema, Instance};

use crate::config::PipelineConfig;
use crate::{load_records, write_output, CliError};

pub const HEADER: [&str; 9] = [
    "attribute",
    "kind",
    "count",
    "missing",
    "min",
    "max",
    "mean",
    "stddev",
    "categories",
];

/// Summary of one attribute over all records.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeSummary {
    pub name: String,
    pub kind: &'static str,
    pub count: u64,
    pub missing: u64,
    pub numeric: Option<NumericSummary>,
    pub categories: Vec<(String, u64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NumericSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Sample standard deviation; 0 below two values.
    pub stddev: f64,
}

fn summarize_numeric(values: &[f64]) -> Option<NumericSummary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let stddev = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Some(NumericSummary {
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean,
        stddev,
    })
}

fn summarize(attr: &AttributeSpec, kind: &'static str, cells: impl Iterator<Item = Cell>) -> AttributeSummary {
    let mut missing = 0;
    let mut numbers = Vec::new();
    let mut counts = vec![0u64; attr.domain.len()];
    for cell in cells {
        match cell {
            Cell::Missing => missing += 1,
            Cell::Numeric(v) => numbers.push(v),
            Cell::Categorical(c) => counts[c as usize] += 1,
        }
    }
    let count = numbers.len() as u64 + counts.iter().sum::<u64>();
    AttributeSummary {
        name: attr.name.clone(),
        kind,
        count,
        missing,
        numeric: summarize_numeric(&numbers),
        categories: attr.domain.iter().cloned().zip(counts).collect(),
    }
}

pub fn describe_records(records: &[Instance], schema: &DatasetSchema) -> Vec<AttributeSummary> {
    let mut feature = 0;
    schema
        .attributes
        .iter()
        .enumerate()
        .map(|(i, attr)| {
            if i == schema.class_index {
                let labels = records.iter().map(|r| r.label.map_or(Cell::Missing, Cell::Categorical));
                return summarize(attr, "class", labels);
            }
            let f = feature;
            feature += 1;
            let kind = if attr.is_numeric() { "numeric" } else { "categorical" };
            summarize(attr, kind, records.iter().map(|r| r.values[f]))
        })
        .collect()
}

pub fn render_report(rows: &[AttributeSummary], delimiter: char) -> String {
    let d = delimiter;
    let mut out = HEADER.join(&d.to_string());
    out.push('\n');
    for row in rows {
        let (min, max, mean, stddev) = match row.numeric {
            Some(s) => (
                format_number(s.min),
                format_number(s.max),
                format!("{:.6}", s.mean),
                format!("{:.6}", s.stddev),
            ),
            None => Default::default(),
        };
        let categories = row
            .categories
            .iter()
            .map(|(c, n)| format!("{c}={n}"))
            .collect::<Vec<_>>()
            .join("|");
        let _ = writeln!(
            out,
            "{}{d}{}{d}{}{d}{}{d}{min}{d}{max}{d}{mean}{d}{stddev}{d}{categories}",
            row.name, row.kind, row.count, row.missing
        );
    }
    out
}

/// Writes `describe.csv` under the output directory and returns its contents.
pub fn cmd_describe(config: &PipelineConfig) -> Result<String, CliError> {
    let records = load_records(config, false)?;
    let report = render_report(&describe_records(&records, &config.schema), config.delimiter);
    write_output(&config.output, "describe.csv", &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use smdm_core::schema::parse_schema;

    #[test]
    fn numeric_summary() {
        let s = summarize_numeric(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]).unwrap();
        assert_eq!((s.min, s.max, s.mean), (2.0, 9.0, 5.0));
        assert!((s.stddev - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert_eq!(summarize_numeric(&[3.0]).unwrap().stddev, 0.0);
        assert!(summarize_numeric(&[]).is_none());
    }

    #[test]
    fn class_row_and_missing() {
        let schema = parse_schema("x numeric\nc categorical {a,b}\ny class {no,yes}").unwrap();
        let records = vec![
            Instance::new(vec![Cell::Numeric(1.0), Cell::Categorical(1)], Some(1)),
            Instance::new(vec![Cell::Missing, Cell::Categorical(1)], Some(0)),
        ];
        let rows = describe_records(&records, &schema);
        assert_eq!(rows.len(), 3);
        assert_eq!((rows[0].count, rows[0].missing), (1, 1));
        assert_eq!(rows[1].categories, vec![("a".into(), 0), ("b".into(), 2)]);
        assert_eq!(rows[2].kind, "class");
        let text = render_report(&rows, ';');
        assert_eq!(text.lines().nth(2).unwrap(), "c;categorical;2;0;;;;;a=0|b=2");
        assert_eq!(text.lines().nth(1).unwrap(), "x;numeric;1;1;1;1;1.000000;0.000000;");
    }
}
