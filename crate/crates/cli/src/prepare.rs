use smdm_core::rfm::bank_rfm_proxy;
use smdm_core::schema::{normalize_pdays, render_record};
use smdm_core::{AttributeSpec, Cell, DatasetSchema, Instance};

use crate::config::PipelineConfig;
use crate::{has_pdays, load_records, write_output, CliError};

pub const MARKER: &str = "never_contacted";
pub const RFM_COLUMNS: [&str; 3] = ["rfm_r", "rfm_f", "rfm_m"];

/// Input schema with the marker (and optionally RFM) columns added before the class.
pub fn extended_schema(schema: &DatasetSchema, rfm: bool) -> Result<DatasetSchema, CliError> {
    let mut extra = vec![MARKER];
    if rfm {
        extra.extend(RFM_COLUMNS);
    }
    let class = schema.class_attribute().clone();
    let mut attributes: Vec<AttributeSpec> = schema.features().cloned().collect();
    for name in extra {
        match attributes.iter().find(|a| a.name == name) {
            Some(a) if a.is_numeric() => {}
            Some(_) => return Err(CliError::Data(format!("column `{name}` exists but is not numeric"))),
            None => attributes.push(AttributeSpec::numeric(name)),
        }
    }
    attributes.push(class);
    let class_index = attributes.len() - 1;
    let mut out =
        DatasetSchema::new(schema.name.clone(), attributes, class_index).map_err(|e| CliError::Data(e.to_string()))?;
    out.declared_instance_count = schema.declared_instance_count;
    out.declared_attribute_count = schema.declared_attribute_count;
    Ok(out)
}

/// Normalizes one record and fills the derived columns of `extended`.
pub fn prepare_record(
    instance: Instance,
    schema: &DatasetSchema,
    extended: &DatasetSchema,
    rfm: bool,
) -> Result<Instance, CliError> {
    let data = |e: &dyn std::fmt::Display| CliError::Data(e.to_string());
    let instance = if has_pdays(schema) {
        normalize_pdays(instance, schema).map_err(|e| data(&e))?
    } else {
        instance
    };
    let mut values = instance.values.clone();
    values.resize(extended.feature_count(), Cell::Missing);
    let mut out = Instance::new(values, instance.label);
    out.flags = instance.flags;

    let marker = extended.feature_index(MARKER).expect("marker column");
    let already = out.values[marker].as_numeric() == Some(1.0);
    out.values[marker] = Cell::Numeric(if instance.never_contacted() || already {
        1.0
    } else {
        0.0
    });

    if rfm {
        let proxy = bank_rfm_proxy(&instance, schema).map_err(|e| data(&e))?;
        let cells = [
            proxy.recency.map(|r| r as f64),
            Some(proxy.frequency as f64),
            proxy.monetary,
        ];
        for (name, v) in RFM_COLUMNS.iter().zip(cells) {
            let idx = extended.feature_index(name).expect("rfm column");
            out.values[idx] = v.map_or(Cell::Missing, Cell::Numeric);
        }
    }
    Ok(out)
}

/// Output of [`cmd_prepare`]: the records file and its schema, both as text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prepared {
    pub records: String,
    pub schema: String,
}

/// Writes `prepared.csv` and `prepared.schema` under the output directory.
pub fn cmd_prepare(config: &PipelineConfig) -> Result<Prepared, CliError> {
    let schema = &config.schema;
    let extended = extended_schema(schema, config.rfm)?;
    let d = config.delimiter;
    let mut records = extended
        .attributes
        .iter()
        .map(|a| a.name.as_str())
        .collect::<Vec<_>>()
        .join(&d.to_string());
    records.push('\n');
    for inst in load_records(config, false)? {
        let prepared = prepare_record(inst, schema, &extended, config.rfm)?;
        records.push_str(&render_record(&prepared, &extended, d));
        records.push('\n');
    }
    let out = Prepared {
        records,
        schema: extended.to_text(),
    };
    write_output(&config.output, "prepared.csv", &out.records)?;
    write_output(&config.output, "prepared.schema", &out.schema)?;
    Ok(out)
}
