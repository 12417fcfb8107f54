//! Dataset schemas, record parsing and sentinel normalization.
//!
//! An [`Instance`] keeps the class attribute split out as `label`, so
//! `values` holds one [`Cell`] per *feature* attribute (every attribute
//! except the class) in schema order.

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

use crate::codec::fnv1a64;

pub const DEFAULT_DELIMITER: char = ';';
const UNKNOWN_TOKEN: &str = "unknown";
const PDAYS: &str = "pdays";
const NEVER_CONTACTED_SENTINEL: f64 = 999.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("duplicate attribute `{0}`")]
    DuplicateAttribute(String),
    #[error("attribute `{0}` has an empty category domain")]
    EmptyDomain(String),
    #[error("schema declares no categorical class attribute")]
    MissingClassDeclaration,
    #[error("malformed schema line {0}")]
    MalformedLine(usize),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("expected {expected} fields, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("unknown category `{token}` for attribute `{attribute}`")]
    UnknownCategory { attribute: String, token: String },
    #[error("cannot parse `{token}` as a number for attribute `{attribute}`")]
    UnparseableNumeric { attribute: String, token: String },
    #[error("no attribute named `{0}`")]
    NoSuchAttribute(String),
    #[error("instance does not conform to schema: {0}")]
    SchemaMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttributeKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeSpec {
    pub name: String,
    pub kind: AttributeKind,
    /// Ordered category list; empty for numeric attributes.
    pub domain: Vec<String>,
    pub unit_note: String,
}

impl AttributeSpec {
    pub fn numeric(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: AttributeKind::Numeric,
            domain: Vec::new(),
            unit_note: String::new(),
        }
    }

    pub fn categorical<S: AsRef<str>>(name: impl Into<String>, domain: &[S]) -> Self {
        Self {
            name: name.into(),
            kind: AttributeKind::Categorical,
            domain: domain.iter().map(|s| s.as_ref().to_string()).collect(),
            unit_note: String::new(),
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.unit_note = note.into();
        self
    }

    pub fn is_numeric(&self) -> bool {
        self.kind == AttributeKind::Numeric
    }

    pub fn category_index(&self, token: &str) -> Option<u16> {
        self.domain.iter().position(|c| c == token).map(|i| i as u16)
    }

    fn validate(&self) -> Result<(), IngestError> {
        if self.name.is_empty() {
            return Err(IngestError::InvalidSchema("empty attribute name".into()));
        }
        match self.kind {
            AttributeKind::Numeric if !self.domain.is_empty() => Err(IngestError::InvalidSchema(format!(
                "numeric attribute `{}` carries a domain",
                self.name
            ))),
            AttributeKind::Categorical => {
                if self.domain.is_empty() || self.domain.iter().any(String::is_empty) {
                    return Err(IngestError::EmptyDomain(self.name.clone()));
                }
                if self.domain.len() >= u16::MAX as usize {
                    return Err(IngestError::InvalidSchema(format!(
                        "domain of `{}` too large",
                        self.name
                    )));
                }
                let unique: HashSet<&String> = self.domain.iter().collect();
                if unique.len() != self.domain.len() {
                    return Err(IngestError::InvalidSchema(format!(
                        "duplicate category in `{}`",
                        self.name
                    )));
                }
                Ok(())
            }
            AttributeKind::Numeric => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSchema {
    pub name: String,
    pub attributes: Vec<AttributeSpec>,
    pub class_index: usize,
    /// Instance count as published for the dataset. Never used for validation.
    pub declared_instance_count: Option<u64>,
    /// Attribute count as published for the dataset. Never used for validation.
    pub declared_attribute_count: Option<u64>,
}

impl DatasetSchema {
    pub fn new(
        name: impl Into<String>,
        attributes: Vec<AttributeSpec>,
        class_index: usize,
    ) -> Result<Self, IngestError> {
        let schema = Self {
            name: name.into(),
            attributes,
            class_index,
            declared_instance_count: None,
            declared_attribute_count: None,
        };
        schema.validate()?;
        Ok(schema)
    }

    fn validate(&self) -> Result<(), IngestError> {
        let mut seen = HashSet::new();
        for attr in &self.attributes {
            attr.validate()?;
            if !seen.insert(attr.name.as_str()) {
                return Err(IngestError::DuplicateAttribute(attr.name.clone()));
            }
        }
        match self.attributes.get(self.class_index) {
            Some(a) if a.kind == AttributeKind::Categorical => Ok(()),
            _ => Err(IngestError::MissingClassDeclaration),
        }
    }

    pub fn attribute_count(&self) -> usize {
        self.attributes.len()
    }

    /// Number of cells in an [`Instance`] (all attributes but the class).
    pub fn feature_count(&self) -> usize {
        self.attributes.len() - 1
    }

    pub fn class_attribute(&self) -> &AttributeSpec {
        &self.attributes[self.class_index]
    }

    pub fn class_domain(&self) -> &[String] {
        &self.class_attribute().domain
    }

    pub fn num_classes(&self) -> usize {
        self.class_domain().len()
    }

    /// Feature attributes in instance-cell order.
    pub fn features(&self) -> impl Iterator<Item = &AttributeSpec> + '_ {
        self.attributes
            .iter()
            .enumerate()
            .filter(move |(i, _)| *i != self.class_index)
            .map(|(_, a)| a)
    }

    pub fn feature(&self, cell: usize) -> &AttributeSpec {
        let idx = if cell >= self.class_index { cell + 1 } else { cell };
        &self.attributes[idx]
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    /// Position of a feature attribute inside [`Instance::values`].
    pub fn feature_index(&self, name: &str) -> Option<usize> {
        let idx = self.attribute_index(name)?;
        match idx.cmp(&self.class_index) {
            std::cmp::Ordering::Less => Some(idx),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => Some(idx - 1),
        }
    }

    /// Renders the schema in the line-oriented schema-definition format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, attr) in self.attributes.iter().enumerate() {
            out.push_str(&attr.name);
            if i == self.class_index {
                out.push_str(" class {");
                out.push_str(&attr.domain.join(","));
                out.push('}');
            } else if attr.is_numeric() {
                out.push_str(" numeric");
            } else {
                out.push_str(" categorical {");
                out.push_str(&attr.domain.join(","));
                out.push('}');
            }
            out.push('\n');
        }
        out
    }

    /// FNV-1a over [`Self::to_text`]; used to detect mismatched deployments.
    pub fn fingerprint(&self) -> u64 {
        fnv1a64(self.to_text().as_bytes())
    }

    /// Checks that an instance has the right arity, cell kinds and index ranges.
    pub fn check_instance(&self, instance: &Instance) -> Result<(), IngestError> {
        if instance.values.len() != self.feature_count() {
            return Err(IngestError::SchemaMismatch(format!(
                "expected {} cells, got {}",
                self.feature_count(),
                instance.values.len()
            )));
        }
        for (i, (cell, attr)) in instance.values.iter().zip(self.features()).enumerate() {
            match (cell, attr.kind) {
                (Cell::Missing, _) | (Cell::Numeric(_), AttributeKind::Numeric) => {}
                (Cell::Categorical(c), AttributeKind::Categorical) if (*c as usize) < attr.domain.len() => {}
                _ => {
                    return Err(IngestError::SchemaMismatch(format!(
                        "cell {i} ({}) holds {cell:?}",
                        attr.name
                    )))
                }
            }
        }
        if let Some(label) = instance.label {
            if label as usize >= self.num_classes() {
                return Err(IngestError::SchemaMismatch(format!("label index {label} out of range")));
            }
        }
        Ok(())
    }
}

/// The Bank Marketing schema: 20 customer and campaign attributes plus the
/// subscription class `y`.
pub fn builtin_bank_marketing_schema() -> DatasetSchema {
    const YES_NO_UNKNOWN: [&str; 3] = ["no", "yes", "unknown"];
    let attributes = vec![
        AttributeSpec::numeric("age").with_note("years"),
        AttributeSpec::categorical(
            "job",
            &[
                "admin.",
                "blue-collar",
                "entrepreneur",
                "housemaid",
                "management",
                "retired",
                "self-employed",
                "services",
                "student",
                "technician",
                "unemployed",
                "unknown",
            ],
        ),
        AttributeSpec::categorical("marital", &["divorced", "married", "single", "unknown"])
            .with_note("'divorced' means divorced or widowed"),
        AttributeSpec::categorical(
            "education",
            &[
                "basic.4y",
                "basic.6y",
                "basic.9y",
                "high.school",
                "illiterate",
                "professional.course",
                "university.degree",
                "unknown",
            ],
        ),
        AttributeSpec::categorical("default", &YES_NO_UNKNOWN).with_note("has credit in default"),
        AttributeSpec::categorical("housing", &YES_NO_UNKNOWN).with_note("has housing loan"),
        AttributeSpec::categorical("loan", &YES_NO_UNKNOWN).with_note("has personal loan"),
        AttributeSpec::categorical("contact", &["cellular", "telephone"]),
        AttributeSpec::categorical(
            "month",
            &[
                "jan", "feb", "mar", "apr", "may", "jun", "jul", "aug", "sep", "oct", "nov", "dec",
            ],
        )
        .with_note("month of last contact"),
        AttributeSpec::categorical("day_of_week", &["mon", "tue", "wed", "thu", "fri"]),
        AttributeSpec::numeric("duration").with_note("seconds"),
        AttributeSpec::numeric("campaign").with_note("contacts during this campaign, last included"),
        AttributeSpec::numeric("pdays").with_note("days; 999 means never contacted"),
        AttributeSpec::numeric("previous").with_note("contacts before this campaign"),
        AttributeSpec::categorical("poutcome", &["failure", "nonexistent", "success"]),
        AttributeSpec::numeric("emp.var.rate").with_note("quarterly"),
        AttributeSpec::numeric("cons.price.idx").with_note("monthly"),
        AttributeSpec::numeric("cons.conf.idx").with_note("monthly"),
        AttributeSpec::numeric("euribor3m").with_note("daily"),
        AttributeSpec::numeric("nr.employed").with_note("quarterly"),
        AttributeSpec::categorical("y", &["no", "yes"]).with_note("subscribed a term deposit"),
    ];
    let mut schema = DatasetSchema::new("bank-marketing", attributes, 20).expect("built-in schema is valid");
    schema.declared_instance_count = Some(45111);
    schema.declared_attribute_count = Some(11);
    schema
}

/// Parses a schema-definition document.
///
/// One attribute per line: `<name> numeric`, `<name> categorical {a,b}` or
/// `<name> class {a,b}`. Blank lines and lines starting with `#` are skipped.
pub fn parse_schema(text: &str) -> Result<DatasetSchema, IngestError> {
    let mut attributes: Vec<AttributeSpec> = Vec::new();
    let mut class_index = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (name, rest) = line
            .split_once(char::is_whitespace)
            .ok_or(IngestError::MalformedLine(line_no))?;
        let rest = rest.trim_start();
        let (keyword, tail) = match rest.split_once(|c: char| c.is_whitespace() || c == '{') {
            Some((kw, _)) => (kw, rest[kw.len()..].trim()),
            None => (rest, ""),
        };
        if attributes.iter().any(|a| a.name == name) {
            return Err(IngestError::DuplicateAttribute(name.to_string()));
        }
        let attr = match keyword {
            "numeric" if tail.is_empty() => AttributeSpec::numeric(name),
            "categorical" => AttributeSpec::categorical(name, &parse_domain(name, tail, line_no)?),
            "class" => {
                if !tail.starts_with('{') {
                    return Err(IngestError::MissingClassDeclaration);
                }
                if class_index.is_some() {
                    return Err(IngestError::MalformedLine(line_no));
                }
                class_index = Some(attributes.len());
                AttributeSpec::categorical(name, &parse_domain(name, tail, line_no)?)
            }
            _ => return Err(IngestError::MalformedLine(line_no)),
        };
        attr.validate().map_err(|e| match e {
            IngestError::InvalidSchema(_) => IngestError::MalformedLine(line_no),
            other => other,
        })?;
        attributes.push(attr);
    }
    let class_index = class_index.ok_or(IngestError::MissingClassDeclaration)?;
    DatasetSchema::new("custom", attributes, class_index)
}

fn parse_domain(name: &str, tail: &str, line_no: usize) -> Result<Vec<String>, IngestError> {
    let inner = tail
        .strip_prefix('{')
        .and_then(|t| t.strip_suffix('}'))
        .ok_or(IngestError::MalformedLine(line_no))?;
    if inner.trim().is_empty() {
        return Err(IngestError::EmptyDomain(name.to_string()));
    }
    let values: Vec<String> = inner.split(',').map(|v| v.trim().to_string()).collect();
    if values.iter().any(String::is_empty) {
        return Err(IngestError::EmptyDomain(name.to_string()));
    }
    Ok(values)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Numeric(f64),
    /// Index into the attribute's domain.
    Categorical(u16),
    Missing,
}

impl Cell {
    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }

    pub fn as_numeric(&self) -> Option<f64> {
        match self {
            Cell::Numeric(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_category(&self) -> Option<u16> {
        match self {
            Cell::Categorical(c) => Some(*c),
            _ => None,
        }
    }
}

/// Normalization markers attached to an instance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Flags(u8);

impl Flags {
    pub const NEVER_CONTACTED: Flags = Flags(0b0000_0001);
    const KNOWN: u8 = 0b0000_0001;

    pub fn empty() -> Self {
        Self(0)
    }

    pub fn from_bits(bits: u8) -> Option<Self> {
        (bits & !Self::KNOWN == 0).then_some(Self(bits))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn contains(self, other: Flags) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn insert(&mut self, other: Flags) {
        self.0 |= other.0;
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

/// One customer record.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub values: Vec<Cell>,
    pub label: Option<u16>,
    pub flags: Flags,
}

impl Instance {
    pub fn new(values: Vec<Cell>, label: Option<u16>) -> Self {
        Self {
            values,
            label,
            flags: Flags::empty(),
        }
    }

    pub fn unlabeled(&self) -> Instance {
        Instance {
            values: self.values.clone(),
            label: None,
            flags: self.flags,
        }
    }

    pub fn never_contacted(&self) -> bool {
        self.flags.contains(Flags::NEVER_CONTACTED)
    }
}

/// Splits on `delimiter` outside double quotes and strips surrounding quotes.
pub fn split_fields(line: &str, delimiter: char) -> Vec<String> {
    let mut fields = Vec::new();
    let mut current = String::new();
    let mut in_quotes = false;
    for ch in line.chars() {
        if ch == '"' {
            in_quotes = !in_quotes;
            current.push(ch);
        } else if ch == delimiter && !in_quotes {
            fields.push(unquote(&current));
            current.clear();
        } else {
            current.push(ch);
        }
    }
    fields.push(unquote(&current));
    fields
}

fn unquote(field: &str) -> String {
    let t = field.trim();
    t.strip_prefix('"')
        .and_then(|s| s.strip_suffix('"'))
        .unwrap_or(t)
        .to_string()
}

/// True when the line's fields are exactly the schema's attribute names.
pub fn is_header_line(line: &str, schema: &DatasetSchema, delimiter: char) -> bool {
    let fields = split_fields(line, delimiter);
    fields.len() == schema.attribute_count() && fields.iter().zip(&schema.attributes).all(|(f, a)| f == &a.name)
}

fn parse_cell(token: &str, attr: &AttributeSpec) -> Result<Cell, IngestError> {
    if token.is_empty() {
        return Ok(Cell::Missing);
    }
    match attr.kind {
        AttributeKind::Numeric => {
            if token == UNKNOWN_TOKEN {
                return Ok(Cell::Missing);
            }
            match token.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(Cell::Numeric(v)),
                _ => Err(IngestError::UnparseableNumeric {
                    attribute: attr.name.clone(),
                    token: token.to_string(),
                }),
            }
        }
        AttributeKind::Categorical => match attr.category_index(token) {
            Some(idx) => Ok(Cell::Categorical(idx)),
            None if token == UNKNOWN_TOKEN => Ok(Cell::Missing),
            None => Err(IngestError::UnknownCategory {
                attribute: attr.name.clone(),
                token: token.to_string(),
            }),
        },
    }
}

/// Parses one delimited record, including its class field.
pub fn parse_record(line: &str, schema: &DatasetSchema, delimiter: char) -> Result<Instance, IngestError> {
    let fields = split_fields(line, delimiter);
    if fields.len() != schema.attribute_count() {
        return Err(IngestError::ArityMismatch {
            expected: schema.attribute_count(),
            got: fields.len(),
        });
    }
    let mut values = Vec::with_capacity(schema.feature_count());
    let mut label = None;
    for (i, (token, attr)) in fields.iter().zip(&schema.attributes).enumerate() {
        let cell = parse_cell(token, attr)?;
        if i == schema.class_index {
            label = cell.as_category();
        } else {
            values.push(cell);
        }
    }
    Ok(Instance::new(values, label))
}

/// Renders an instance back into a delimited record that [`parse_record`] accepts.
pub fn render_record(instance: &Instance, schema: &DatasetSchema, delimiter: char) -> String {
    let mut out = String::new();
    let mut cells = instance.values.iter();
    for (i, attr) in schema.attributes.iter().enumerate() {
        if i > 0 {
            out.push(delimiter);
        }
        let cell = if i == schema.class_index {
            instance.label.map_or(Cell::Missing, Cell::Categorical)
        } else {
            cells.next().copied().unwrap_or(Cell::Missing)
        };
        match cell {
            Cell::Numeric(v) => out.push_str(&format_number(v)),
            Cell::Categorical(c) => {
                out.push('"');
                out.push_str(&attr.domain[c as usize]);
                out.push('"');
            }
            Cell::Missing => {}
        }
    }
    out
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_number(v: f64) -> String {
    format!("{v}")
}

/// Replaces the `pdays = 999` sentinel with a missing cell and marks the
/// instance as never contacted.
pub fn normalize_pdays(instance: Instance, schema: &DatasetSchema) -> Result<Instance, IngestError> {
    let idx = schema
        .feature_index(PDAYS)
        .filter(|&i| schema.feature(i).is_numeric())
        .ok_or_else(|| IngestError::NoSuchAttribute(PDAYS.to_string()))?;
    let mut instance = instance;
    if let Some(Cell::Numeric(v)) = instance.values.get(idx) {
        if *v == NEVER_CONTACTED_SENTINEL {
            instance.values[idx] = Cell::Missing;
            instance.flags.insert(Flags::NEVER_CONTACTED);
        }
    }
    Ok(instance)
}

impl fmt::Display for AttributeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttributeKind::Numeric => f.write_str("numeric"),
            AttributeKind::Categorical => f.write_str("categorical"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"56;"housemaid";"married";"basic.4y";"no";"no";"no";"telephone";"may";"mon";261;1;999;0;"nonexistent";1.1;93.994;-36.4;4.857;5191.0;"no""#;

    #[test]
    fn bank_schema_shape() {
        let s = builtin_bank_marketing_schema();
        assert_eq!(s.attribute_count(), 21);
        assert_eq!(s.attributes[2].name, "marital");
        assert_eq!(s.attributes[2].domain, vec!["divorced", "married", "single", "unknown"]);
        assert_eq!(s.attributes[12].name, "pdays");
        assert!(s.attributes[12].is_numeric());
        assert_eq!(s.class_domain(), &["no".to_string(), "yes".to_string()]);
        assert_eq!(s.class_attribute().name, "y");
        let numeric = s.attributes.iter().filter(|a| a.is_numeric()).count();
        assert_eq!(numeric, 10);
        assert_eq!(s.declared_instance_count, Some(45111));
        assert_eq!(s.declared_attribute_count, Some(11));
    }

    #[test]
    fn parses_sample_record() {
        let s = builtin_bank_marketing_schema();
        let inst = parse_record(SAMPLE, &s, ';').unwrap();
        assert_eq!(inst.values.len(), 20);
        assert_eq!(inst.values[0], Cell::Numeric(56.0));
        assert_eq!(inst.values[1], Cell::Categorical(3)); // housemaid
        assert_eq!(inst.values[2], Cell::Categorical(1)); // married
        assert_eq!(inst.values[3], Cell::Categorical(0)); // basic.4y
        assert_eq!(inst.values[7], Cell::Categorical(1)); // telephone
        assert_eq!(inst.values[8], Cell::Categorical(4)); // may
        assert_eq!(inst.values[10], Cell::Numeric(261.0));
        assert_eq!(inst.values[12], Cell::Numeric(999.0));
        assert_eq!(inst.values[14], Cell::Categorical(1)); // nonexistent
        assert_eq!(inst.values[17], Cell::Numeric(-36.4));
        assert_eq!(inst.values[19], Cell::Numeric(5191.0));
        assert_eq!(inst.label, Some(0));
        assert!(inst.flags.is_empty());
    }

    #[test]
    fn arity_mismatch() {
        let s = builtin_bank_marketing_schema();
        let short = SAMPLE.rsplit_once(';').unwrap().0;
        assert_eq!(
            parse_record(short, &s, ';'),
            Err(IngestError::ArityMismatch { expected: 21, got: 20 })
        );
    }

    #[test]
    fn unknown_month_rejected() {
        let s = builtin_bank_marketing_schema();
        let bad = SAMPLE.replace("\"may\"", "\"mars\"");
        assert_eq!(
            parse_record(&bad, &s, ';'),
            Err(IngestError::UnknownCategory {
                attribute: "month".into(),
                token: "mars".into()
            })
        );
    }

    #[test]
    fn unparseable_numeric() {
        let s = builtin_bank_marketing_schema();
        let bad = SAMPLE.replacen("56;", "fifty;", 1);
        assert!(matches!(
            parse_record(&bad, &s, ';'),
            Err(IngestError::UnparseableNumeric { attribute, .. }) if attribute == "age"
        ));
    }

    #[test]
    fn unknown_token_is_category_or_missing() {
        let s = builtin_bank_marketing_schema();
        // 'unknown' is in the job domain; contact has no 'unknown' category.
        let line = SAMPLE
            .replace("\"housemaid\"", "\"unknown\"")
            .replace("\"telephone\"", "unknown");
        let inst = parse_record(&line, &s, ';').unwrap();
        assert_eq!(inst.values[1], Cell::Categorical(11));
        assert_eq!(inst.values[7], Cell::Missing);
    }

    #[test]
    fn empty_field_is_missing() {
        let s = builtin_bank_marketing_schema();
        let line = SAMPLE.replacen("56;", ";", 1);
        let inst = parse_record(&line, &s, ';').unwrap();
        assert_eq!(inst.values[0], Cell::Missing);
    }

    #[test]
    fn render_then_parse_roundtrips() {
        let s = builtin_bank_marketing_schema();
        let inst = parse_record(SAMPLE, &s, ';').unwrap();
        let text = render_record(&inst, &s, ',');
        assert_eq!(parse_record(&text, &s, ',').unwrap(), inst);
    }

    #[test]
    fn header_detection() {
        let s = builtin_bank_marketing_schema();
        let header: Vec<String> = s.attributes.iter().map(|a| format!("\"{}\"", a.name)).collect();
        assert!(is_header_line(&header.join(";"), &s, ';'));
        assert!(!is_header_line(SAMPLE, &s, ';'));
    }

    #[test]
    fn minimal_schema_document() {
        let s = parse_schema("x numeric\ny class {no,yes}\n").unwrap();
        assert_eq!(s.class_index, 1);
        assert_eq!(s.attributes[0].kind, AttributeKind::Numeric);
        assert_eq!(s.class_domain(), &["no".to_string(), "yes".to_string()]);
    }

    #[test]
    fn schema_errors() {
        assert_eq!(
            parse_schema("age numeric\nage numeric\ny class {a,b}"),
            Err(IngestError::DuplicateAttribute("age".into()))
        );
        assert_eq!(
            parse_schema("x numeric\ny class numeric"),
            Err(IngestError::MissingClassDeclaration)
        );
        assert_eq!(
            parse_schema("x numeric\nc categorical {a,b}"),
            Err(IngestError::MissingClassDeclaration)
        );
        assert_eq!(
            parse_schema("x categorical {}\ny class {a,b}"),
            Err(IngestError::EmptyDomain("x".into()))
        );
        assert_eq!(
            parse_schema("# comment\nx numerical\ny class {a,b}"),
            Err(IngestError::MalformedLine(2))
        );
        assert_eq!(parse_schema("x\ny class {a,b}"), Err(IngestError::MalformedLine(1)));
        assert_eq!(
            parse_schema("x categorical {a,a}\ny class {a,b}"),
            Err(IngestError::MalformedLine(1))
        );
    }

    #[test]
    fn schema_text_roundtrip() {
        let s = builtin_bank_marketing_schema();
        let parsed = parse_schema(&s.to_text()).unwrap();
        assert_eq!(parsed.attributes.len(), 21);
        for (a, b) in parsed.attributes.iter().zip(&s.attributes) {
            assert_eq!((&a.name, a.kind, &a.domain), (&b.name, b.kind, &b.domain));
        }
        assert_eq!(parsed.fingerprint(), s.fingerprint());
    }

    #[test]
    fn pdays_sentinel() {
        let s = builtin_bank_marketing_schema();
        let inst = parse_record(SAMPLE, &s, ';').unwrap();
        let norm = normalize_pdays(inst.clone(), &s).unwrap();
        assert_eq!(norm.values[12], Cell::Missing);
        assert!(norm.never_contacted());
        assert_eq!(normalize_pdays(norm.clone(), &s).unwrap(), norm);

        let mut contacted = inst.clone();
        contacted.values[12] = Cell::Numeric(3.0);
        assert_eq!(normalize_pdays(contacted.clone(), &s).unwrap(), contacted);

        let mut missing = inst;
        missing.values[12] = Cell::Missing;
        let out = normalize_pdays(missing.clone(), &s).unwrap();
        assert_eq!(out, missing);
        assert!(!out.never_contacted());
    }

    #[test]
    fn pdays_absent() {
        let s = parse_schema("x numeric\ny class {a,b}").unwrap();
        let inst = Instance::new(vec![Cell::Numeric(999.0)], Some(0));
        assert_eq!(
            normalize_pdays(inst, &s),
            Err(IngestError::NoSuchAttribute("pdays".into()))
        );
    }

    #[test]
    fn check_instance_catches_bad_cells() {
        let s = parse_schema("x numeric\nc categorical {a,b}\ny class {n,p}").unwrap();
        let ok = Instance::new(vec![Cell::Numeric(1.0), Cell::Categorical(1)], Some(1));
        assert!(s.check_instance(&ok).is_ok());
        let bad = Instance::new(vec![Cell::Numeric(1.0), Cell::Categorical(2)], None);
        assert!(s.check_instance(&bad).is_err());
        let swapped = Instance::new(vec![Cell::Categorical(0), Cell::Numeric(1.0)], None);
        assert!(s.check_instance(&swapped).is_err());
        let short = Instance::new(vec![Cell::Numeric(1.0)], None);
        assert!(s.check_instance(&short).is_err());
    }
}
