//! Observational panel schema, CSV ingestion and structural validation.
//!
//! The interchange format is comma-separated UTF-8 text with a header row.
//! Seven fixed columns come first, in this order:
//!
//! ```text
//! household_id,year,village,ethnicity,religion,treated,outcome
//! ```
//!
//! followed by one column per schema covariate, in schema order. `treated`
//! and `outcome` are `0`/`1`. An empty field is a missing value.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed leading columns of the panel CSV.
pub const FIXED_COLUMNS: [&str; 7] = [
    "household_id",
    "year",
    "village",
    "ethnicity",
    "religion",
    "treated",
    "outcome",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateKind {
    Continuous,
    Binary,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    pub kind: CovariateKind,
    #[serde(default)]
    pub units: String,
}

impl CovariateSpec {
    pub fn new(name: impl Into<String>, kind: CovariateKind, units: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind,
            units: units.into(),
        }
    }
}

/// Ordered covariate definitions. Names are unique and non-empty, and there
/// is at least one entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct CovariateSchema {
    entries: Vec<CovariateSpec>,
}

impl CovariateSchema {
    pub fn new(entries: Vec<CovariateSpec>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Schema("schema needs at least one covariate".into()));
        }
        let mut seen = BTreeSet::new();
        for e in &entries {
            if e.name.trim().is_empty() {
                return Err(Error::Schema("covariate names must be non-empty".into()));
            }
            if FIXED_COLUMNS.contains(&e.name.as_str()) {
                return Err(Error::Schema(format!(
                    "covariate `{}` collides with a fixed column",
                    e.name
                )));
            }
            if !seen.insert(e.name.as_str()) {
                return Err(Error::Schema(format!("duplicate covariate `{}`", e.name)));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[CovariateSpec] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&CovariateSpec> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }
}

impl<'de> Deserialize<'de> for CovariateSchema {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let entries = Vec::<CovariateSpec>::deserialize(d)?;
        CovariateSchema::new(entries).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovariateValue {
    Number(f64),
    Category(String),
}

impl CovariateValue {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            CovariateValue::Number(x) => Some(*x),
            CovariateValue::Category(_) => None,
        }
    }

    pub fn as_category(&self) -> Option<&str> {
        match self {
            CovariateValue::Category(s) => Some(s),
            CovariateValue::Number(_) => None,
        }
    }

    fn render(&self) -> String {
        match self {
            CovariateValue::Number(x) => x.to_string(),
            CovariateValue::Category(s) => s.clone(),
        }
    }
}

/// One household-year row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub household_id: String,
    pub year: i32,
    pub village: String,
    /// Extension-service contact in this year.
    pub treated: bool,
    /// First fertiliser adoption in this year.
    pub outcome: bool,
    pub covariates: Vec<CovariateValue>,
    pub ethnicity: String,
    pub religion: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    pub schema: CovariateSchema,
    pub rows: Vec<Observation>,
    pub survey_years: BTreeSet<i32>,
    /// Inclusive year range rows must fall into, when known.
    pub study_window: Option<(i32, i32)>,
}

impl PanelDataset {
    pub fn new(schema: CovariateSchema, rows: Vec<Observation>) -> Self {
        Self {
            schema,
            rows,
            survey_years: BTreeSet::new(),
            study_window: None,
        }
    }

    pub fn with_survey_years(mut self, years: impl IntoIterator<Item = i32>) -> Self {
        self.survey_years = years.into_iter().collect();
        self
    }

    pub fn with_study_window(mut self, start: i32, end: i32) -> Self {
        self.study_window = Some((start, end));
        self
    }

    pub fn years(&self) -> BTreeSet<i32> {
        self.rows.iter().map(|r| r.year).collect()
    }

    pub fn villages(&self) -> BTreeSet<&str> {
        self.rows.iter().map(|r| r.village.as_str()).collect()
    }

    /// Row indices grouped by household, each group sorted by year.
    /// Households are returned in order of first appearance.
    pub fn households(&self) -> Vec<(&str, Vec<usize>)> {
        let mut order: Vec<&str> = Vec::new();
        let mut groups: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, row) in self.rows.iter().enumerate() {
            let entry = groups.entry(row.household_id.as_str()).or_insert_with(|| {
                order.push(row.household_id.as_str());
                Vec::new()
            });
            entry.push(i);
        }
        order
            .into_iter()
            .map(|id| {
                let mut idx = groups.remove(id).unwrap_or_default();
                idx.sort_by_key(|&i| self.rows[i].year);
                (id, idx)
            })
            .collect()
    }

    /// Row counts per village.
    pub fn village_row_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.rows {
            *counts.entry(r.village.clone()).or_insert(0) += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseOptions {
    /// Skip rows with missing or unparsable fields instead of failing.
    pub drop_incomplete_rows: bool,
}

/// Parse a panel CSV. Row numbers in errors count data rows from 1.
pub fn parse_dataset<R: Read>(source: R, schema: &CovariateSchema) -> Result<PanelDataset> {
    parse_dataset_with(source, schema, ParseOptions::default()).map(|(d, _)| d)
}

/// Parse with options; also returns the 1-based numbers of dropped rows.
pub fn parse_dataset_with<R: Read>(
    source: R,
    schema: &CovariateSchema,
    options: ParseOptions,
) -> Result<(PanelDataset, Vec<usize>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(source);

    let header = reader.headers()?.clone();
    let expected: Vec<&str> = FIXED_COLUMNS.iter().copied().chain(schema.names()).collect();
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::Schema(format!(
            "header mismatch: expected [{}], got [{}]",
            expected.join(","),
            got.join(",")
        )));
    }

    let mut rows = Vec::new();
    let mut dropped = Vec::new();
    let mut keys: HashMap<(String, i32), usize> = HashMap::new();
    for (i, record) in reader.records().enumerate() {
        let row_no = i + 1;
        let record = record?;
        let obs = match parse_record(&record, row_no, schema) {
            Ok(obs) => obs,
            Err(e) if options.drop_incomplete_rows => {
                log::debug!("dropping row {row_no}: {e}");
                dropped.push(row_no);
                continue;
            }
            Err(e) => return Err(e),
        };
        if let Some(_first) = keys.insert((obs.household_id.clone(), obs.year), row_no) {
            return Err(Error::DuplicateKey {
                household_id: obs.household_id,
                year: obs.year,
                row: row_no,
            });
        }
        rows.push(obs);
    }
    Ok((PanelDataset::new(schema.clone(), rows), dropped))
}

fn parse_record(
    record: &csv::StringRecord,
    row: usize,
    schema: &CovariateSchema,
) -> Result<Observation> {
    let arity = FIXED_COLUMNS.len() + schema.len();
    if record.len() != arity {
        return Err(Error::Parse {
            row,
            column: "*".into(),
            message: format!("expected {arity} fields, found {}", record.len()),
        });
    }
    let field = |col: usize, name: &str| -> Result<&str> {
        let v = record[col].trim();
        if v.is_empty() {
            Err(Error::Parse {
                row,
                column: name.to_string(),
                message: "missing value".into(),
            })
        } else {
            Ok(v)
        }
    };
    let flag = |col: usize, name: &str| -> Result<bool> {
        match field(col, name)? {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(Error::Parse {
                row,
                column: name.to_string(),
                message: format!("expected 0 or 1, found `{other}`"),
            }),
        }
    };

    let household_id = field(0, "household_id")?.to_string();
    let year_raw = field(1, "year")?;
    let year = year_raw.parse::<i32>().map_err(|_| Error::Parse {
        row,
        column: "year".into(),
        message: format!("`{year_raw}` is not an integer year"),
    })?;
    let village = field(2, "village")?.to_string();
    let ethnicity = field(3, "ethnicity")?.to_string();
    let religion = field(4, "religion")?.to_string();
    let treated = flag(5, "treated")?;
    let outcome = flag(6, "outcome")?;

    let mut covariates = Vec::with_capacity(schema.len());
    for (k, spec) in schema.entries().iter().enumerate() {
        let raw = field(FIXED_COLUMNS.len() + k, &spec.name)?;
        let value = match spec.kind {
            CovariateKind::Categorical => CovariateValue::Category(raw.to_string()),
            CovariateKind::Continuous | CovariateKind::Binary => {
                let x = raw.parse::<f64>().map_err(|_| Error::Parse {
                    row,
                    column: spec.name.clone(),
                    message: format!("`{raw}` is not a number"),
                })?;
                CovariateValue::Number(x)
            }
        };
        covariates.push(value);
    }

    Ok(Observation {
        household_id,
        year,
        village,
        treated,
        outcome,
        covariates,
        ethnicity,
        religion,
    })
}

/// Serialize a dataset in the same format [`parse_dataset`] reads.
pub fn write_dataset<W: Write>(sink: W, dataset: &PanelDataset) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(sink);
    let header: Vec<&str> = FIXED_COLUMNS
        .iter()
        .copied()
        .chain(dataset.schema.names())
        .collect();
    w.write_record(&header)?;
    for r in &dataset.rows {
        let mut rec = vec![
            r.household_id.clone(),
            r.year.to_string(),
            r.village.clone(),
            r.ethnicity.clone(),
            r.religion.clone(),
            u8::from(r.treated).to_string(),
            u8::from(r.outcome).to_string(),
        ];
        rec.extend(r.covariates.iter().map(CovariateValue::render));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    /// 1-based data-row number; 0 for dataset-level issues.
    pub row: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<Issue>,
    pub warnings: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    fn error(&mut self, row: usize, message: String) {
        self.errors.push(Issue { row, message });
    }

    fn warn(&mut self, row: usize, message: String) {
        self.warnings.push(Issue { row, message });
    }
}

/// Check every structural invariant. Never fails; violations become report
/// entries.
pub fn validate(dataset: &PanelDataset) -> ValidationReport {
    let mut report = ValidationReport::default();
    let schema = &dataset.schema;

    let mut keys: HashMap<(&str, i32), usize> = HashMap::new();
    for (i, r) in dataset.rows.iter().enumerate() {
        let row = i + 1;
        if let Some(first) = keys.insert((r.household_id.as_str(), r.year), row) {
            report.error(
                row,
                format!(
                    "duplicate (household `{}`, year {}) first seen at row {first}",
                    r.household_id, r.year
                ),
            );
        }
        if r.covariates.len() != schema.len() {
            report.error(
                row,
                format!(
                    "covariate vector has {} values, schema defines {}",
                    r.covariates.len(),
                    schema.len()
                ),
            );
        } else {
            for (spec, value) in schema.entries().iter().zip(&r.covariates) {
                match (spec.kind, value) {
                    (CovariateKind::Continuous, CovariateValue::Number(x)) if !x.is_finite() => {
                        report.error(row, format!("`{}` is not finite", spec.name))
                    }
                    (CovariateKind::Binary, CovariateValue::Number(x)) if *x != 0.0 && *x != 1.0 => {
                        report.error(row, format!("`{}` = {x} is not binary", spec.name))
                    }
                    (CovariateKind::Continuous | CovariateKind::Binary, CovariateValue::Category(_)) => {
                        report.error(row, format!("`{}` must be numeric", spec.name))
                    }
                    (CovariateKind::Categorical, CovariateValue::Number(_)) => {
                        report.error(row, format!("`{}` must be a category label", spec.name))
                    }
                    _ => {}
                }
            }
        }
        if let Some((start, end)) = dataset.study_window {
            if r.year < start || r.year > end {
                report.error(
                    row,
                    format!("year {} outside study window {start}-{end}", r.year),
                );
            }
        }
    }

    let years = dataset.years();
    for y in &dataset.survey_years {
        if !years.contains(y) {
            report.error(0, format!("survey year {y} has no rows"));
        }
    }

    // A household's outcome flag marks its first adoption, so later adopter
    // rows mean the household was not removed after adopting.
    for (id, idx) in dataset.households() {
        let mut adopted_in: Option<i32> = None;
        for &i in &idx {
            let r = &dataset.rows[i];
            if !r.outcome {
                continue;
            }
            match adopted_in {
                None => adopted_in = Some(r.year),
                Some(first) => report.warn(
                    i + 1,
                    format!(
                        "household `{id}` appears as adopter in {} after adopting in {first}",
                        r.year
                    ),
                ),
            }
        }
    }

    report
}
