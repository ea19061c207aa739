//! Year-wise treated/control sample construction.
//!
//! Each household contributes one unit per year, from its first year in the
//! window up to the earlier of its first treatment year and its adoption
//! year. Rows before the first treatment are controls, the first-treatment
//! row is the only treated row, and nothing after treatment or adoption is
//! kept.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{CovariateKind, CovariateSchema, CovariateSpec, CovariateValue, PanelDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub unit_id: String,
    pub year: i32,
    pub village: String,
    pub treated: bool,
    pub outcome: bool,
    pub covariates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    FullPooling,
    PartialPooling,
    Subset(String),
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::FullPooling => f.write_str("full_pooling"),
            Provenance::PartialPooling => f.write_str("partial_pooling"),
            Provenance::Subset(d) => write!(f, "subset({d})"),
        }
    }
}

/// Treated/control partition with fully numeric covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingSample {
    pub schema: CovariateSchema,
    pub units: Vec<Unit>,
    pub provenance: Provenance,
    /// Treated count of the sample this one was pruned from. Equal to the
    /// own treated count unless units were removed by matching.
    pub origin_treated: usize,
}

impl MatchingSample {
    pub fn new(schema: CovariateSchema, units: Vec<Unit>, provenance: Provenance) -> Result<Self> {
        if schema
            .entries()
            .iter()
            .any(|e| e.kind == CovariateKind::Categorical)
        {
            return Err(Error::Schema(
                "matching samples need numeric covariates; encode categoricals first".into(),
            ));
        }
        let mut keys = HashSet::with_capacity(units.len());
        for u in &units {
            if u.covariates.len() != schema.len() {
                return Err(Error::Shape {
                    expected: schema.len(),
                    got: u.covariates.len(),
                });
            }
            if !keys.insert((u.unit_id.as_str(), u.year)) {
                return Err(Error::DuplicateKey {
                    household_id: u.unit_id.clone(),
                    year: u.year,
                    row: 0,
                });
            }
        }
        let origin_treated = units.iter().filter(|u| u.treated).count();
        Ok(Self {
            schema,
            units,
            provenance,
            origin_treated,
        })
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.schema.len()
    }

    pub fn n_treated(&self) -> usize {
        self.units.iter().filter(|u| u.treated).count()
    }

    pub fn n_control(&self) -> usize {
        self.len() - self.n_treated()
    }

    pub fn ensure_non_degenerate(&self) -> Result<()> {
        let t = self.n_treated();
        if t == 0 {
            return Err(Error::DegenerateSample("no treated units".into()));
        }
        if t == self.len() {
            return Err(Error::DegenerateSample("no control units".into()));
        }
        Ok(())
    }

    /// Sub-sample of the given unit indices, keeping `origin_treated` so
    /// estimates can tell whether treated units were pruned.
    pub fn select(&self, indices: &[usize]) -> MatchingSample {
        let mut sorted = indices.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        MatchingSample {
            schema: self.schema.clone(),
            units: sorted.iter().map(|&i| self.units[i].clone()).collect(),
            provenance: Provenance::Subset(format!("{} matched", self.provenance)),
            origin_treated: self.origin_treated,
        }
    }

    /// Covariate column `k` over all units.
    pub fn column(&self, k: usize) -> Vec<f64> {
        self.units.iter().map(|u| u.covariates[k]).collect()
    }

    /// Write the sample as CSV preceded by a `# provenance:` comment line.
    pub fn write_csv<W: Write>(&self, mut sink: W) -> Result<()> {
        writeln!(sink, "# provenance: {}", self.provenance)?;
        let mut w = csv::Writer::from_writer(sink);
        let mut header = vec!["unit_id", "year", "village", "treated", "outcome"];
        header.extend(self.schema.names());
        w.write_record(&header)?;
        for u in &self.units {
            let mut rec = vec![
                u.unit_id.clone(),
                u.year.to_string(),
                u.village.clone(),
                u8::from(u.treated).to_string(),
                u8::from(u.outcome).to_string(),
            ];
            rec.extend(u.covariates.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolingConfig {
    pub study_window: (i32, i32),
    #[serde(default)]
    pub survey_years: BTreeSet<i32>,
    pub covariates: Vec<String>,
    #[serde(default = "default_true")]
    pub drop_after_treatment: bool,
    #[serde(default = "default_true")]
    pub drop_after_adoption: bool,
}

impl PoolingConfig {
    pub fn new(study_window: (i32, i32), covariates: Vec<String>) -> Self {
        Self {
            study_window,
            survey_years: BTreeSet::new(),
            covariates,
            drop_after_treatment: true,
            drop_after_adoption: true,
        }
    }

    pub fn with_survey_years(mut self, years: impl IntoIterator<Item = i32>) -> Self {
        self.survey_years = years.into_iter().collect();
        self
    }

    fn check(&self, schema: &CovariateSchema) -> Result<()> {
        if !self.drop_after_treatment || !self.drop_after_adoption {
            return Err(Error::Config(
                "post-treatment and post-adoption rows are always dropped".into(),
            ));
        }
        let (start, end) = self.study_window;
        if start > end {
            return Err(Error::Config(format!("empty study window {start}-{end}")));
        }
        if self.covariates.is_empty() {
            return Err(Error::Config("covariate subset is empty".into()));
        }
        for name in &self.covariates {
            if schema.get(name).is_none() {
                return Err(Error::Lookup {
                    kind: "covariate",
                    name: name.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Every household-year of the window under the assignment rules.
pub fn build_full_pooling(panel: &PanelDataset, config: &PoolingConfig) -> Result<MatchingSample> {
    build(panel, config, None, Provenance::FullPooling)
}

/// Same rules as [`build_full_pooling`], restricted to the survey years.
/// Households first treated between survey rounds keep their earlier
/// survey-year control rows but contribute no treated row.
pub fn build_partial_pooling(
    panel: &PanelDataset,
    config: &PoolingConfig,
) -> Result<MatchingSample> {
    if config.survey_years.is_empty() {
        return Err(Error::Config("partial pooling needs survey years".into()));
    }
    let available = if panel.survey_years.is_empty() {
        panel.years()
    } else {
        panel.survey_years.clone()
    };
    if let Some(y) = config.survey_years.iter().find(|y| !available.contains(y)) {
        return Err(Error::Config(format!("survey year {y} not in panel")));
    }
    build(
        panel,
        config,
        Some(&config.survey_years),
        Provenance::PartialPooling,
    )
}

/// Numeric encoder for a covariate subset: numeric columns pass through,
/// categorical columns expand to one indicator per level beyond the first.
struct Encoder {
    columns: Vec<(usize, Option<String>)>,
    sources: Vec<String>,
    schema: CovariateSchema,
}

impl Encoder {
    fn new(panel: &PanelDataset, names: &[String]) -> Result<Self> {
        let mut columns = Vec::new();
        let mut sources = Vec::new();
        let mut specs = Vec::new();
        for name in names {
            let pos = panel.schema.position(name).ok_or_else(|| Error::Lookup {
                kind: "covariate",
                name: name.clone(),
            })?;
            let spec = &panel.schema.entries()[pos];
            match spec.kind {
                CovariateKind::Continuous | CovariateKind::Binary => {
                    columns.push((pos, None));
                    sources.push(name.clone());
                    specs.push(spec.clone());
                }
                CovariateKind::Categorical => {
                    let levels: BTreeSet<&str> = panel
                        .rows
                        .iter()
                        .filter_map(|r| r.covariates.get(pos).and_then(CovariateValue::as_category))
                        .collect();
                    if levels.len() < 2 {
                        log::warn!("categorical covariate `{name}` has a single level; skipped");
                    }
                    for level in levels.into_iter().skip(1) {
                        columns.push((pos, Some(level.to_string())));
                        sources.push(name.clone());
                        specs.push(CovariateSpec::new(
                            format!("{name}={level}"),
                            CovariateKind::Binary,
                            "",
                        ));
                    }
                }
            }
        }
        if specs.is_empty() {
            return Err(Error::Config(
                "covariate subset encodes to zero numeric columns".into(),
            ));
        }
        Ok(Self {
            columns,
            sources,
            schema: CovariateSchema::new(specs)?,
        })
    }

    fn encode(&self, values: &[CovariateValue], row: usize) -> Result<Vec<f64>> {
        self.columns
            .iter()
            .zip(&self.sources)
            .map(|((pos, level), source)| {
                let v = values.get(*pos).ok_or(Error::Shape {
                    expected: *pos + 1,
                    got: values.len(),
                })?;
                match (level, v) {
                    (None, CovariateValue::Number(x)) => Ok(*x),
                    (Some(l), CovariateValue::Category(c)) => Ok(f64::from(u8::from(c == l))),
                    _ => Err(Error::Parse {
                        row,
                        column: source.clone(),
                        message: "covariate value has the wrong kind".into(),
                    }),
                }
            })
            .collect()
    }
}

fn build(
    panel: &PanelDataset,
    config: &PoolingConfig,
    years_allowed: Option<&BTreeSet<i32>>,
    provenance: Provenance,
) -> Result<MatchingSample> {
    config.check(&panel.schema)?;
    let encoder = Encoder::new(panel, &config.covariates)?;
    let (start, end) = config.study_window;

    let mut units = Vec::new();
    for (id, idx) in panel.households() {
        let rows: Vec<_> = idx.iter().map(|&i| (i, &panel.rows[i])).collect();
        if let Some((_, r)) = rows.iter().find(|(_, r)| r.treated && r.year < start) {
            return Err(Error::RuleViolation(format!(
                "household `{id}` is treated in {} before the study window opens in {start}",
                r.year
            )));
        }
        let first_treatment = rows
            .iter()
            .filter(|(_, r)| r.treated && r.year <= end)
            .map(|(_, r)| r.year)
            .min();
        let adoption = rows.iter().filter(|(_, r)| r.outcome).map(|(_, r)| r.year).min();
        let cutoff = match (first_treatment, adoption) {
            (Some(t), Some(a)) => t.min(a),
            (Some(t), None) => t,
            (None, Some(a)) => a,
            (None, None) => end,
        };

        for (i, r) in rows {
            if r.year < start || r.year > end || r.year > cutoff {
                continue;
            }
            if years_allowed.is_some_and(|ys| !ys.contains(&r.year)) {
                continue;
            }
            units.push(Unit {
                unit_id: id.to_string(),
                year: r.year,
                village: r.village.clone(),
                treated: Some(r.year) == first_treatment,
                outcome: r.outcome,
                covariates: encoder.encode(&r.covariates, i + 1)?,
            });
        }
    }

    let sample = MatchingSample::new(encoder.schema, units, provenance)?;
    sample.ensure_non_degenerate()?;
    Ok(sample)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetFilter {
    Year(i32),
    Village(String),
}

impl fmt::Display for SubsetFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SubsetFilter::Year(y) => write!(f, "year={y}"),
            SubsetFilter::Village(v) => write!(f, "village={v}"),
        }
    }
}

/// Units matching a year or village filter. The result is a new analysis
/// sample, so its `origin_treated` is its own treated count.
pub fn subset_by(sample: &MatchingSample, filter: &SubsetFilter) -> Result<MatchingSample> {
    let units: Vec<Unit> = sample
        .units
        .iter()
        .filter(|u| match filter {
            SubsetFilter::Year(y) => u.year == *y,
            SubsetFilter::Village(v) => &u.village == v,
        })
        .cloned()
        .collect();
    if units.is_empty() {
        return Err(Error::DegenerateSample(format!("no units with {filter}")));
    }
    let origin_treated = units.iter().filter(|u| u.treated).count();
    Ok(MatchingSample {
        schema: sample.schema.clone(),
        units,
        provenance: Provenance::Subset(format!("{} {filter}", sample.provenance)),
        origin_treated,
    })
}
