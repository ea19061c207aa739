//! The single JSON document that drives a run.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use frontier_match::descriptives::GroupRule;
use frontier_match::{
    AmiOptions, BinningSpec, CategoryThresholds, CovariateSchema, GeneratorConfig, SeMethod,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    FullPooling,
    PartialPooling,
}

impl SampleKind {
    pub fn name(self) -> &'static str {
        match self {
            SampleKind::FullPooling => "full_pooling",
            SampleKind::PartialPooling => "partial_pooling",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "metric", rename_all = "snake_case", deny_unknown_fields)]
pub enum MetricSpec {
    L1,
    Ami {
        #[serde(default)]
        allow_treated_pruning: bool,
        #[serde(default)]
        reestimate_covariance: bool,
    },
}

impl MetricSpec {
    /// Directory-safe name, distinct for every variant.
    pub fn name(self) -> String {
        match self {
            MetricSpec::L1 => "l1".into(),
            MetricSpec::Ami {
                allow_treated_pruning,
                reestimate_covariance,
            } => {
                let mut s = String::from("ami");
                if allow_treated_pruning {
                    s.push_str("_prune_treated");
                }
                if reestimate_covariance {
                    s.push_str("_reestimated");
                }
                s
            }
        }
    }

    pub fn ami_options(self) -> Option<AmiOptions> {
        match self {
            MetricSpec::L1 => None,
            MetricSpec::Ami {
                allow_treated_pruning,
                reestimate_covariance,
            } => Some(AmiOptions {
                allow_treated_pruning,
                reestimate_covariance,
            }),
        }
    }
}

/// Which subsets of each sample get their own cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sweeps {
    /// The whole sample.
    pub pooled: bool,
    /// One cell per year present in the sample's window.
    pub by_year: bool,
    /// One cell per village.
    pub by_village: bool,
}

impl Default for Sweeps {
    fn default() -> Self {
        Self {
            pooled: true,
            by_year: false,
            by_village: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonSpec {
    pub name: String,
    pub year: i32,
    pub group_a: GroupRule,
    pub group_b: GroupRule,
    #[serde(default = "default_label_a")]
    pub label_a: String,
    #[serde(default = "default_label_b")]
    pub label_b: String,
    /// Defaults to every numeric covariate in the schema.
    #[serde(default)]
    pub variables: Vec<String>,
}

fn default_label_a() -> String {
    "a".into()
}

fn default_label_b() -> String {
    "b".into()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DescribeConfig {
    pub thresholds: CategoryThresholds,
    /// Named unions of villages with their own diffusion curve.
    pub village_groups: BTreeMap<String, BTreeSet<String>>,
    pub comparisons: Vec<ComparisonSpec>,
}

fn default_samples() -> Vec<SampleKind> {
    vec![SampleKind::FullPooling]
}

fn default_metrics() -> Vec<MetricSpec> {
    vec![MetricSpec::Ami {
        allow_treated_pruning: true,
        reestimate_covariance: false,
    }]
}

fn default_alpha() -> f64 {
    0.10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Panel CSV; relative paths resolve against the config file's directory.
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub schema: Option<CovariateSchema>,
    #[serde(default)]
    pub study_window: Option<(i32, i32)>,
    #[serde(default)]
    pub survey_years: BTreeSet<i32>,
    /// Matching covariates; empty means every schema column.
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default = "default_samples")]
    pub samples: Vec<SampleKind>,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<MetricSpec>,
    /// Per-covariate overrides of the default coarsening.
    #[serde(default)]
    pub binning: BinningSpec,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub sweeps: Sweeps,
    #[serde(default)]
    pub standard_error: SeMethod,
    #[serde(default)]
    pub drop_incomplete_rows: bool,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub generator: Option<GeneratorConfig>,
    #[serde(default)]
    pub describe: DescribeConfig,
    /// Directory of the config file, for resolving relative paths.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, Failure> {
        let config: RunConfig =
            serde_json::from_str(text).map_err(|e| Failure::Config(format!("config: {e}")))?;
        config.check()?;
        Ok(config)
    }

    /// Reads the config and remembers its directory for relative paths.
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::from_json(&text)?;
        config.base_dir = path.parent().map(Path::to_path_buf);
        Ok(config)
    }

    pub fn input_path(&self) -> Result<PathBuf, Failure> {
        let input = self
            .input
            .as_ref()
            .ok_or_else(|| Failure::Config("config has no `input`".into()))?;
        Ok(match &self.base_dir {
            Some(dir) if input.is_relative() => dir.join(input),
            _ => input.clone(),
        })
    }

    fn check(&self) -> Result<(), Failure> {
        let bad = |m: String| Err(Failure::Config(m));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if let Some((a, b)) = self.study_window {
            if a > b {
                return bad(format!("study window ({a}, {b}) is reversed"));
            }
        }
        if self.samples.is_empty() || self.metrics.is_empty() {
            return bad("need at least one sample and one metric".into());
        }
        if self.samples.contains(&SampleKind::PartialPooling) && self.survey_years.is_empty() {
            return bad("partial pooling needs survey_years".into());
        }
        let mut names = BTreeSet::new();
        if let Some(m) = self.metrics.iter().find(|m| !names.insert(m.name())) {
            return bad(format!("metric {} listed twice", m.name()));
        }
        if !(self.sweeps.pooled || self.sweeps.by_year || self.sweeps.by_village) {
            return bad("sweeps select no cells".into());
        }
        if let Some(schema) = &self.schema {
            let unknown = self
                .covariates
                .iter()
                .chain(self.binning.rules.keys())
                .find(|c| schema.position(c).is_none());
            if let Some(c) = unknown {
                return bad(format!("covariate `{c}` is not in the schema"));
            }
        }
        if let Some(g) = &self.generator {
            g.validate().map_err(|e| Failure::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Hash of the configuration that determines results. The output
    /// directory is left out so reruns elsewhere hash identically.
    pub fn digest(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = None;
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn covariate_names(&self, schema: &CovariateSchema) -> Vec<String> {
        if self.covariates.is_empty() {
            schema.names().map(String::from).collect()
        } else {
            self.covariates.clone()
        }
    }
}
