//! Seeded synthetic household panels with a known, constant treatment
//! effect and farm-size confounding.
//!
//! Covariates are drawn per household-year around household levels, so
//! rows of one household are similar but not identical. Each year a
//! household not yet treated is treated with probability `sigmoid(logit(rate)
//! + confounding * z)`, where `z` is that year's standardized log farm size. A
//! household that has not adopted adopts with probability
//! `p0 + tau * treated_this_year`, where the baseline
//! `p0 = lo + (hi - lo) * sigmoid(logit(base) + outcome_confounding * z)` is
//! squeezed into `[lo, hi] = [max(0, -tau), min(1, 1 - tau)]` so the effect
//! stays exactly `tau` without clipping.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{
    CovariateKind, CovariateSchema, CovariateSpec, CovariateValue, Observation, PanelDataset,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub villages: usize,
    pub households_per_village: usize,
    pub start_year: i32,
    pub end_year: i32,
    pub survey_years: Vec<i32>,
    /// Years between the diffusion starts of consecutive villages. Before a
    /// village's start its baseline adoption is quartered.
    pub diffusion_lag: f64,
    /// Yearly treatment probability at average farm size.
    pub treatment_rate: f64,
    /// Farm-size effect on the treatment log-odds.
    pub confounding: f64,
    /// Yearly baseline adoption probability at average farm size, before
    /// rescaling into `[lo, hi]`.
    pub base_adoption: f64,
    /// Farm-size effect on the baseline adoption log-odds.
    pub outcome_confounding: f64,
    /// Additive effect of treatment on the adoption probability.
    pub tau: f64,
    /// Probability of a further extension contact after the first one.
    pub repeat_treatment: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            villages: 7,
            households_per_village: 92,
            start_year: 1994,
            end_year: 2004,
            survey_years: vec![1994, 1997, 1999, 2004],
            diffusion_lag: 0.0,
            treatment_rate: 0.05,
            confounding: 2.5,
            base_adoption: 0.1,
            outcome_confounding: 1.0,
            tau: 0.5,
            repeat_treatment: 0.3,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if p > 0.0 && p < 1.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {p} must lie in (0, 1)")))
            }
        };
        if self.villages == 0 || self.households_per_village == 0 {
            return Err(Error::Config("need at least one village and one household".into()));
        }
        if self.start_year > self.end_year {
            return Err(Error::Config("start_year after end_year".into()));
        }
        if let Some(y) = self
            .survey_years
            .iter()
            .find(|y| **y < self.start_year || **y > self.end_year)
        {
            return Err(Error::Config(format!("survey year {y} outside the panel years")));
        }
        prob("treatment_rate", self.treatment_rate)?;
        prob("base_adoption", self.base_adoption)?;
        if !(0.0..1.0).contains(&self.repeat_treatment) {
            return Err(Error::Config("repeat_treatment must lie in [0, 1)".into()));
        }
        if !(-1.0..=1.0).contains(&self.tau) || !self.tau.is_finite() {
            return Err(Error::Config(format!("tau = {} outside [-1, 1]", self.tau)));
        }
        if !(self.confounding.is_finite()
            && self.outcome_confounding.is_finite()
            && self.diffusion_lag.is_finite()
            && self.diffusion_lag >= 0.0)
        {
            return Err(Error::Config("non-finite generator parameter".into()));
        }
        Ok(())
    }
}

/// A generated panel plus the baseline adoption probability behind every row.
#[derive(Debug, Clone)]
pub struct SimulatedPanel {
    pub panel: PanelDataset,
    /// `p0` of each row of `panel.rows`, for bias bookkeeping.
    pub baseline: Vec<f64>,
}

pub const SIM_COVARIATES: [&str; 7] = [
    "farm_size",
    "household_size",
    "head_age",
    "male_head",
    "oxen",
    "market_distance",
    "ethnic_majority",
];

pub fn simulated_schema() -> CovariateSchema {
    use CovariateKind::*;
    CovariateSchema::new(vec![
        CovariateSpec::new("farm_size", Continuous, "ha"),
        CovariateSpec::new("household_size", Continuous, "persons"),
        CovariateSpec::new("head_age", Continuous, "years"),
        CovariateSpec::new("male_head", Binary, ""),
        CovariateSpec::new("oxen", Binary, ""),
        CovariateSpec::new("market_distance", Continuous, "km"),
        CovariateSpec::new("ethnic_majority", Binary, ""),
    ])
    .expect("static schema is valid")
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

const LOG_FARM_SD: f64 = 0.45;
/// Correlation of a household's farm size between survey rounds.
const FARM_PERSISTENCE: f64 = 0.4;

pub fn simulate(config: &GeneratorConfig) -> Result<SimulatedPanel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let (lo, hi) = ((-config.tau).max(0.0), (1.0 - config.tau).min(1.0));

    let mut rows = Vec::new();
    let mut baseline = Vec::new();
    for v in 0..config.villages {
        let village = format!("PA{:02}", v + 1);
        let diffusion_start = config.start_year as f64 + v as f64 * config.diffusion_lag;
        for h in 0..config.households_per_village {
            let farm_level: f64 = std.sample(&mut rng);
            let size_level = (6.0 + 2.0 * std.sample(&mut rng)).round().max(1.0);
            let age0 = (45.0 + 12.0 * std.sample(&mut rng)).clamp(18.0, 80.0).round();
            let male_head = f64::from(u8::from(rng.random_bool(0.8)));
            let oxen_rate = rng.random_range(0.2..0.8);
            let distance_level = 1.5 + 0.6 * std.sample(&mut rng);
            let majority = rng.random_bool(0.8);
            let ethnicity = if majority { format!("eth{}", v % 3) } else { "eth_other".into() };
            let religion = if rng.random_bool(0.7) { "orthodox" } else { "muslim" };

            let mut treated_before = false;
            let mut adopted = false;
            for year in config.start_year..=config.end_year {
                // Standardized log farm size of this survey round.
                let z = FARM_PERSISTENCE * farm_level
                    + (1.0 - FARM_PERSISTENCE * FARM_PERSISTENCE).sqrt() * std.sample(&mut rng);
                let household_size =
                    (size_level + std.sample(&mut rng)).round().max(1.0);
                let head_age = age0 + f64::from(year - config.start_year);
                let oxen = f64::from(u8::from(rng.random_bool(oxen_rate)));
                let market_distance = (distance_level + 0.1 * std.sample(&mut rng)).exp();
                let covariates = [
                    (LOG_FARM_SD * z).exp(),
                    household_size,
                    head_age,
                    male_head,
                    oxen,
                    market_distance,
                    f64::from(u8::from(majority)),
                ]
                .map(CovariateValue::Number)
                .to_vec();
                let treat_eta = logit(config.treatment_rate) + config.confounding * z;
                let adopt_p =
                    sigmoid(logit(config.base_adoption) + config.outcome_confounding * z);
                let treated = if treated_before {
                    rng.random_bool(config.repeat_treatment)
                } else {
                    rng.random_bool(sigmoid(treat_eta))
                };
                let first_treatment = treated && !treated_before;
                let damp = if (year as f64) < diffusion_start { 0.25 } else { 1.0 };
                let p0 = lo + (hi - lo) * adopt_p * damp;
                let outcome = if adopted {
                    false
                } else {
                    let p = p0 + if first_treatment { config.tau } else { 0.0 };
                    rng.random_bool(p.clamp(0.0, 1.0))
                };
                adopted |= outcome;
                treated_before |= treated;
                rows.push(Observation {
                    household_id: format!("{village}-{h:04}"),
                    year,
                    village: village.clone(),
                    treated,
                    outcome,
                    covariates,
                    ethnicity: ethnicity.clone(),
                    religion: religion.to_string(),
                });
                baseline.push(p0);
            }
        }
    }

    let survey: BTreeSet<i32> = config.survey_years.iter().copied().collect();
    let panel = PanelDataset::new(simulated_schema(), rows)
        .with_study_window(config.start_year, config.end_year)
        .with_survey_years(survey);
    Ok(SimulatedPanel { panel, baseline })
}
