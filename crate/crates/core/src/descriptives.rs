//! Diffusion levels, adopter categories, fractionalization and group
//! comparison tables.
//!
//! A household's adoption year is the first year its `outcome` flag is set.
//! Shares are over households ever observed in the village set, and a
//! household belongs to the village of its earliest row.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{CovariateKind, CovariateValue, Observation, PanelDataset};
use crate::error::{Error, Result};
use crate::estimation::mean_difference_test;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HouseholdHistory {
    pub household_id: String,
    pub village: String,
    pub adoption_year: Option<i32>,
    pub ethnicity: String,
    pub religion: String,
}

/// One entry per household, in order of first appearance.
pub fn household_histories(panel: &PanelDataset) -> Vec<HouseholdHistory> {
    panel
        .households()
        .into_iter()
        .map(|(id, idx)| {
            let first = &panel.rows[idx[0]];
            HouseholdHistory {
                household_id: id.to_string(),
                village: first.village.clone(),
                adoption_year: idx
                    .iter()
                    .map(|&i| &panel.rows[i])
                    .filter(|r| r.outcome)
                    .map(|r| r.year)
                    .min(),
                ethnicity: first.ethnicity.clone(),
                religion: first.religion.clone(),
            }
        })
        .collect()
}

fn adopted_by(h: &HouseholdHistory, year: i32) -> bool {
    h.adoption_year.is_some_and(|a| a <= year)
}

/// Percent of the village's households that adopted in or before `year`.
pub fn diffusion_level(panel: &PanelDataset, village: &str, year: i32) -> Result<f64> {
    let hs: Vec<_> = household_histories(panel)
        .into_iter()
        .filter(|h| h.village == village)
        .collect();
    if hs.is_empty() {
        return Err(Error::Lookup {
            kind: "village",
            name: village.to_string(),
        });
    }
    let adopters = hs.iter().filter(|h| adopted_by(h, year)).count();
    Ok(100.0 * adopters as f64 / hs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionPoint {
    pub year: i32,
    pub adopters: usize,
    pub households: usize,
    /// Cumulative adopter share in percent.
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSeries {
    pub villages: BTreeSet<String>,
    pub points: Vec<DiffusionPoint>,
}

impl DiffusionSeries {
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["year", "adopters", "households", "share"])?;
        for p in &self.points {
            w.write_record([
                p.year.to_string(),
                p.adopters.to_string(),
                p.households.to_string(),
                p.share.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Cumulative adopter share over the union of `villages`, one point per
/// year observed in those villages.
pub fn diffusion_series(panel: &PanelDataset, villages: &BTreeSet<String>) -> Result<DiffusionSeries> {
    if villages.is_empty() {
        return Err(Error::Config("diffusion series needs at least one village".into()));
    }
    let known = panel.villages();
    if let Some(v) = villages.iter().find(|v| !known.contains(v.as_str())) {
        return Err(Error::Lookup {
            kind: "village",
            name: v.clone(),
        });
    }
    let hs: Vec<_> = household_histories(panel)
        .into_iter()
        .filter(|h| villages.contains(&h.village))
        .collect();
    let years: BTreeSet<i32> = panel
        .rows
        .iter()
        .filter(|r| villages.contains(&r.village))
        .map(|r| r.year)
        .chain(hs.iter().filter_map(|h| h.adoption_year))
        .collect();
    let points = years
        .into_iter()
        .map(|year| {
            let adopters = hs.iter().filter(|h| adopted_by(h, year)).count();
            DiffusionPoint {
                year,
                adopters,
                households: hs.len(),
                share: 100.0 * adopters as f64 / hs.len() as f64,
            }
        })
        .collect();
    Ok(DiffusionSeries {
        villages: villages.clone(),
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AdopterCategory {
    Innovator,
    EarlyAdopter,
    EarlyMajority,
    LateMajority,
    Laggard,
}

impl fmt::Display for AdopterCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AdopterCategory::Innovator => "innovator",
            AdopterCategory::EarlyAdopter => "early_adopter",
            AdopterCategory::EarlyMajority => "early_majority",
            AdopterCategory::LateMajority => "late_majority",
            AdopterCategory::Laggard => "laggard",
        };
        f.write_str(s)
    }
}

/// Cumulative-share cut points (percent) between the five categories.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryThresholds {
    cuts: [f64; 4],
}

impl Default for CategoryThresholds {
    /// 2.5 / 16 / 50 / 84: cumulative shares at one and two standard
    /// deviations around the mean adoption time of a normal curve.
    fn default() -> Self {
        Self {
            cuts: [2.5, 16.0, 50.0, 84.0],
        }
    }
}

impl CategoryThresholds {
    pub fn new(cuts: [f64; 4]) -> Result<Self> {
        let ok = cuts.iter().all(|c| *c > 0.0 && *c < 100.0) && cuts.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(Error::Config(format!(
                "category cut points {cuts:?} must be strictly increasing inside (0, 100)"
            )));
        }
        Ok(Self { cuts })
    }

    pub fn cuts(&self) -> [f64; 4] {
        self.cuts
    }
}

/// Category of a household that adopted when the cumulative share reached
/// `share` percent. Shares equal to a cut point fall in the earlier category.
pub fn adopter_category(share: f64, thresholds: &CategoryThresholds) -> Result<AdopterCategory> {
    if !(share > 0.0 && share <= 100.0) {
        return Err(Error::Domain(format!("adoption share {share} outside (0, 100]")));
    }
    const ORDER: [AdopterCategory; 5] = [
        AdopterCategory::Innovator,
        AdopterCategory::EarlyAdopter,
        AdopterCategory::EarlyMajority,
        AdopterCategory::LateMajority,
        AdopterCategory::Laggard,
    ];
    let k = thresholds.cuts.iter().filter(|&&c| share > c).count();
    Ok(ORDER[k])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseholdCategory {
    pub household_id: String,
    pub village: String,
    pub adoption_year: i32,
    pub share_at_adoption: f64,
    pub category: AdopterCategory,
}

/// Category of every adopting household from its own village's diffusion
/// level in its adoption year.
pub fn categorize_households(
    panel: &PanelDataset,
    thresholds: &CategoryThresholds,
) -> Result<Vec<HouseholdCategory>> {
    let hs = household_histories(panel);
    let mut per_village: HashMap<&str, Vec<&HouseholdHistory>> = HashMap::new();
    for h in &hs {
        per_village.entry(h.village.as_str()).or_default().push(h);
    }
    hs.iter()
        .filter_map(|h| h.adoption_year.map(|y| (h, y)))
        .map(|(h, year)| {
            let peers = &per_village[h.village.as_str()];
            let adopters = peers.iter().filter(|p| adopted_by(p, year)).count();
            let share = 100.0 * adopters as f64 / peers.len() as f64;
            Ok(HouseholdCategory {
                household_id: h.household_id.clone(),
                village: h.village.clone(),
                adoption_year: year,
                share_at_adoption: share,
                category: adopter_category(share, thresholds)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Ethnicity,
    Religion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionalizationIndex {
    pub dimension: Dimension,
    pub value: f64,
}

/// `1 - sum(s_i^2)`: probability that two random draws fall in different
/// groups.
pub fn fractionalization(shares: &[f64]) -> Result<f64> {
    if shares.is_empty() || shares.iter().any(|s| s.is_nan() || *s < 0.0) {
        return Err(Error::Domain("shares must be non-negative and non-empty".into()));
    }
    let total: f64 = shares.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("shares sum to {total}, not 1")));
    }
    Ok(1.0 - shares.iter().map(|s| s * s).sum::<f64>())
}

/// Fractionalization of households by ethnicity or religion, optionally
/// within one village.
pub fn fractionalization_by(
    panel: &PanelDataset,
    dimension: Dimension,
    village: Option<&str>,
) -> Result<FractionalizationIndex> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let hs = household_histories(panel);
    for h in hs.iter().filter(|h| village.is_none_or(|v| h.village == v)) {
        let label = match dimension {
            Dimension::Ethnicity => h.ethnicity.as_str(),
            Dimension::Religion => h.religion.as_str(),
        };
        *counts.entry(label).or_insert(0) += 1;
    }
    let n: usize = counts.values().sum();
    if n == 0 {
        return Err(Error::Lookup {
            kind: "village",
            name: village.unwrap_or("").to_string(),
        });
    }
    let shares: Vec<f64> = counts.values().map(|&c| c as f64 / n as f64).collect();
    Ok(FractionalizationIndex {
        dimension,
        value: fractionalization(&shares)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub variable: String,
    pub mean_a: f64,
    pub mean_b: f64,
    pub n_a: usize,
    pub n_b: usize,
    /// Omitted when a group has a single observation.
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub year: i32,
    pub label_a: String,
    pub label_b: String,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record([
            "variable",
            &format!("mean_{}", self.label_a),
            &format!("mean_{}", self.label_b),
            "n_a",
            "n_b",
            "p_value",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.variable.clone(),
                r.mean_a.to_string(),
                r.mean_b.to_string(),
                r.n_a.to_string(),
                r.n_b.to_string(),
                r.p_value.map(|p| p.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub type RowPredicate = Box<dyn Fn(&Observation) -> bool + Send + Sync>;

/// Serializable group definitions for comparison tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "value")]
pub enum GroupRule {
    Treated,
    Untreated,
    /// Adopted in or before the comparison year.
    Adopter,
    NonAdopter,
    Village(String),
    /// Adopting households whose category is one of the listed ones.
    Category(Vec<AdopterCategory>),
}

impl GroupRule {
    /// Predicate over observations, resolved against the panel.
    pub fn predicate(
        &self,
        panel: &PanelDataset,
        year: i32,
        thresholds: &CategoryThresholds,
    ) -> Result<RowPredicate> {
        let adoption: HashMap<String, Option<i32>> = household_histories(panel)
            .into_iter()
            .map(|h| (h.household_id, h.adoption_year))
            .collect();
        Ok(match self.clone() {
            GroupRule::Treated => Box::new(|o: &Observation| o.treated),
            GroupRule::Untreated => Box::new(|o: &Observation| !o.treated),
            GroupRule::Adopter => Box::new(move |o: &Observation| {
                adoption[&o.household_id].is_some_and(|a| a <= year)
            }),
            GroupRule::NonAdopter => Box::new(move |o: &Observation| {
                !adoption[&o.household_id].is_some_and(|a| a <= year)
            }),
            GroupRule::Village(v) => Box::new(move |o: &Observation| o.village == v),
            GroupRule::Category(cats) => {
                let members: HashMap<String, AdopterCategory> = categorize_households(panel, thresholds)?
                    .into_iter()
                    .map(|h| (h.household_id, h.category))
                    .collect();
                Box::new(move |o: &Observation| {
                    members.get(&o.household_id).is_some_and(|c| cats.contains(c))
                })
            }
        })
    }
}

/// Group means of numeric `variables` among the rows of `year`, with Welch
/// p-values where both groups have at least two observations.
pub fn group_comparison(
    panel: &PanelDataset,
    group_a: &dyn Fn(&Observation) -> bool,
    group_b: &dyn Fn(&Observation) -> bool,
    variables: &[String],
    year: i32,
) -> Result<Vec<ComparisonRow>> {
    let columns: Vec<(String, usize)> = variables
        .iter()
        .map(|name| {
            let pos = panel.schema.position(name).ok_or_else(|| Error::Lookup {
                kind: "covariate",
                name: name.clone(),
            })?;
            if panel.schema.entries()[pos].kind == CovariateKind::Categorical {
                return Err(Error::Config(format!("`{name}` is categorical; compare indicators instead")));
            }
            Ok((name.clone(), pos))
        })
        .collect::<Result<_>>()?;

    let rows_in_year: Vec<&Observation> = panel.rows.iter().filter(|r| r.year == year).collect();
    let a: Vec<&Observation> = rows_in_year.iter().copied().filter(|r| group_a(r)).collect();
    let b: Vec<&Observation> = rows_in_year.iter().copied().filter(|r| group_b(r)).collect();
    if a.is_empty() || b.is_empty() {
        return Err(Error::DegenerateSample(format!(
            "comparison group is empty in {year} ({} vs {} rows)",
            a.len(),
            b.len()
        )));
    }

    let values = |group: &[&Observation], pos: usize| -> Vec<f64> {
        group
            .iter()
            .filter_map(|r| r.covariates.get(pos).and_then(CovariateValue::as_number))
            .collect()
    };
    columns
        .into_iter()
        .map(|(name, pos)| {
            let (va, vb) = (values(&a, pos), values(&b, pos));
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let p_value = if va.len() < 2 || vb.len() < 2 {
                None
            } else {
                Some(mean_difference_test(&va, &vb)?)
            };
            Ok(ComparisonRow {
                variable: name,
                mean_a: mean(&va),
                mean_b: mean(&vb),
                n_a: va.len(),
                n_b: vb.len(),
                p_value,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CovariateSchema, CovariateSpec};

    fn row(id: &str, village: &str, year: i32, outcome: bool, plot: f64) -> Observation {
        Observation {
            household_id: id.into(),
            year,
            village: village.into(),
            treated: false,
            outcome,
            covariates: vec![CovariateValue::Number(plot)],
            ethnicity: "e".into(),
            religion: "r".into(),
        }
    }

    fn panel(rows: Vec<Observation>) -> PanelDataset {
        let schema =
            CovariateSchema::new(vec![CovariateSpec::new("plot_size", CovariateKind::Continuous, "ha")]).unwrap();
        PanelDataset::new(schema, rows)
    }

    /// Ten households in one village; h0..h2 adopt in 1995, 1996, 1996.
    fn toy_village() -> PanelDataset {
        let mut rows = Vec::new();
        for h in 0..10 {
            for y in 1994..=1997 {
                let adopt_year = match h {
                    0 => Some(1995),
                    1 | 2 => Some(1996),
                    _ => None,
                };
                rows.push(row(&format!("h{h}"), "A", y, adopt_year == Some(y), 1.0));
            }
        }
        panel(rows)
    }

    #[test]
    fn diffusion_level_hand_counts() {
        let p = toy_village();
        assert_eq!(diffusion_level(&p, "A", 1994).unwrap(), 0.0);
        assert_eq!(diffusion_level(&p, "A", 1995).unwrap(), 10.0);
        assert_eq!(diffusion_level(&p, "A", 1996).unwrap(), 30.0);
        assert!(matches!(diffusion_level(&p, "Z", 1996), Err(Error::Lookup { .. })));
    }

    #[test]
    fn everyone_adopted_is_hundred() {
        let p = panel(vec![row("a", "V", 1994, true, 1.0), row("b", "V", 1995, true, 1.0)]);
        assert_eq!(diffusion_level(&p, "V", 1995).unwrap(), 100.0);
    }

    #[test]
    fn single_household_series_jumps_at_adoption() {
        let p = panel((1988..=1992).map(|y| row("a", "V", y, y == 1990, 1.0)).collect());
        let s = diffusion_series(&p, &BTreeSet::from(["V".to_string()])).unwrap();
        let shares: Vec<_> = s.points.iter().map(|p| (p.year, p.share)).collect();
        assert_eq!(
            shares,
            vec![(1988, 0.0), (1989, 0.0), (1990, 100.0), (1991, 100.0), (1992, 100.0)]
        );
    }

    #[test]
    fn categories_at_default_cuts() {
        let t = CategoryThresholds::default();
        let cat = |s| adopter_category(s, &t).unwrap();
        assert_eq!(cat(1.0), AdopterCategory::Innovator);
        assert_eq!(cat(2.5), AdopterCategory::Innovator);
        assert_eq!(cat(2.6), AdopterCategory::EarlyAdopter);
        assert_eq!(cat(16.0), AdopterCategory::EarlyAdopter);
        assert_eq!(cat(20.0), AdopterCategory::EarlyMajority);
        assert_eq!(cat(50.0), AdopterCategory::EarlyMajority);
        assert_eq!(cat(84.0), AdopterCategory::LateMajority);
        assert_eq!(cat(100.0), AdopterCategory::Laggard);
        assert!(adopter_category(0.0, &t).is_err());
        assert!(adopter_category(100.5, &t).is_err());
        assert!(CategoryThresholds::new([2.5, 2.5, 50.0, 84.0]).is_err());
    }

    #[test]
    fn household_categories_use_village_share() {
        let c = categorize_households(&toy_village(), &CategoryThresholds::default()).unwrap();
        let got: Vec<_> = c.iter().map(|h| (h.household_id.as_str(), h.share_at_adoption, h.category)).collect();
        assert_eq!(
            got,
            vec![
                ("h0", 10.0, AdopterCategory::EarlyAdopter),
                ("h1", 30.0, AdopterCategory::EarlyMajority),
                ("h2", 30.0, AdopterCategory::EarlyMajority),
            ]
        );
    }

    #[test]
    fn fractionalization_values() {
        assert_eq!(fractionalization(&[1.0]).unwrap(), 0.0);
        assert_eq!(fractionalization(&[0.5, 0.5]).unwrap(), 0.5);
        assert!((fractionalization(&[0.6, 0.3, 0.1]).unwrap() - 0.54).abs() < 1e-12);
        assert!(fractionalization(&[0.6, 0.3]).is_err());
        assert!(fractionalization(&[1.2, -0.2]).is_err());
    }

    #[test]
    fn fractionalization_from_panel_labels() {
        let mut rows = vec![
            row("a", "V", 1994, false, 1.0),
            row("b", "V", 1994, false, 1.0),
            row("c", "W", 1994, false, 1.0),
            row("d", "W", 1994, false, 1.0),
        ];
        rows[1].religion = "other".into();
        rows[3].religion = "other".into();
        let p = panel(rows);
        assert_eq!(fractionalization_by(&p, Dimension::Religion, None).unwrap().value, 0.5);
        assert_eq!(fractionalization_by(&p, Dimension::Ethnicity, None).unwrap().value, 0.0);
        assert_eq!(fractionalization_by(&p, Dimension::Religion, Some("V")).unwrap().value, 0.5);
        assert!(fractionalization_by(&p, Dimension::Religion, Some("Z")).is_err());
    }

    #[test]
    fn comparison_reproduces_built_in_means() {
        let mut rows = Vec::new();
        for (i, plot) in [1.43, 1.63, 1.53].iter().enumerate() {
            let mut r = row(&format!("m{i}"), "V", 1994, false, *plot);
            r.treated = true;
            rows.push(r);
        }
        for (i, plot) in [0.66, 0.86, 0.76, 0.76].iter().enumerate() {
            rows.push(row(&format!("l{i}"), "V", 1994, false, *plot));
        }
        let p = panel(rows);
        let t = |o: &Observation| o.treated;
        let u = |o: &Observation| !o.treated;
        let table = group_comparison(&p, &t, &u, &["plot_size".into()], 1994).unwrap();
        assert!((table[0].mean_a - 1.53).abs() < 1e-12);
        assert!((table[0].mean_b - 0.76).abs() < 1e-12);
        assert!(table[0].p_value.unwrap() < 0.01);

        let same = group_comparison(&p, &t, &t, &["plot_size".into()], 1994).unwrap();
        assert_eq!(same[0].p_value, Some(1.0));
        assert!(matches!(
            group_comparison(&p, &t, &u, &["plot_size".into()], 2000),
            Err(Error::DegenerateSample(_))
        ));
    }

    #[test]
    fn single_observation_group_omits_p_value() {
        let mut rows = vec![row("a", "V", 1994, false, 1.0), row("b", "V", 1994, false, 2.0)];
        rows[0].treated = true;
        let p = panel(rows);
        let table = group_comparison(&p, &|o| o.treated, &|o| !o.treated, &["plot_size".into()], 1994).unwrap();
        assert_eq!(table[0].p_value, None);
        assert_eq!(table[0].mean_a, 1.0);
    }

    #[test]
    fn group_rules_resolve() {
        let p = toy_village();
        let t = CategoryThresholds::default();
        let adopters = GroupRule::Adopter.predicate(&p, 1996, &t).unwrap();
        let n = p.rows.iter().filter(|r| r.year == 1996 && adopters(r)).count();
        assert_eq!(n, 3);
        let early = GroupRule::Category(vec![AdopterCategory::EarlyAdopter])
            .predicate(&p, 1996, &t)
            .unwrap();
        assert_eq!(p.rows.iter().filter(|r| r.year == 1996 && early(r)).count(), 1);
    }
}
