//! Descriptive outputs: diffusion curves, adopter categories,
//! fractionalization and group comparison tables.

use std::collections::{BTreeMap, BTreeSet};

use frontier_match::descriptives::{
    categorize_households, diffusion_series, fractionalization_by, group_comparison,
    ComparisonTable, Dimension,
};
use frontier_match::{CovariateKind, PanelDataset};
use serde::Serialize;

use crate::config::RunConfig;
use crate::{slug, Failure, OutputDir};

#[derive(Debug, Serialize)]
struct Fractionalization {
    ethnicity: f64,
    religion: f64,
}

fn fractionalization_of(panel: &PanelDataset, village: Option<&str>) -> Result<Fractionalization, Failure> {
    let index = |d| {
        fractionalization_by(panel, d, village)
            .map(|f| f.value)
            .map_err(|e| Failure::from_core("fractionalization", e))
    };
    Ok(Fractionalization {
        ethnicity: index(Dimension::Ethnicity)?,
        religion: index(Dimension::Religion)?,
    })
}

/// Writes every descriptive file under `describe/` and returns their paths.
pub fn write_descriptives(
    panel: &PanelDataset,
    config: &RunConfig,
    out: &OutputDir,
) -> Result<Vec<String>, Failure> {
    let io = |e: String| Failure::Config(format!("write failed: {e}"));
    let describe = &config.describe;
    let villages: BTreeSet<String> = panel.villages().into_iter().map(String::from).collect();
    let mut files = Vec::new();

    let mut groups: Vec<(String, BTreeSet<String>)> = vec![("all".into(), villages.clone())];
    groups.extend(describe.village_groups.iter().map(|(k, v)| (k.clone(), v.clone())));
    groups.extend(villages.iter().map(|v| (format!("village:{v}"), BTreeSet::from([v.clone()]))));
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Failure::Config(format!("csv: {e}"));
    w.write_record(["group", "year", "adopters", "households", "share"])
        .map_err(csv_err)?;
    for (name, members) in &groups {
        let series = diffusion_series(panel, members)
            .map_err(|e| Failure::from_core(&format!("diffusion for `{name}`"), e))?;
        for p in &series.points {
            w.write_record([
                name.clone(),
                p.year.to_string(),
                p.adopters.to_string(),
                p.households.to_string(),
                p.share.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Failure::Config(e.to_string()))?;
    files.push(out.write("describe/diffusion.csv", &bytes).map_err(io)?);

    let categories = categorize_households(panel, &describe.thresholds)
        .map_err(|e| Failure::from_core("adopter categories", e))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["household_id", "village", "adoption_year", "share_at_adoption", "category"])
        .map_err(csv_err)?;
    for c in &categories {
        w.write_record([
            c.household_id.clone(),
            c.village.clone(),
            c.adoption_year.to_string(),
            c.share_at_adoption.to_string(),
            c.category.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::Config(e.to_string()))?;
    files.push(out.write("describe/categories.csv", &bytes).map_err(io)?);

    let mut by_village = BTreeMap::new();
    for v in &villages {
        by_village.insert(v.clone(), fractionalization_of(panel, Some(v))?);
    }
    let frac = serde_json::json!({
        "overall": fractionalization_of(panel, None)?,
        "villages": by_village,
    });
    files.push(out.write_json("describe/fractionalization.json", &frac).map_err(io)?);

    let numeric: Vec<String> = panel
        .schema
        .entries()
        .iter()
        .filter(|c| c.kind != CovariateKind::Categorical)
        .map(|c| c.name.clone())
        .collect();
    for spec in &describe.comparisons {
        let context = format!("comparison `{}`", spec.name);
        let rule = |r: &frontier_match::descriptives::GroupRule| {
            r.predicate(panel, spec.year, &describe.thresholds)
                .map_err(|e| Failure::from_core(&context, e))
        };
        let (a, b) = (rule(&spec.group_a)?, rule(&spec.group_b)?);
        let variables = if spec.variables.is_empty() { &numeric } else { &spec.variables };
        let rows = group_comparison(panel, &*a, &*b, variables, spec.year)
            .map_err(|e| Failure::from_core(&context, e))?;
        let table = ComparisonTable {
            year: spec.year,
            label_a: spec.label_a.clone(),
            label_b: spec.label_b.clone(),
            rows,
        };
        let rel = format!("describe/comparison_{}.csv", slug(&spec.name));
        files.push(out.write_with(&rel, |buf| table.write_csv(buf)).map_err(io)?);
    }
    Ok(files)
}
