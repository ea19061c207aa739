//! Command execution: panel loading, sample construction, the concurrent
//! cell sweep and the manifest.

use std::collections::BTreeMap;
use std::path::PathBuf;

use frontier_match::data::{parse_dataset_with, write_dataset, ParseOptions};
use frontier_match::estimation::estimate_att_with;
use frontier_match::frontier::build_frontier_ami_with;
use frontier_match::metrics::Coarsener;
use frontier_match::{
    balance_report, build_frontier_l1, build_full_pooling, build_partial_pooling,
    estimate_covariance, select_balanced_subset, simulate, simulated_schema, subset_by,
    validate, AttEstimate, BinningSpec, Frontier, GeneratorConfig, MatchingSample, PanelDataset,
    PoolingConfig, SeMethod, SubsetFilter, ValidationReport, SIM_COVARIATES,
};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{MetricSpec, RunConfig, SampleKind};
use crate::{describe, slug, Failure, OutputDir, EXIT_PARTIAL};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Validate,
    BuildSample,
    Frontier,
    Estimate,
    Describe,
    Simulate,
    Run,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::BuildSample => "build-sample",
            Command::Frontier => "frontier",
            Command::Estimate => "estimate",
            Command::Describe => "describe",
            Command::Simulate => "simulate",
            Command::Run => "run",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Options {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub strict: bool,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub exit_code: u8,
    pub output_dir: PathBuf,
    pub messages: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Skipped,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellRecord {
    pub id: String,
    pub sample: String,
    pub metric: String,
    pub filter: String,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub files: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counts: Option<CellCounts>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellCounts {
    pub units: usize,
    pub treated: usize,
    pub control: usize,
    pub frontier_points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matched_units: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
struct SampleRecord {
    name: String,
    status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    units: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    treated: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
struct FileEntry {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    core_version: &'static str,
    command: &'static str,
    config_sha256: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    input_sha256: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    strict: bool,
    exit_code: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    validation: Option<&'a ValidationReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    samples: Vec<SampleRecord>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    cells: Vec<CellRecord>,
    files: Vec<FileEntry>,
}

/// Everything that ends up in the manifest.
struct Run {
    command: Command,
    out: OutputDir,
    config_sha256: String,
    input_sha256: Option<String>,
    seed: Option<u64>,
    strict: bool,
    validation: Option<ValidationReport>,
    samples: Vec<SampleRecord>,
    cells: Vec<CellRecord>,
    files: Vec<String>,
    messages: Vec<String>,
}

impl Run {
    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), Failure> {
        let rel = self.out.write(rel, bytes).map_err(write_failure)?;
        self.files.push(rel);
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), Failure> {
        let rel = self.out.write_json(rel, value).map_err(write_failure)?;
        self.files.push(rel);
        Ok(())
    }

    /// Writes the manifest and returns the finished outcome.
    fn finish(self, exit_code: u8) -> Result<Outcome, Failure> {
        let mut paths: Vec<&String> = self
            .files
            .iter()
            .chain(self.cells.iter().flat_map(|c| c.files.iter()))
            .collect();
        paths.sort();
        paths.dedup();
        let files = paths
            .into_iter()
            .map(|p| {
                let bytes = std::fs::read(self.out.root().join(p))
                    .map_err(|e| Failure::Config(format!("cannot re-read {p}: {e}")))?;
                Ok(FileEntry {
                    path: p.clone(),
                    sha256: sha256_hex(&bytes),
                })
            })
            .collect::<Result<Vec<_>, Failure>>()?;
        let manifest = Manifest {
            tool: "frontier-match",
            version: env!("CARGO_PKG_VERSION"),
            core_version: frontier_match::VERSION,
            command: self.command.name(),
            config_sha256: self.config_sha256,
            input_sha256: self.input_sha256,
            seed: self.seed,
            strict: self.strict,
            exit_code,
            validation: self.validation.as_ref(),
            samples: self.samples,
            cells: self.cells,
            files,
        };
        self.out
            .write_json("manifest.json", &manifest)
            .map_err(write_failure)?;
        Ok(Outcome {
            exit_code,
            output_dir: self.out.root().to_path_buf(),
            messages: self.messages,
        })
    }
}

fn write_failure(e: String) -> Failure {
    Failure::Config(format!("cannot write output: {e}"))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Runs one command. `Err` means nothing useful was produced; a completed
/// run with failed cells returns exit code 3 in its `Outcome`.
pub fn execute(command: Command, options: &Options) -> Result<Outcome, Failure> {
    if options.jobs == Some(0) {
        return Err(Failure::Config("--jobs must be at least 1".into()));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = options.jobs {
        builder = builder.num_threads(jobs);
    }
    let pool = builder
        .build()
        .map_err(|e| Failure::Config(format!("thread pool: {e}")))?;
    pool.install(|| match command {
        Command::Simulate => run_simulate(options),
        _ => run_analysis(command, options),
    })
}

fn load_config(options: &Options) -> Result<RunConfig, Failure> {
    let path = options
        .config
        .as_ref()
        .ok_or_else(|| Failure::Config("this command needs --config".into()))?;
    let mut config = RunConfig::load(path)?;
    if let Some(seed) = options.seed {
        config.seed = Some(seed);
    }
    if let (Some(seed), SeMethod::Bootstrap { replications, .. }) = (config.seed, config.standard_error) {
        config.standard_error = SeMethod::Bootstrap { replications, seed };
    }
    if let (Some(seed), Some(g)) = (config.seed, config.generator.as_mut()) {
        g.seed = seed;
    }
    Ok(config)
}

fn output_root(config: Option<&RunConfig>, options: &Options) -> Result<PathBuf, Failure> {
    if let Some(out) = &options.out {
        return Ok(out.clone());
    }
    let config = config.ok_or_else(|| Failure::Config("no output directory; pass --out".into()))?;
    let dir = config
        .output_dir
        .as_ref()
        .ok_or_else(|| Failure::Config("no output directory; pass --out or set output_dir".into()))?;
    Ok(match &config.base_dir {
        Some(base) if dir.is_relative() => base.join(dir),
        _ => dir.clone(),
    })
}

/// Reads and parses the panel; also returns the hash of the input bytes.
fn load_panel(config: &RunConfig) -> Result<(PanelDataset, String, Vec<usize>), Failure> {
    let schema = config
        .schema
        .clone()
        .ok_or_else(|| Failure::Config("config has no `schema`".into()))?;
    let path = config.input_path()?;
    let bytes = std::fs::read(&path)
        .map_err(|e| Failure::Config(format!("cannot read input {}: {e}", path.display())))?;
    let options = ParseOptions {
        drop_incomplete_rows: config.drop_incomplete_rows,
    };
    let (mut panel, dropped) = parse_dataset_with(bytes.as_slice(), &schema, options)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    panel.survey_years = config.survey_years.clone();
    if let Some((a, b)) = config.study_window {
        panel.study_window = Some((a, b));
    }
    Ok((panel, sha256_hex(&bytes), dropped))
}

fn run_analysis(command: Command, options: &Options) -> Result<Outcome, Failure> {
    let config = load_config(options)?;
    let out = OutputDir::create(&output_root(Some(&config), options)?)?;
    let (panel, input_sha256, dropped) = load_panel(&config)?;

    let mut report = validate(&panel);
    for row in &dropped {
        report.warnings.push(frontier_match::data::Issue {
            row: *row,
            message: "incomplete row dropped".into(),
        });
    }
    for w in &report.warnings {
        log::warn!("row {}: {}", w.row, w.message);
    }
    let mut run = Run {
        command,
        out,
        config_sha256: config.digest(),
        input_sha256: Some(input_sha256),
        seed: config.seed,
        strict: options.strict,
        validation: Some(report.clone()),
        samples: Vec::new(),
        cells: Vec::new(),
        files: Vec::new(),
        messages: Vec::new(),
    };
    if matches!(command, Command::Validate | Command::Run) {
        run.write_json("validation.json", &report)?;
    }
    let invalid = !report.is_ok() || (options.strict && !report.warnings.is_empty());
    if invalid {
        let what = if report.is_ok() {
            format!("{} validation warnings under --strict", report.warnings.len())
        } else {
            format!("{} validation errors", report.errors.len())
        };
        run.messages.push(format!("data error: {what}"));
        return run.finish(2);
    }
    if command == Command::Validate {
        return run.finish(0);
    }

    let mut exit_code = 0;
    if matches!(command, Command::Describe | Command::Run) {
        let files = describe::write_descriptives(&panel, &config, &run.out)?;
        run.files.extend(files);
    }
    if command == Command::Describe {
        return run.finish(0);
    }

    let samples = build_samples(&panel, &config)?;
    let mut built = Vec::new();
    for (kind, result) in samples {
        match result {
            Ok(sample) => {
                run.samples.push(SampleRecord {
                    name: kind.name().into(),
                    status: Status::Ok,
                    note: None,
                    units: Some(sample.len()),
                    treated: Some(sample.n_treated()),
                });
                if matches!(command, Command::BuildSample | Command::Run) {
                    let mut buf = Vec::new();
                    sample
                        .write_csv(&mut buf)
                        .map_err(|e| Failure::Config(e.to_string()))?;
                    run.write(&format!("samples/{}.csv", kind.name()), &buf)?;
                }
                built.push((kind, sample));
            }
            Err(e) => {
                run.messages.push(format!("sample {}: {e}", kind.name()));
                run.samples.push(SampleRecord {
                    name: kind.name().into(),
                    status: Status::Failed,
                    note: Some(e.to_string()),
                    units: None,
                    treated: None,
                });
            }
        }
    }
    if built.is_empty() {
        return run.finish(2);
    }
    if built.len() < config.samples.len() {
        exit_code = EXIT_PARTIAL;
    }
    if command == Command::BuildSample {
        return run.finish(exit_code);
    }

    let with_estimates = matches!(command, Command::Estimate | Command::Run);
    let specs = cell_specs(&built, &config);
    let results: Vec<CellRecord> = specs
        .par_iter()
        .map(|spec| run_cell(spec, &config, options.strict, with_estimates, &run.out))
        .collect();
    for cell in &results {
        match cell.status {
            Status::Failed => {
                exit_code = EXIT_PARTIAL;
                run.messages.push(format!(
                    "cell {} failed: {}",
                    cell.id,
                    cell.note.as_deref().unwrap_or("")
                ));
            }
            Status::Skipped => run.messages.push(format!(
                "cell {} skipped: {}",
                cell.id,
                cell.note.as_deref().unwrap_or("")
            )),
            Status::Ok => {}
        }
    }
    run.cells = results;
    run.finish(exit_code)
}

fn build_samples(
    panel: &PanelDataset,
    config: &RunConfig,
) -> Result<Vec<(SampleKind, frontier_match::Result<MatchingSample>)>, Failure> {
    let window = match config.study_window {
        Some(w) => w,
        None => {
            let years = panel.years();
            match (years.first(), years.last()) {
                (Some(&a), Some(&b)) => (a, b),
                _ => return Err(Failure::Data("panel has no rows".into())),
            }
        }
    };
    let schema = config.schema.as_ref().expect("checked by load_panel");
    let pooling = PoolingConfig::new(window, config.covariate_names(schema))
        .with_survey_years(config.survey_years.iter().copied());
    Ok(config
        .samples
        .iter()
        .map(|&kind| {
            let result = match kind {
                SampleKind::FullPooling => build_full_pooling(panel, &pooling),
                SampleKind::PartialPooling => build_partial_pooling(panel, &pooling),
            };
            if let Err(e) = &result {
                if !e.is_data_error() {
                    log::error!("sample {}: {e}", kind.name());
                }
            }
            (kind, result)
        })
        .collect())
}

#[derive(Debug, Clone)]
enum Filter {
    All,
    Subset(SubsetFilter),
}

impl Filter {
    fn name(&self) -> String {
        match self {
            Filter::All => "all".into(),
            Filter::Subset(SubsetFilter::Year(y)) => format!("year_{y}"),
            Filter::Subset(SubsetFilter::Village(v)) => format!("village_{}", slug(v)),
        }
    }
}

struct CellSpec<'a> {
    kind: SampleKind,
    sample: &'a MatchingSample,
    metric: MetricSpec,
    filter: Filter,
}

fn cell_specs<'a>(built: &'a [(SampleKind, MatchingSample)], config: &RunConfig) -> Vec<CellSpec<'a>> {
    let mut specs = Vec::new();
    for (kind, sample) in built {
        let mut filters = Vec::new();
        if config.sweeps.pooled {
            filters.push(Filter::All);
        }
        if config.sweeps.by_year {
            let years: Vec<i32> = match (kind, config.study_window) {
                (SampleKind::PartialPooling, _) => config.survey_years.iter().copied().collect(),
                (_, Some((a, b))) => (a..=b).collect(),
                (_, None) => sample
                    .units
                    .iter()
                    .map(|u| u.year)
                    .collect::<std::collections::BTreeSet<_>>()
                    .into_iter()
                    .collect(),
            };
            filters.extend(years.into_iter().map(|y| Filter::Subset(SubsetFilter::Year(y))));
        }
        if config.sweeps.by_village {
            let villages: std::collections::BTreeSet<&str> =
                sample.units.iter().map(|u| u.village.as_str()).collect();
            filters.extend(
                villages
                    .into_iter()
                    .map(|v| Filter::Subset(SubsetFilter::Village(v.to_string()))),
            );
        }
        for &metric in &config.metrics {
            for filter in &filters {
                specs.push(CellSpec {
                    kind: *kind,
                    sample,
                    metric,
                    filter: filter.clone(),
                });
            }
        }
    }
    specs
}

#[derive(Debug, Serialize)]
struct SelectedPoint<'a> {
    point_index: usize,
    pruned_count: usize,
    remaining_n: usize,
    treated_n: usize,
    control_n: usize,
    imbalance: f64,
    balanced: bool,
    report: &'a frontier_match::BalanceReport,
}

#[derive(Debug, Serialize)]
struct AttSummary<'a> {
    #[serde(flatten)]
    estimate: &'a AttEstimate,
    p_value: f64,
    stars: &'static str,
}

impl<'a> AttSummary<'a> {
    fn of(estimate: &'a AttEstimate) -> Self {
        Self {
            estimate,
            p_value: estimate.p_value(),
            stars: estimate.stars(),
        }
    }
}

/// Files of one cell, rendered in memory so a failing cell writes nothing.
struct CellOutput {
    files: Vec<(&'static str, Vec<u8>)>,
    warnings: Vec<String>,
    counts: CellCounts,
}

enum CellResult {
    Done(CellOutput),
    Skipped(String),
}

fn run_cell(
    spec: &CellSpec<'_>,
    config: &RunConfig,
    strict: bool,
    with_estimates: bool,
    out: &OutputDir,
) -> CellRecord {
    let (sample, metric, filter) = (spec.kind.name(), spec.metric.name(), spec.filter.name());
    let id = format!("{sample}/{metric}/{filter}");
    let mut record = CellRecord {
        id: id.clone(),
        sample: sample.into(),
        metric,
        filter,
        status: Status::Ok,
        note: None,
        warnings: Vec::new(),
        files: Vec::new(),
        counts: None,
    };
    match compute_cell(spec, config, with_estimates) {
        Ok(CellResult::Skipped(note)) => {
            log::info!("cell {id} skipped: {note}");
            record.status = Status::Skipped;
            record.note = Some(note);
        }
        Ok(CellResult::Done(output)) => {
            record.warnings = output.warnings;
            record.counts = Some(output.counts);
            if strict && !record.warnings.is_empty() {
                record.status = Status::Failed;
                record.note = Some("warnings under --strict".into());
                return record;
            }
            for (name, bytes) in output.files {
                match out.write(&format!("cells/{id}/{name}"), &bytes) {
                    Ok(rel) => record.files.push(rel),
                    Err(e) => {
                        record.status = Status::Failed;
                        record.note = Some(format!("write failed: {e}"));
                        return record;
                    }
                }
            }
        }
        Err(e) => {
            log::error!("cell {id}: {e}");
            record.status = Status::Failed;
            record.note = Some(e.to_string());
        }
    }
    record
}

fn json_bytes<T: Serialize>(value: &T) -> frontier_match::Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn compute_cell(
    spec: &CellSpec<'_>,
    config: &RunConfig,
    with_estimates: bool,
) -> frontier_match::Result<CellResult> {
    let sub = match &spec.filter {
        Filter::All => spec.sample.clone(),
        Filter::Subset(f) => match subset_by(spec.sample, f) {
            Ok(s) => s,
            Err(frontier_match::Error::DegenerateSample(_)) => {
                return Ok(CellResult::Skipped("no treated units".into()))
            }
            Err(e) => return Err(e),
        },
    };
    if sub.n_treated() == 0 {
        return Ok(CellResult::Skipped("no treated units".into()));
    }
    if sub.n_control() == 0 {
        return Ok(CellResult::Skipped("no control units".into()));
    }

    let mut warnings = Vec::new();
    let frontier = build_cell_frontier(&sub, spec.metric, config, &mut warnings)?;
    let mut files = Vec::new();
    let mut buf = Vec::new();
    frontier.write_csv(&mut buf)?;
    files.push(("frontier.csv", buf));
    let mut counts = CellCounts {
        units: sub.len(),
        treated: sub.n_treated(),
        control: sub.n_control(),
        frontier_points: frontier.len(),
        matched_units: None,
    };

    if with_estimates {
        let selection = select_balanced_subset(&frontier, &sub, config.alpha)?;
        if !selection.balanced {
            warnings.push(format!(
                "no frontier point is balanced at alpha {}; using the minimum-imbalance point",
                config.alpha
            ));
        }
        let before = balance_report(&sub, config.alpha)?;
        let p = &selection.point;
        let balance = serde_json::json!({
            "alpha": config.alpha,
            "before": before,
            "selected": SelectedPoint {
                point_index: selection.point_index,
                pruned_count: p.pruned_count,
                remaining_n: p.remaining_n(),
                treated_n: p.treated_remaining,
                control_n: p.control_remaining,
                imbalance: p.imbalance,
                balanced: selection.balanced,
                report: &selection.report,
            },
        });
        files.push(("balance.json", json_bytes(&balance)?));

        let matched = frontier.subset(&sub, selection.point_index);
        let att = estimate_att_with(&matched, config.standard_error)?;
        let unmatched = estimate_att_with(&sub, config.standard_error)?;
        let summary = serde_json::json!({
            "point_index": selection.point_index,
            "balanced": selection.balanced,
            "standard_error": config.standard_error,
            "matched": AttSummary::of(&att),
            "unmatched": AttSummary::of(&unmatched),
        });
        files.push(("att.json", json_bytes(&summary)?));
        counts.matched_units = Some(matched.len());
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(CellResult::Done(CellOutput {
        files,
        warnings,
        counts,
    }))
}

fn build_cell_frontier(
    sub: &MatchingSample,
    metric: MetricSpec,
    config: &RunConfig,
    warnings: &mut Vec<String>,
) -> frontier_match::Result<Frontier> {
    match metric.ami_options() {
        None => {
            let spec = BinningSpec::default_for(sub).with_overrides(&config.binning);
            warnings.extend(Coarsener::fit(sub, &spec)?.warnings);
            build_frontier_l1(sub, &spec)
        }
        Some(options) => {
            let cov = estimate_covariance(sub)?;
            let names: Vec<&str> = sub.schema.names().collect();
            if !cov.dropped_columns.is_empty() {
                let dropped: Vec<&str> = cov.dropped_columns.iter().map(|&k| names[k]).collect();
                warnings.push(format!(
                    "covariance drops constant or collinear columns: {}",
                    dropped.join(", ")
                ));
            }
            if cov.ridge > 0.0 {
                warnings.push(format!("covariance regularized with ridge {:e}", cov.ridge));
            }
            let frontier = build_frontier_ami_with(sub, &cov, options)?;
            if frontier.monotonicity_violations > 0 {
                warnings.push(format!(
                    "imbalance rose at {} frontier steps",
                    frontier.monotonicity_violations
                ));
            }
            Ok(frontier)
        }
    }
}

/// Config written next to a simulated panel so `run` can pick it up as is.
fn simulated_run_config(g: &GeneratorConfig) -> RunConfig {
    RunConfig {
        input: Some("panel.csv".into()),
        schema: Some(simulated_schema()),
        study_window: Some((g.start_year, g.end_year)),
        survey_years: g.survey_years.iter().copied().collect(),
        covariates: SIM_COVARIATES.iter().map(|s| s.to_string()).collect(),
        samples: vec![SampleKind::FullPooling, SampleKind::PartialPooling],
        metrics: vec![MetricSpec::Ami {
            allow_treated_pruning: true,
            reestimate_covariance: false,
        }],
        binning: BinningSpec::default(),
        alpha: 0.10,
        sweeps: Default::default(),
        standard_error: SeMethod::Unpooled,
        drop_incomplete_rows: false,
        output_dir: None,
        seed: Some(g.seed),
        generator: None,
        describe: Default::default(),
        base_dir: None,
    }
}

fn run_simulate(options: &Options) -> Result<Outcome, Failure> {
    let config = match &options.config {
        Some(_) => Some(load_config(options)?),
        None => None,
    };
    let mut generator = config
        .as_ref()
        .and_then(|c| c.generator.clone())
        .unwrap_or_default();
    if let Some(seed) = options.seed.or(config.as_ref().and_then(|c| c.seed)) {
        generator.seed = seed;
    }
    generator
        .validate()
        .map_err(|e| Failure::Config(e.to_string()))?;
    let out = OutputDir::create(&output_root(config.as_ref(), options)?)?;
    let sim = simulate(&generator).map_err(|e| Failure::from_core("simulate", e))?;

    let digest = {
        let bytes = serde_json::to_vec(&generator).expect("generator serializes");
        sha256_hex(&bytes)
    };
    let mut run = Run {
        command: Command::Simulate,
        out,
        config_sha256: digest,
        input_sha256: None,
        seed: Some(generator.seed),
        strict: options.strict,
        validation: None,
        samples: Vec::new(),
        cells: Vec::new(),
        files: Vec::new(),
        messages: Vec::new(),
    };
    let mut panel_csv = Vec::new();
    write_dataset(&mut panel_csv, &sim.panel).map_err(|e| Failure::Config(e.to_string()))?;
    run.write("panel.csv", &panel_csv)?;

    let mut run_config = serde_json::to_value(simulated_run_config(&generator))
        .expect("config serializes");
    if let Some(map) = run_config.as_object_mut() {
        map.retain(|_, v| !v.is_null());
    }
    run.write_json("run.json", &run_config)?;

    let rows = sim.panel.rows.len();
    let treated_rows = sim.panel.rows.iter().filter(|r| r.treated).count();
    let mut by_village: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &sim.panel.rows {
        *by_village.entry(r.village.as_str()).or_insert(0) += 1;
    }
    let truth = serde_json::json!({
        "tau": generator.tau,
        "generator": generator,
        "rows": rows,
        "treated_rows": treated_rows,
        "rows_by_village": by_village,
        "mean_baseline": sim.baseline.iter().sum::<f64>() / rows.max(1) as f64,
    });
    run.write_json("truth.json", &truth)?;
    run.finish(0)
}
