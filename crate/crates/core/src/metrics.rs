//! Imbalance measures: multivariate-histogram L1 and average Mahalanobis
//! imbalance (AMI), with the coarsening and covariance estimation they need.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::CovariateKind;
use crate::error::{Error, Result};
use crate::sample::MatchingSample;

/// How one covariate is cut into histogram bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum BinningRule {
    /// One bin per distinct value.
    Categorical,
    /// `k` bins with nearest-rank quantile cut points on the pooled sample.
    Quantile { k: usize },
    /// Interior cut points; a value equal to a cut point falls in the lower bin.
    FixedEdges { edges: Vec<f64> },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BinningSpec {
    pub rules: BTreeMap<String, BinningRule>,
}

impl BinningSpec {
    /// Raw levels for binary columns; `min(10, distinct values)` quantile
    /// bins for continuous ones.
    pub fn default_for(sample: &MatchingSample) -> Self {
        let rules = sample
            .schema
            .entries()
            .iter()
            .enumerate()
            .map(|(k, spec)| {
                let rule = match spec.kind {
                    CovariateKind::Binary | CovariateKind::Categorical => BinningRule::Categorical,
                    CovariateKind::Continuous => {
                        let mut col = sample.column(k);
                        col.sort_by(f64::total_cmp);
                        col.dedup();
                        BinningRule::Quantile {
                            k: col.len().clamp(1, 10),
                        }
                    }
                };
                (spec.name.clone(), rule)
            })
            .collect();
        Self { rules }
    }

    /// Default rules overridden by any explicitly given ones.
    pub fn with_overrides(mut self, overrides: &BinningSpec) -> Self {
        for (k, v) in &overrides.rules {
            self.rules.insert(k.clone(), v.clone());
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
enum ColumnBins {
    Levels(Vec<f64>),
    Edges(Vec<f64>),
}

impl ColumnBins {
    fn bin(&self, x: f64) -> u32 {
        match self {
            ColumnBins::Levels(levels) => levels
                .binary_search_by(|l| l.total_cmp(&x))
                .unwrap_or_else(|i| i) as u32,
            ColumnBins::Edges(edges) => edges.partition_point(|&e| e < x) as u32,
        }
    }
}

/// Bin boundaries fitted once on a sample and reused for any subset of it.
#[derive(Debug, Clone, PartialEq)]
pub struct Coarsener {
    columns: Vec<ColumnBins>,
    pub warnings: Vec<String>,
}

/// Nearest-rank quantile cut points: the `j`-th cut is the value of rank
/// `ceil(j * n / k)` in the sorted sample. Cuts at or above the maximum are
/// dropped since they would only produce empty bins.
pub fn nearest_rank_edges(values: &[f64], k: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n == 0 {
        return Vec::new();
    }
    let max = sorted[n - 1];
    let mut edges: Vec<f64> = (1..k)
        .map(|j| {
            let rank = (j * n).div_ceil(k).max(1);
            sorted[rank - 1]
        })
        .filter(|&e| e < max)
        .collect();
    edges.dedup();
    edges
}

impl Coarsener {
    pub fn fit(sample: &MatchingSample, spec: &BinningSpec) -> Result<Self> {
        let mut columns = Vec::with_capacity(sample.dim());
        let mut warnings = Vec::new();
        for (k, cov) in sample.schema.entries().iter().enumerate() {
            let rule = spec.rules.get(&cov.name).ok_or_else(|| {
                Error::Config(format!("binning spec has no rule for `{}`", cov.name))
            })?;
            let col = sample.column(k);
            let bins = match rule {
                BinningRule::Categorical => {
                    let mut levels = col;
                    levels.sort_by(f64::total_cmp);
                    levels.dedup();
                    ColumnBins::Levels(levels)
                }
                BinningRule::Quantile { k: bins } => {
                    if *bins == 0 {
                        return Err(Error::Config(format!(
                            "`{}`: quantile bin count must be at least 1",
                            cov.name
                        )));
                    }
                    let edges = nearest_rank_edges(&col, *bins);
                    if *bins > 1 && edges.is_empty() {
                        let msg = format!(
                            "`{}` has no quantile spread; using a single bin",
                            cov.name
                        );
                        log::warn!("{msg}");
                        warnings.push(msg);
                    }
                    ColumnBins::Edges(edges)
                }
                BinningRule::FixedEdges { edges } => {
                    if edges.windows(2).any(|w| w[0] >= w[1]) || edges.iter().any(|e| !e.is_finite()) {
                        return Err(Error::Config(format!(
                            "`{}`: fixed edges must be finite and strictly increasing",
                            cov.name
                        )));
                    }
                    ColumnBins::Edges(edges.clone())
                }
            };
            columns.push(bins);
        }
        Ok(Self { columns, warnings })
    }

    pub fn signature(&self, x: &[f64]) -> Vec<u32> {
        self.columns.iter().zip(x).map(|(c, &v)| c.bin(v)).collect()
    }

    /// Tabulate the given units of `sample` into strata.
    pub fn tabulate(&self, sample: &MatchingSample, indices: &[usize]) -> BinnedSample {
        let mut map: BTreeMap<Vec<u32>, (usize, usize)> = BTreeMap::new();
        let sigs: Vec<Vec<u32>> = indices
            .iter()
            .map(|&i| self.signature(&sample.units[i].covariates))
            .collect();
        for (&i, sig) in indices.iter().zip(&sigs) {
            let e = map.entry(sig.clone()).or_insert((0, 0));
            if sample.units[i].treated {
                e.0 += 1;
            } else {
                e.1 += 1;
            }
        }
        let position: HashMap<&Vec<u32>, usize> =
            map.keys().enumerate().map(|(p, k)| (k, p)).collect();
        let assignment = sigs.iter().map(|s| position[s]).collect();
        let strata: Vec<Stratum> = map
            .iter()
            .map(|(sig, &(t, c))| Stratum {
                signature: sig.clone(),
                treated: t,
                control: c,
            })
            .collect();
        BinnedSample {
            total_treated: strata.iter().map(|s| s.treated).sum(),
            total_control: strata.iter().map(|s| s.control).sum(),
            strata,
            units: indices.to_vec(),
            assignment,
            warnings: self.warnings.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Stratum {
    pub signature: Vec<u32>,
    pub treated: usize,
    pub control: usize,
}

/// Units tabulated into multivariate histogram strata, ordered by signature.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinnedSample {
    pub strata: Vec<Stratum>,
    pub total_treated: usize,
    pub total_control: usize,
    /// Sample indices of the tabulated units.
    pub units: Vec<usize>,
    /// Stratum position of each entry of `units`.
    pub assignment: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Coarsen every unit of `sample` with bins fitted on the pooled sample.
pub fn coarsen(sample: &MatchingSample, spec: &BinningSpec) -> Result<BinnedSample> {
    let coarsener = Coarsener::fit(sample, spec)?;
    let all: Vec<usize> = (0..sample.len()).collect();
    Ok(coarsener.tabulate(sample, &all))
}

/// Half the summed absolute gap between treated and control stratum shares.
pub fn l1_imbalance(binned: &BinnedSample) -> Result<f64> {
    let counts: Vec<(usize, usize)> = binned.strata.iter().map(|s| (s.treated, s.control)).collect();
    l1_from_counts(&counts, binned.total_treated, binned.total_control)
}

pub(crate) fn l1_from_counts(counts: &[(usize, usize)], treated: usize, control: usize) -> Result<f64> {
    if treated == 0 || control == 0 {
        return Err(Error::DegenerateSample(format!(
            "L1 needs both groups (treated {treated}, control {control})"
        )));
    }
    let (t, c) = (treated as f64, control as f64);
    let sum: f64 = counts
        .iter()
        .map(|&(ti, ci)| (ti as f64 / t - ci as f64 / c).abs())
        .sum();
    Ok((0.5 * sum).clamp(0.0, 1.0))
}

/// Sample covariance with the inverse used by the Mahalanobis distance.
///
/// Constant and exactly collinear columns are dropped before inversion; if
/// the retained block is still numerically singular a ridge of
/// `1e-8 * trace / d` is added to its diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceModel {
    pub matrix: DMatrix<f64>,
    pub retained: Vec<usize>,
    pub dropped_columns: Vec<usize>,
    pub ridge: f64,
    /// Inverse of the retained block (ridge included).
    pub inverse: DMatrix<f64>,
    /// Lower Cholesky factor of the retained block (ridge included).
    factor: DMatrix<f64>,
}

const VARIANCE_TOL: f64 = 1e-12;
const COLLINEAR_TOL: f64 = 1e-10;
const INVERSE_TOL: f64 = 1e-8;

impl CovarianceModel {
    /// Build from a given covariance matrix (must be square and symmetric).
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        let d = matrix.nrows();
        if d == 0 || matrix.ncols() != d {
            return Err(Error::Shape {
                expected: d,
                got: matrix.ncols(),
            });
        }
        let scale = matrix.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if (0..d).any(|i| (0..i).any(|j| (matrix[(i, j)] - matrix[(j, i)]).abs() > 1e-12 * scale.max(1.0))) {
            return Err(Error::Domain("covariance matrix is not symmetric".into()));
        }

        let mut retained: Vec<usize> = Vec::new();
        let mut dropped = Vec::new();
        // Incremental Cholesky over candidate columns; a column whose residual
        // variance given the retained ones vanishes is collinear.
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for j in 0..d {
            let sjj = matrix[(j, j)];
            if sjj <= VARIANCE_TOL * scale.max(f64::MIN_POSITIVE) || sjj <= 0.0 {
                dropped.push(j);
                continue;
            }
            let mut y = Vec::with_capacity(retained.len());
            for (a, &ka) in retained.iter().enumerate() {
                let s: f64 = (0..a).map(|b| rows[a][b] * y[b]).sum();
                y.push((matrix[(ka, j)] - s) / rows[a][a]);
            }
            let residual = sjj - y.iter().map(|v| v * v).sum::<f64>();
            if residual <= COLLINEAR_TOL * sjj {
                dropped.push(j);
                continue;
            }
            y.push(residual.sqrt());
            rows.push(y);
            retained.push(j);
        }
        if retained.is_empty() {
            return Err(Error::DegenerateSample(
                "every covariate is constant; Mahalanobis distance is undefined".into(),
            ));
        }

        let r = retained.len();
        let block = DMatrix::from_fn(r, r, |a, b| matrix[(retained[a], retained[b])]);
        let trace = block.trace();
        let mut ridge = 0.0;
        let (factor, inverse) = loop {
            let mut m = block.clone();
            for i in 0..r {
                m[(i, i)] += ridge;
            }
            if let Some(ch) = m.clone().cholesky() {
                let inv = ch.inverse();
                let err = (&m * &inv - DMatrix::identity(r, r)).amax();
                if err <= INVERSE_TOL {
                    break (ch.l(), inv);
                }
            }
            if ridge > 0.0 {
                return Err(Error::DegenerateSample(
                    "covariance block not invertible even after ridge".into(),
                ));
            }
            ridge = 1e-8 * trace / r as f64;
            log::warn!("covariance near-singular; applying ridge {ridge:e}");
        };

        Ok(Self {
            matrix,
            retained,
            dropped_columns: dropped,
            ridge,
            inverse,
            factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Map a full covariate vector to coordinates where Mahalanobis distance
    /// is Euclidean: `z = L⁻¹ x_retained` with `S = L Lᵀ`.
    pub fn whiten(&self, x: &[f64]) -> Vec<f64> {
        let v = DVector::from_iterator(self.retained.len(), self.retained.iter().map(|&k| x[k]));
        match self.factor.solve_lower_triangular(&v) {
            Some(z) => z.iter().copied().collect(),
            None => unreachable!("Cholesky factor has a positive diagonal"),
        }
    }

    pub fn write_csv<W: Write>(&self, sink: W, names: &[&str]) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let mut header = vec![String::new()];
        header.extend(names.iter().map(|s| s.to_string()));
        w.write_record(&header)?;
        for i in 0..self.dim() {
            let mut rec = vec![names.get(i).copied().unwrap_or("").to_string()];
            rec.extend((0..self.dim()).map(|j| self.matrix[(i, j)].to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Pooled covariance (denominator `n - 1`) of the sample's covariates.
pub fn estimate_covariance(sample: &MatchingSample) -> Result<CovarianceModel> {
    let rows: Vec<&[f64]> = sample.units.iter().map(|u| u.covariates.as_slice()).collect();
    covariance_of_rows(&rows, sample.dim())
}

pub(crate) fn covariance_of_rows(rows: &[&[f64]], d: usize) -> Result<CovarianceModel> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "covariance needs at least 2 units, got {n}"
        )));
    }
    if d == 0 {
        return Err(Error::InsufficientData("no covariates".into()));
    }
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r.iter()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut s = DMatrix::<f64>::zeros(d, d);
    for r in rows {
        for i in 0..d {
            let di = r[i] - mean[i];
            for j in 0..=i {
                s[(i, j)] += di * (r[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in 0..=i {
            let v = s[(i, j)] / (n - 1) as f64;
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    CovarianceModel::from_matrix(s)
}

/// `sqrt((x_i - x_j)ᵀ S⁻¹ (x_i - x_j))` over the retained columns.
pub fn mahalanobis(x_i: &[f64], x_j: &[f64], cov: &CovarianceModel) -> Result<f64> {
    for x in [x_i, x_j] {
        if x.len() != cov.dim() {
            return Err(Error::Shape {
                expected: cov.dim(),
                got: x.len(),
            });
        }
    }
    let diff = DVector::from_iterator(
        cov.retained.len(),
        cov.retained.iter().map(|&k| x_i[k] - x_j[k]),
    );
    let q = diff.dot(&(&cov.inverse * &diff));
    Ok(q.max(0.0).sqrt())
}

/// Whitened covariates in a flat row-major buffer.
#[derive(Debug, Clone)]
pub(crate) struct Whitened {
    pub data: Vec<f64>,
    pub dim: usize,
}

impl Whitened {
    pub fn new(sample: &MatchingSample, cov: &CovarianceModel) -> Result<Self> {
        if sample.dim() != cov.dim() {
            return Err(Error::Shape {
                expected: cov.dim(),
                got: sample.dim(),
            });
        }
        let dim = cov.retained.len();
        let mut data = Vec::with_capacity(sample.len() * dim);
        for u in &sample.units {
            data.extend(cov.whiten(&u.covariates));
        }
        Ok(Self { data, dim })
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn sq_dist(&self, i: usize, j: usize) -> f64 {
        self.row(i)
            .iter()
            .zip(self.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// Nearest unit of the opposite group among `candidates` (scanned in
    /// order, so the lowest index wins ties when candidates are sorted).
    /// Returns `(distance, index)`.
    pub fn nearest(&self, i: usize, candidates: &[usize]) -> (f64, usize) {
        let mut best = (f64::INFINITY, usize::MAX);
        for &j in candidates {
            let d = self.sq_dist(i, j);
            if d < best.0 {
                best = (d, j);
            }
        }
        (best.0.sqrt(), best.1)
    }
}

/// Nearest-opposite distance of every listed unit, in parallel.
pub(crate) fn nearest_opposite(
    w: &Whitened,
    treated: &[bool],
    active: &[usize],
) -> Vec<(f64, usize)> {
    let (t, c): (Vec<usize>, Vec<usize>) = active.iter().partition(|&&i| treated[i]);
    active
        .par_iter()
        .map(|&i| w.nearest(i, if treated[i] { &c } else { &t }))
        .collect()
}

/// Mean over all units of the Mahalanobis distance to the nearest unit of
/// the opposite treatment group.
pub fn ami(sample: &MatchingSample, cov: &CovarianceModel) -> Result<f64> {
    sample.ensure_non_degenerate()?;
    let w = Whitened::new(sample, cov)?;
    let treated: Vec<bool> = sample.units.iter().map(|u| u.treated).collect();
    let active: Vec<usize> = (0..sample.len()).collect();
    let nn = nearest_opposite(&w, &treated, &active);
    Ok(nn.iter().map(|p| p.0).sum::<f64>() / nn.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CovariateSchema, CovariateSpec};
    use crate::sample::{Provenance, Unit};

    pub(crate) fn sample_from(points: &[(bool, Vec<f64>)], kinds: &[CovariateKind]) -> MatchingSample {
        let schema = CovariateSchema::new(
            kinds
                .iter()
                .enumerate()
                .map(|(k, &kind)| CovariateSpec::new(format!("x{k}"), kind, ""))
                .collect(),
        )
        .unwrap();
        let units = points
            .iter()
            .enumerate()
            .map(|(i, (t, x))| Unit {
                unit_id: format!("u{i}"),
                year: 2000,
                village: "v".into(),
                treated: *t,
                outcome: false,
                covariates: x.clone(),
            })
            .collect();
        MatchingSample::new(schema, units, Provenance::FullPooling).unwrap()
    }

    #[test]
    fn one_binary_covariate_tabulation() {
        let s = sample_from(
            &[
                (true, vec![0.0]),
                (true, vec![1.0]),
                (false, vec![0.0]),
                (false, vec![1.0]),
            ],
            &[CovariateKind::Binary],
        );
        let b = coarsen(&s, &BinningSpec::default_for(&s)).unwrap();
        let counts: Vec<_> = b.strata.iter().map(|s| (s.signature.clone(), s.treated, s.control)).collect();
        assert_eq!(counts, vec![(vec![0], 1, 1), (vec![1], 1, 1)]);
        assert_eq!(l1_imbalance(&b).unwrap(), 0.0);
    }

    #[test]
    fn two_binary_covariates_match_hand_tabulation() {
        // treated: (0,0) (0,1) (1,1) (1,1); control: (0,0) (0,0) (1,0) (0,1)
        let pts = vec![
            (true, vec![0.0, 0.0]),
            (true, vec![0.0, 1.0]),
            (true, vec![1.0, 1.0]),
            (true, vec![1.0, 1.0]),
            (false, vec![0.0, 0.0]),
            (false, vec![0.0, 0.0]),
            (false, vec![1.0, 0.0]),
            (false, vec![0.0, 1.0]),
        ];
        let s = sample_from(&pts, &[CovariateKind::Binary, CovariateKind::Binary]);
        let b = coarsen(&s, &BinningSpec::default_for(&s)).unwrap();
        let counts: Vec<_> = b.strata.iter().map(|s| (s.signature.clone(), s.treated, s.control)).collect();
        assert_eq!(
            counts,
            vec![
                (vec![0, 0], 1, 2),
                (vec![0, 1], 1, 1),
                (vec![1, 0], 0, 1),
                (vec![1, 1], 2, 0)
            ]
        );
        // 0.5 * (|1/4-2/4| + 0 + |0-1/4| + |2/4-0|) = 0.5
        assert!((l1_imbalance(&b).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn quantile_two_bins_splits_at_median() {
        assert_eq!(nearest_rank_edges(&[1.0, 2.0, 3.0, 4.0], 2), vec![2.0]);
        let s = sample_from(
            &[
                (true, vec![1.0]),
                (false, vec![2.0]),
                (true, vec![3.0]),
                (false, vec![4.0]),
            ],
            &[CovariateKind::Continuous],
        );
        let mut spec = BinningSpec::default();
        spec.rules.insert("x0".into(), BinningRule::Quantile { k: 2 });
        let b = coarsen(&s, &spec).unwrap();
        let sigs: Vec<u32> = b.assignment.iter().map(|&p| b.strata[p].signature[0]).collect();
        assert_eq!(sigs, vec![0, 0, 1, 1]);
    }

    #[test]
    fn constant_column_collapses_to_single_bin_with_warning() {
        let s = sample_from(
            &[(true, vec![5.0]), (false, vec![5.0]), (false, vec![5.0])],
            &[CovariateKind::Continuous],
        );
        let mut spec = BinningSpec::default();
        spec.rules.insert("x0".into(), BinningRule::Quantile { k: 4 });
        let b = coarsen(&s, &spec).unwrap();
        assert_eq!(b.strata.len(), 1);
        assert_eq!(b.warnings.len(), 1);
    }

    #[test]
    fn binning_spec_validation() {
        let s = sample_from(&[(true, vec![1.0]), (false, vec![2.0])], &[CovariateKind::Continuous]);
        assert!(coarsen(&s, &BinningSpec::default()).is_err());
        let mut spec = BinningSpec::default();
        spec.rules.insert("x0".into(), BinningRule::FixedEdges { edges: vec![2.0, 1.0] });
        assert!(coarsen(&s, &spec).is_err());
        spec.rules.insert("x0".into(), BinningRule::Quantile { k: 0 });
        assert!(coarsen(&s, &spec).is_err());
        spec.rules.insert("x0".into(), BinningRule::FixedEdges { edges: vec![1.0, 1.5] });
        let b = coarsen(&s, &spec).unwrap();
        let sigs: Vec<_> = b.strata.iter().map(|s| s.signature[0]).collect();
        assert_eq!(sigs, vec![0, 2]);
    }

    #[test]
    fn l1_extremes_and_hand_value() {
        assert_eq!(l1_from_counts(&[(3, 6), (1, 2)], 4, 8).unwrap(), 0.0);
        assert_eq!(l1_from_counts(&[(3, 0), (0, 5)], 3, 5).unwrap(), 1.0);
        // treated shares (0.5, 0.5), control shares (1, 0)
        assert!((l1_from_counts(&[(1, 4), (1, 0)], 2, 4).unwrap() - 0.5).abs() < 1e-12);
        assert!(l1_from_counts(&[(0, 4)], 0, 4).is_err());
    }

    #[test]
    fn covariance_hand_values() {
        let s = sample_from(&[(true, vec![0.0]), (false, vec![2.0])], &[CovariateKind::Continuous]);
        let c = estimate_covariance(&s).unwrap();
        assert_eq!(c.matrix[(0, 0)], 2.0);
        assert!(c.dropped_columns.is_empty());
        assert_eq!(c.ridge, 0.0);
    }

    #[test]
    fn covariance_drops_constant_and_collinear_columns() {
        let pts: Vec<(bool, Vec<f64>)> = (0..6)
            .map(|i| {
                let x = i as f64;
                (i % 2 == 0, vec![x, 3.0, 2.0 * x + 1.0, (x * 1.7).sin()])
            })
            .collect();
        let s = sample_from(&pts, &[CovariateKind::Continuous; 4]);
        let c = estimate_covariance(&s).unwrap();
        assert_eq!(c.dropped_columns, vec![1, 2]);
        assert_eq!(c.retained, vec![0, 3]);

        let constant = sample_from(
            &[(true, vec![1.0, 2.0]), (false, vec![1.0, 2.0])],
            &[CovariateKind::Continuous; 2],
        );
        assert!(estimate_covariance(&constant).is_err());

        let single = sample_from(&[(true, vec![1.0])], &[CovariateKind::Continuous]);
        assert!(matches!(
            estimate_covariance(&single),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn mahalanobis_hand_values() {
        let id = CovarianceModel::from_matrix(DMatrix::identity(2, 2)).unwrap();
        assert_eq!(mahalanobis(&[0.0, 0.0], &[3.0, 4.0], &id).unwrap(), 5.0);
        assert_eq!(mahalanobis(&[1.5, -2.0], &[1.5, -2.0], &id).unwrap(), 0.0);
        let diag = CovarianceModel::from_matrix(DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0])).unwrap();
        assert_eq!(mahalanobis(&[2.0, 0.0], &[0.0, 0.0], &diag).unwrap(), 1.0);
        assert!(matches!(
            mahalanobis(&[1.0], &[0.0, 0.0], &diag),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn ami_simple_cases() {
        let s = sample_from(
            &[(true, vec![0.0]), (false, vec![0.0]), (true, vec![2.0]), (false, vec![2.0])],
            &[CovariateKind::Continuous],
        );
        let c = estimate_covariance(&s).unwrap();
        assert_eq!(ami(&s, &c).unwrap(), 0.0);

        let s = sample_from(&[(true, vec![0.0]), (false, vec![3.0])], &[CovariateKind::Continuous]);
        let c = estimate_covariance(&s).unwrap();
        let d = mahalanobis(&[0.0], &[3.0], &c).unwrap();
        assert!((ami(&s, &c).unwrap() - d).abs() < 1e-12);

        let one_sided = sample_from(&[(true, vec![0.0]), (true, vec![1.0])], &[CovariateKind::Continuous]);
        let c = estimate_covariance(&one_sided).unwrap();
        assert!(matches!(ami(&one_sided, &c), Err(Error::DegenerateSample(_))));
    }

    #[test]
    fn ami_one_treated_three_controls() {
        let s = sample_from(
            &[(true, vec![0.0]), (false, vec![0.1]), (false, vec![0.2]), (false, vec![10.0])],
            &[CovariateKind::Continuous],
        );
        let c = estimate_covariance(&s).unwrap();
        // brute force: nearest-opposite raw gaps are 0.1, 0.1, 0.2, 10.0
        let sd = c.matrix[(0, 0)].sqrt();
        let expected = (0.1 + 0.1 + 0.2 + 10.0) / 4.0 / sd;
        assert!((ami(&s, &c).unwrap() - expected).abs() < 1e-12);
    }
}
