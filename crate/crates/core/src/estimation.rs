//! Treatment-effect estimation and covariate balance diagnostics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};
use crate::frontier::{Frontier, FrontierPoint};
use crate::sample::MatchingSample;

/// SATT when every treated unit of the source sample is kept, FSATT when
/// matching pruned some of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Estimand {
    Satt,
    Fsatt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeMethod {
    /// `sqrt(p_t (1 - p_t) / n_t + p_c (1 - p_c) / n_c)`.
    #[default]
    Unpooled,
    /// Standard deviation of the estimate over stratified resamples.
    Bootstrap { replications: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttEstimate {
    pub att: f64,
    pub std_error: f64,
    pub n_total: usize,
    pub n_treated: usize,
    pub n_control: usize,
    pub estimand: Estimand,
}

impl AttEstimate {
    /// Two-sided normal p-value of `att / std_error`.
    pub fn p_value(&self) -> f64 {
        if self.std_error == 0.0 {
            return if self.att == 0.0 { 1.0 } else { 0.0 };
        }
        let z = (self.att / self.std_error).abs();
        let normal = Normal::standard();
        (2.0 * normal.sf(z)).clamp(0.0, 1.0)
    }

    pub fn stars(&self) -> &'static str {
        significance_stars(self.p_value())
    }
}

/// `***` below 0.01, `**` below 0.05, `*` below 0.1.
pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}

fn rate(outcomes: &[bool]) -> f64 {
    outcomes.iter().filter(|&&y| y).count() as f64 / outcomes.len() as f64
}

/// Difference in adoption rates, treated minus control.
pub fn estimate_att(subset: &MatchingSample) -> Result<AttEstimate> {
    estimate_att_with(subset, SeMethod::Unpooled)
}

pub fn estimate_att_with(subset: &MatchingSample, se: SeMethod) -> Result<AttEstimate> {
    subset.ensure_non_degenerate()?;
    let (treated, control): (Vec<_>, Vec<_>) = subset.units.iter().partition(|u| u.treated);
    let yt: Vec<bool> = treated.iter().map(|u| u.outcome).collect();
    let yc: Vec<bool> = control.iter().map(|u| u.outcome).collect();
    let (pt, pc) = (rate(&yt), rate(&yc));
    let (nt, nc) = (yt.len(), yc.len());

    let std_error = match se {
        SeMethod::Unpooled => {
            (pt * (1.0 - pt) / nt as f64 + pc * (1.0 - pc) / nc as f64).sqrt()
        }
        SeMethod::Bootstrap { replications, seed } => {
            if replications < 2 {
                return Err(Error::Config("bootstrap needs at least 2 replications".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let draw = |ys: &[bool], rng: &mut ChaCha8Rng| {
                (0..ys.len()).filter(|_| ys[rng.random_range(0..ys.len())]).count() as f64
                    / ys.len() as f64
            };
            let stats: Vec<f64> = (0..replications)
                .map(|_| draw(&yt, &mut rng) - draw(&yc, &mut rng))
                .collect();
            let m = stats.iter().sum::<f64>() / replications as f64;
            (stats.iter().map(|s| (s - m) * (s - m)).sum::<f64>() / (replications - 1) as f64).sqrt()
        }
    };

    Ok(AttEstimate {
        att: pt - pc,
        std_error,
        n_total: nt + nc,
        n_treated: nt,
        n_control: nc,
        estimand: if nt < subset.origin_treated {
            Estimand::Fsatt
        } else {
            Estimand::Satt
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WelchTest {
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Two-sided Welch unequal-variance t-test.
///
/// With zero variance in both groups the p-value is 1 for equal means and
/// 0 otherwise (exact separation).
pub fn welch_test(a: &[f64], b: &[f64]) -> Result<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "t-test needs at least 2 values per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::Domain("t-test input contains non-finite values".into()));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    welch_from_moments((a.len(), ma, va), (b.len(), mb, vb))
}

/// Welch test from `(n, mean, variance)` of each group.
fn welch_from_moments(a: (usize, f64, f64), b: (usize, f64, f64)) -> Result<WelchTest> {
    let ((na, ma, va), (nb, mb, vb)) = (a, b);
    let (sa, sb) = (va / na as f64, vb / nb as f64);
    let se2 = sa + sb;
    if se2 == 0.0 {
        let same = ma == mb;
        return Ok(WelchTest {
            t: if same { 0.0 } else { f64::INFINITY.copysign(ma - mb) },
            df: f64::NAN,
            p_value: if same { 1.0 } else { 0.0 },
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1) as f64 + sb * sb / (nb - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::Domain(format!("t distribution with df {df}: {e}")))?;
    let p_value = (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0);
    Ok(WelchTest { t, df, p_value })
}

/// p-value of the Welch test for a difference in means.
pub fn mean_difference_test(values_a: &[f64], values_b: &[f64]) -> Result<f64> {
    welch_test(values_a, values_b).map(|w| w.p_value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRow {
    pub covariate: String,
    pub mean_control: f64,
    pub mean_treated: f64,
    /// `None` when a group is too small to test.
    pub p_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub rows: Vec<BalanceRow>,
    pub alpha: f64,
    /// Every covariate tested and none significant at `alpha`.
    pub balanced: bool,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Per-covariate group means and Welch p-values.
pub fn balance_report(subset: &MatchingSample, alpha: f64) -> Result<BalanceReport> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("alpha {alpha} outside [0, 1]")));
    }
    subset.ensure_non_degenerate()?;
    let d = subset.dim();
    let mut treated: Vec<Vec<f64>> = vec![Vec::new(); d];
    let mut control: Vec<Vec<f64>> = vec![Vec::new(); d];
    for u in &subset.units {
        let target = if u.treated { &mut treated } else { &mut control };
        for (col, &x) in target.iter_mut().zip(&u.covariates) {
            col.push(x);
        }
    }

    let rows: Vec<BalanceRow> = subset
        .schema
        .entries()
        .iter()
        .enumerate()
        .map(|(k, spec)| {
            let (c, t) = (&control[k], &treated[k]);
            let constant = |x: &[f64]| x.iter().all(|v| *v == x[0]);
            let (p_value, note) = match welch_test(c, t) {
                Ok(w) if constant(c) && constant(t) && c[0] == t[0] => {
                    (Some(w.p_value), Some("constant in both groups".to_string()))
                }
                Ok(w) => (Some(w.p_value), None),
                Err(e) => (None, Some(e.to_string())),
            };
            BalanceRow {
                covariate: spec.name.clone(),
                mean_control: mean(c),
                mean_treated: mean(t),
                p_value,
                note,
            }
        })
        .collect();
    let balanced = rows.iter().all(|r| r.p_value.is_some_and(|p| p > alpha));
    Ok(BalanceReport {
        rows,
        alpha,
        balanced,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    pub point_index: usize,
    pub point: FrontierPoint,
    pub balanced: bool,
    pub report: BalanceReport,
}

/// Largest frontier subset that passes the balance test at `alpha`; if no
/// point does, the lowest-imbalance point flagged as unbalanced.
pub fn select_balanced_subset(
    frontier: &Frontier,
    sample: &MatchingSample,
    alpha: f64,
) -> Result<Selection> {
    if frontier.is_empty() {
        return Err(Error::DegenerateSample("frontier has no points".into()));
    }
    let mut order: Vec<usize> = (0..frontier.len()).collect();
    order.sort_by_key(|&k| std::cmp::Reverse(frontier.points[k].remaining_n()));
    let mut screen = BalanceScreen::new(sample);
    for &k in &order {
        let point = &frontier.points[k];
        if point.units.is_none() {
            screen.advance(&frontier.removal_order[..point.pruned_count]);
            if !screen.maybe_balanced(alpha) {
                continue;
            }
        }
        let report = balance_report(&frontier.subset(sample, k), alpha)?;
        if report.balanced {
            return Ok(Selection {
                point_index: k,
                point: point.clone(),
                balanced: true,
                report,
            });
        }
    }
    let k = (0..frontier.len())
        .min_by(|&a, &b| {
            frontier.points[a]
                .imbalance
                .total_cmp(&frontier.points[b].imbalance)
        })
        .expect("frontier is non-empty");
    Ok(Selection {
        point_index: k,
        point: frontier.points[k].clone(),
        balanced: false,
        report: balance_report(&frontier.subset(sample, k), alpha)?,
    })
}

/// Running per-covariate moments of the units still present along a greedy
/// removal order. Used to skip points that are clearly unbalanced without
/// materializing the subset; candidates are confirmed by `balance_report`.
struct BalanceScreen<'a> {
    sample: &'a MatchingSample,
    center: Vec<f64>,
    // [control, treated] x (count, sum, sum of squares) per covariate.
    count: [usize; 2],
    sum: [Vec<f64>; 2],
    sumsq: [Vec<f64>; 2],
    removed: usize,
}

/// Screening slack on p-values so rounding in the running sums never hides
/// a balanced point.
const SCREEN_SLACK: f64 = 1e-6;

impl<'a> BalanceScreen<'a> {
    fn new(sample: &'a MatchingSample) -> Self {
        let d = sample.dim();
        let n = sample.len().max(1) as f64;
        let mut center = vec![0.0; d];
        for u in &sample.units {
            for (c, x) in center.iter_mut().zip(&u.covariates) {
                *c += x / n;
            }
        }
        let mut screen = Self {
            sample,
            center,
            count: [0; 2],
            sum: [vec![0.0; d], vec![0.0; d]],
            sumsq: [vec![0.0; d], vec![0.0; d]],
            removed: 0,
        };
        for i in 0..sample.len() {
            screen.update(i, 1.0);
        }
        screen
    }

    fn update(&mut self, i: usize, sign: f64) {
        let u = &self.sample.units[i];
        let g = usize::from(u.treated);
        if sign > 0.0 {
            self.count[g] += 1;
        } else {
            self.count[g] -= 1;
        }
        for (k, (&x, &c)) in u.covariates.iter().zip(&self.center).enumerate() {
            let y = x - c;
            self.sum[g][k] += sign * y;
            self.sumsq[g][k] += sign * y * y;
        }
    }

    /// Remove units until `removed` covers the whole prefix.
    fn advance(&mut self, removed: &[usize]) {
        for &i in &removed[self.removed..] {
            self.update(i, -1.0);
        }
        self.removed = removed.len();
    }

    fn maybe_balanced(&self, alpha: f64) -> bool {
        let [nc, nt] = self.count;
        if nc < 2 || nt < 2 {
            return false;
        }
        let moments = |g: usize, k: usize| {
            let n = self.count[g] as f64;
            let m = self.sum[g][k] / n;
            let v = ((self.sumsq[g][k] - n * m * m) / (n - 1.0)).max(0.0);
            (self.count[g], m, v)
        };
        (0..self.center.len()).all(|k| {
            let (c, t) = (moments(0, k), moments(1, k));
            // Near-constant columns are left to the exact test.
            let scale = 1.0 + c.1.abs().max(t.1.abs());
            if c.2.max(t.2) <= 1e-9 * scale * scale {
                return true;
            }
            welch_from_moments(c, t)
                .map_or(true, |w| w.p_value > alpha - SCREEN_SLACK)
        })
    }
}

/// ATT at every frontier point; degenerate points yield an `Err` entry.
pub fn att_along_frontier(
    frontier: &Frontier,
    sample: &MatchingSample,
) -> Vec<(usize, Result<AttEstimate>)> {
    (0..frontier.len())
        .into_par_iter()
        .map(|k| {
            (
                frontier.points[k].pruned_count,
                estimate_att(&frontier.subset(sample, k)),
            )
        })
        .collect()
}
