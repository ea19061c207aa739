//! Matching frontiers: for each number of pruned units, the subset with the
//! lowest imbalance reachable by greedy pruning.
//!
//! Both greedy builders emit the unpruned sample as point 0. Frontiers built
//! greedily are nested, so a point is stored as a prefix length of one
//! removal order instead of a full unit set.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{
    covariance_of_rows, l1_from_counts, nearest_opposite, BinningSpec, Coarsener,
    CovarianceModel, Whitened,
};
use crate::sample::MatchingSample;

/// AMI values below this count as zero.
pub const AMI_ZERO_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    L1,
    Ami,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrontierPoint {
    pub pruned_count: usize,
    pub imbalance: f64,
    pub treated_remaining: usize,
    pub control_remaining: usize,
    /// Explicit unit set, only for non-nested (exhaustive) frontiers.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub units: Option<Vec<usize>>,
}

impl FrontierPoint {
    pub fn remaining_n(&self) -> usize {
        self.treated_remaining + self.control_remaining
    }
}

/// What the imbalance at each point was measured against.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfigSnapshot {
    Binning(BinningSpec),
    Covariance {
        retained: Vec<usize>,
        dropped: Vec<usize>,
        ridge: f64,
        reestimated: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Frontier {
    pub metric: MetricKind,
    pub allow_treated_pruning: bool,
    /// Size of the unpruned sample.
    pub n: usize,
    pub points: Vec<FrontierPoint>,
    /// Units in the order they were pruned; point `k` keeps all units except
    /// the first `points[k].pruned_count` entries.
    pub removal_order: Vec<usize>,
    pub config: ConfigSnapshot,
    /// Points whose imbalance exceeded the previous point's.
    pub monotonicity_violations: usize,
}

impl Frontier {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Sorted sample indices of the units kept at point `k`.
    pub fn remaining(&self, k: usize) -> Vec<usize> {
        let point = &self.points[k];
        if let Some(units) = &point.units {
            return units.clone();
        }
        let mut keep = vec![true; self.n];
        for &i in &self.removal_order[..point.pruned_count] {
            keep[i] = false;
        }
        (0..self.n).filter(|&i| keep[i]).collect()
    }

    /// The matched sub-sample at point `k`.
    pub fn subset(&self, sample: &MatchingSample, k: usize) -> MatchingSample {
        sample.select(&self.remaining(k))
    }

    /// `pruned_count,remaining_n,treated_n,control_n,imbalance`, one row per point.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["pruned_count", "remaining_n", "treated_n", "control_n", "imbalance"])?;
        for p in &self.points {
            w.write_record([
                p.pruned_count.to_string(),
                p.remaining_n().to_string(),
                p.treated_remaining.to_string(),
                p.control_remaining.to_string(),
                p.imbalance.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    fn push_checked(&mut self, point: FrontierPoint) {
        if let Some(prev) = self.points.last() {
            if point.imbalance > prev.imbalance {
                self.monotonicity_violations += 1;
                log::warn!(
                    "{:?} frontier imbalance rose from {} to {} at pruned_count {}",
                    self.metric,
                    prev.imbalance,
                    point.imbalance,
                    point.pruned_count
                );
            }
        }
        self.points.push(point);
    }
}

/// L1 frontier over fixed histogram bins. Only controls are pruned.
///
/// Each step takes one control (lowest index) from the stratum whose control
/// share most exceeds its treated share, ties going to the lowest stratum
/// signature. The step is kept only if L1 does not rise; the loop stops when
/// no stratum has a control surplus or one control would be left.
pub fn build_frontier_l1(sample: &MatchingSample, spec: &BinningSpec) -> Result<Frontier> {
    sample.ensure_non_degenerate()?;
    let coarsener = Coarsener::fit(sample, spec)?;
    let all: Vec<usize> = (0..sample.len()).collect();
    let binned = coarsener.tabulate(sample, &all);

    let treated_total = binned.total_treated as i128;
    let mut control_total = binned.total_control as i128;
    let treated: Vec<i128> = binned.strata.iter().map(|s| s.treated as i128).collect();
    let mut control: Vec<i128> = binned.strata.iter().map(|s| s.control as i128).collect();
    let mut pool: Vec<std::collections::VecDeque<usize>> = vec![Default::default(); binned.strata.len()];
    for (&unit, &stratum) in binned.units.iter().zip(&binned.assignment) {
        if !sample.units[unit].treated {
            pool[stratum].push_back(unit);
        }
    }

    // Twice the L1 numerator over a common denominator T*C, kept in exact
    // integers: sum_s |t_s * C - c_s * T|.
    let numerator = |control: &[i128], c_total: i128| -> i128 {
        treated
            .iter()
            .zip(control)
            .map(|(&t, &c)| (t * c_total - c * treated_total).abs())
            .sum()
    };
    let value = |num: i128, c_total: i128| -> f64 {
        (num as f64 / (2.0 * treated_total as f64 * c_total as f64)).clamp(0.0, 1.0)
    };

    let mut current = numerator(&control, control_total);
    let mut frontier = Frontier {
        metric: MetricKind::L1,
        allow_treated_pruning: false,
        n: sample.len(),
        points: Vec::new(),
        removal_order: Vec::new(),
        config: ConfigSnapshot::Binning(spec.clone()),
        monotonicity_violations: 0,
    };
    frontier.push_checked(FrontierPoint {
        pruned_count: 0,
        imbalance: value(current, control_total),
        treated_remaining: binned.total_treated,
        control_remaining: control_total as usize,
        units: None,
    });

    while control_total > 1 {
        let mut best: Option<(usize, i128)> = None;
        for s in 0..control.len() {
            if control[s] == 0 {
                continue;
            }
            let surplus = control[s] * treated_total - treated[s] * control_total;
            if best.is_none_or(|(_, b)| surplus > b) {
                best = Some((s, surplus));
            }
        }
        let Some((s, surplus)) = best else { break };
        if surplus <= 0 {
            break;
        }
        control[s] -= 1;
        let candidate = numerator(&control, control_total - 1);
        // candidate / (T (C-1)) <= current / (T C)
        if candidate * control_total > current * (control_total - 1) {
            control[s] += 1;
            break;
        }
        control_total -= 1;
        current = candidate;
        let unit = pool[s].pop_front().expect("stratum has a control to prune");
        frontier.removal_order.push(unit);
        frontier.push_checked(FrontierPoint {
            pruned_count: frontier.removal_order.len(),
            imbalance: value(current, control_total),
            treated_remaining: binned.total_treated,
            control_remaining: control_total as usize,
            units: None,
        });
    }
    Ok(frontier)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AmiOptions {
    pub allow_treated_pruning: bool,
    /// Re-estimate the covariance on every pruned subset instead of holding
    /// the initial estimate fixed.
    #[serde(default)]
    pub reestimate_covariance: bool,
}

/// AMI frontier with the covariance held fixed.
pub fn build_frontier_ami(
    sample: &MatchingSample,
    allow_treated_pruning: bool,
    cov: &CovarianceModel,
) -> Result<Frontier> {
    build_frontier_ami_with(
        sample,
        cov,
        AmiOptions {
            allow_treated_pruning,
            reestimate_covariance: false,
        },
    )
}

/// AMI frontier.
///
/// Every iteration matches each unit to its nearest opposite-group unit,
/// records the AMI, then removes all units tied for the largest match
/// distance (controls only unless treated pruning is allowed). Only units
/// that lost their match are re-matched. Stops once AMI is zero, two units
/// remain, or a removal would empty a group.
///
/// In controls-only mode dropping the worst controls can push treated units
/// onto farther matches and raise the AMI. Such a step is skipped in favour
/// of the next tie group down whose removal keeps the AMI from rising; if
/// none exists the frontier ends. With a re-estimated covariance the metric
/// itself moves between steps, so the worst units are always removed and
/// any rise is logged and counted in `monotonicity_violations`.
pub fn build_frontier_ami_with(
    sample: &MatchingSample,
    cov: &CovarianceModel,
    options: AmiOptions,
) -> Result<Frontier> {
    sample.ensure_non_degenerate()?;
    let n = sample.len();
    let treated: Vec<bool> = sample.units.iter().map(|u| u.treated).collect();
    let mut whitened = Whitened::new(sample, cov)?;
    let mut cov_now = cov.clone();

    let mut alive = vec![true; n];
    let mut active: Vec<usize> = (0..n).collect();
    let mut nn: Vec<(f64, usize)> = vec![(f64::NAN, usize::MAX); n];
    for (&i, m) in active.iter().zip(nearest_opposite(&whitened, &treated, &active)) {
        nn[i] = m;
    }
    let mut n_treated = treated.iter().filter(|&&t| t).count();

    let mut frontier = Frontier {
        metric: MetricKind::Ami,
        allow_treated_pruning: options.allow_treated_pruning,
        n,
        points: Vec::new(),
        removal_order: Vec::new(),
        config: ConfigSnapshot::Covariance {
            retained: cov.retained.clone(),
            dropped: cov.dropped_columns.clone(),
            ridge: cov.ridge,
            reestimated: options.reestimate_covariance,
        },
        monotonicity_violations: 0,
    };

    loop {
        let ami = active.iter().map(|&i| nn[i].0).sum::<f64>() / active.len() as f64;
        frontier.push_checked(FrontierPoint {
            pruned_count: n - active.len(),
            imbalance: ami,
            treated_remaining: n_treated,
            control_remaining: active.len() - n_treated,
            units: None,
        });
        if ami < AMI_ZERO_TOL || active.len() <= 2 {
            break;
        }

        let eligible = |i: usize| options.allow_treated_pruning || !treated[i];
        let control_now = active.len() - n_treated;
        let feasible = |drop: &[usize]| {
            let dt = drop.iter().filter(|&&i| treated[i]).count();
            !drop.is_empty()
                && dt < n_treated
                && drop.len() - dt < control_now
                && active.len() - drop.len() >= 2
        };
        let tied_at = |level: f64| -> Vec<usize> {
            active
                .iter()
                .copied()
                .filter(|&i| eligible(i) && nn[i].0 == level)
                .collect()
        };

        let worst = active
            .iter()
            .filter(|&&i| eligible(i))
            .map(|&i| nn[i].0)
            .fold(f64::NEG_INFINITY, f64::max);
        let first = tied_at(worst);
        if !feasible(&first) {
            break;
        }
        // With a fixed covariance a removal is kept only if AMI does not rise.
        // Removing the worst units never raises it when treated units may be
        // pruned; with controls only, the next-worst tie groups are tried.
        let step = if options.reestimate_covariance {
            Some((first, Vec::new()))
        } else {
            let mut levels: Option<Vec<f64>> = None;
            let mut rank = 0;
            let mut candidate = first;
            loop {
                if feasible(&candidate) {
                    if let Some(rematch) =
                        lookahead(&whitened, &treated, &active, &alive, &nn, &candidate, ami)
                    {
                        break Some((candidate, rematch));
                    }
                }
                let levels = levels.get_or_insert_with(|| {
                    let mut l: Vec<f64> = active
                        .iter()
                        .filter(|&&i| eligible(i))
                        .map(|&i| nn[i].0)
                        .collect();
                    l.sort_by(|a, b| b.total_cmp(a));
                    l.dedup();
                    l
                });
                rank += 1;
                match levels.get(rank) {
                    Some(&level) => candidate = tied_at(level),
                    None => break None,
                }
            }
        };
        let Some((drop, rematch)) = step else {
            break;
        };
        let drop_treated = drop.iter().filter(|&&i| treated[i]).count();

        for &i in &drop {
            alive[i] = false;
            frontier.removal_order.push(i);
        }
        n_treated -= drop_treated;
        active.retain(|&i| alive[i]);
        for (i, m) in rematch {
            nn[i] = m;
        }

        let stale: Vec<usize> = if options.reestimate_covariance {
            let rows: Vec<&[f64]> = active
                .iter()
                .map(|&i| sample.units[i].covariates.as_slice())
                .collect();
            match covariance_of_rows(&rows, sample.dim()) {
                Ok(c) => {
                    cov_now = c;
                    whitened = Whitened::new(sample, &cov_now)?;
                }
                Err(e) => {
                    log::warn!("covariance re-estimation failed ({e}); keeping previous estimate");
                }
            }
            active.clone()
        } else {
            active.iter().copied().filter(|&i| !alive[nn[i].1]).collect()
        };
        if !stale.is_empty() {
            let (t, c): (Vec<usize>, Vec<usize>) = active.iter().partition(|&&i| treated[i]);
            let fresh: Vec<(f64, usize)> = {
                use rayon::prelude::*;
                stale
                    .par_iter()
                    .map(|&i| whitened.nearest(i, if treated[i] { &c } else { &t }))
                    .collect()
            };
            for (&i, m) in stale.iter().zip(fresh) {
                nn[i] = m;
            }
        }
    }
    if let ConfigSnapshot::Covariance { ridge, .. } = &mut frontier.config {
        *ridge = cov_now.ridge;
    }
    Ok(frontier)
}

/// New matches of the units that would lose theirs if `drop` were removed,
/// or `None` if the removal would raise the AMI above `current`.
fn lookahead(
    whitened: &Whitened,
    treated: &[bool],
    active: &[usize],
    alive: &[bool],
    nn: &[(f64, usize)],
    drop: &[usize],
    current: f64,
) -> Option<Vec<(usize, (f64, usize))>> {
    let mut gone = drop.to_vec();
    gone.sort_unstable();
    let dropped = |i: usize| gone.binary_search(&i).is_ok();
    let rest: Vec<usize> = active.iter().copied().filter(|&i| !dropped(i)).collect();
    let stale: Vec<usize> = rest
        .iter()
        .copied()
        .filter(|&i| dropped(nn[i].1) || !alive[nn[i].1])
        .collect();
    let rematch: Vec<(usize, (f64, usize))> = if stale.is_empty() {
        Vec::new()
    } else {
        let (t, c): (Vec<usize>, Vec<usize>) = rest.iter().partition(|&&i| treated[i]);
        use rayon::prelude::*;
        stale
            .par_iter()
            .map(|&i| (i, whitened.nearest(i, if treated[i] { &c } else { &t })))
            .collect()
    };
    // `rematch` follows the order of `rest`, so one merged pass sums the
    // new distances in the same order as the main loop will.
    let mut fresh = rematch.iter().peekable();
    let next = rest
        .iter()
        .map(|&i| match fresh.peek() {
            Some(&&(j, (d, _))) if j == i => {
                fresh.next();
                d
            }
            _ => nn[i].0,
        })
        .sum::<f64>()
        / rest.len() as f64;
    (next <= current).then_some(rematch)
}

/// Imbalance measured by [`brute_force_frontier`].
#[derive(Debug, Clone)]
pub enum BruteMetric<'a> {
    /// L1 with bins fitted on the full sample; treated units are never pruned.
    L1(&'a BinningSpec),
    Ami {
        cov: &'a CovarianceModel,
        allow_treated_pruning: bool,
    },
}

pub const DEFAULT_BRUTE_FORCE_MAX_N: usize = 12;

/// Exhaustive frontier: for every subset size, the minimum imbalance over
/// all subsets that keep both groups non-empty (and every treated unit when
/// treated pruning is off). Sizes run from `n` down to 2.
pub fn brute_force_frontier(
    sample: &MatchingSample,
    metric: BruteMetric<'_>,
    max_n: usize,
) -> Result<Frontier> {
    let n = sample.len();
    if n > max_n || n >= usize::BITS as usize {
        return Err(Error::SizeLimit { n, max_n });
    }
    sample.ensure_non_degenerate()?;
    let treated: Vec<bool> = sample.units.iter().map(|u| u.treated).collect();
    let treated_mask: u64 = (0..n).filter(|&i| treated[i]).map(|i| 1u64 << i).sum();

    let (allow_treated, config) = match &metric {
        BruteMetric::L1(spec) => (false, ConfigSnapshot::Binning((*spec).clone())),
        BruteMetric::Ami {
            cov,
            allow_treated_pruning,
        } => (
            *allow_treated_pruning,
            ConfigSnapshot::Covariance {
                retained: cov.retained.clone(),
                dropped: cov.dropped_columns.clone(),
                ridge: cov.ridge,
                reestimated: false,
            },
        ),
    };
    let coarsener = match &metric {
        BruteMetric::L1(spec) => Some(Coarsener::fit(sample, spec)?),
        BruteMetric::Ami { .. } => None,
    };
    let whitened = match &metric {
        BruteMetric::Ami { cov, .. } => Some(Whitened::new(sample, cov)?),
        BruteMetric::L1(_) => None,
    };

    let mut best: Vec<Option<(f64, u64)>> = vec![None; n + 1];
    for mask in 1u64..(1u64 << n) {
        if !allow_treated && mask & treated_mask != treated_mask {
            continue;
        }
        let members: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
        let t = members.iter().filter(|&&i| treated[i]).count();
        if t == 0 || t == members.len() {
            continue;
        }
        let value = if let Some(c) = &coarsener {
            let b = c.tabulate(sample, &members);
            let counts: Vec<(usize, usize)> = b.strata.iter().map(|s| (s.treated, s.control)).collect();
            l1_from_counts(&counts, b.total_treated, b.total_control)?
        } else {
            let w = whitened.as_ref().expect("AMI metric has whitened data");
            let nn = nearest_opposite(w, &treated, &members);
            nn.iter().map(|p| p.0).sum::<f64>() / members.len() as f64
        };
        let slot = &mut best[members.len()];
        if slot.is_none_or(|(v, _)| value < v) {
            *slot = Some((value, mask));
        }
    }

    let points = (2..=n)
        .rev()
        .filter_map(|size| best[size].map(|(v, mask)| (size, v, mask)))
        .map(|(size, value, mask)| {
            let units: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
            let t = units.iter().filter(|&&i| treated[i]).count();
            FrontierPoint {
                pruned_count: n - size,
                imbalance: value,
                treated_remaining: t,
                control_remaining: size - t,
                units: Some(units),
            }
        })
        .collect();

    Ok(Frontier {
        metric: match metric {
            BruteMetric::L1(_) => MetricKind::L1,
            BruteMetric::Ami { .. } => MetricKind::Ami,
        },
        allow_treated_pruning: allow_treated,
        n,
        points,
        removal_order: Vec::new(),
        config,
        monotonicity_violations: 0,
    })
}
