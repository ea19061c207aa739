//! Sample generators and brute-force reference computations shared by the
//! integration tests. Nothing here calls into the crate's metric code.

#![allow(dead_code)]

use frontier_match::{
    CovariateKind, CovariateSchema, CovariateSpec, MatchingSample, Provenance, Unit,
};
use rand::Rng;

pub fn schema(d: usize, kind: CovariateKind) -> CovariateSchema {
    CovariateSchema::new(
        (0..d)
            .map(|k| CovariateSpec::new(format!("x{k}"), kind, ""))
            .collect(),
    )
    .unwrap()
}

pub fn sample_from(rows: &[(bool, Vec<f64>)]) -> MatchingSample {
    sample_with_outcomes(
        &rows
            .iter()
            .map(|(t, x)| (*t, false, x.clone()))
            .collect::<Vec<_>>(),
    )
}

pub fn sample_with_outcomes(rows: &[(bool, bool, Vec<f64>)]) -> MatchingSample {
    let d = rows[0].2.len();
    let units = rows
        .iter()
        .enumerate()
        .map(|(i, (t, y, x))| Unit {
            unit_id: format!("u{i:05}"),
            year: 2000,
            village: format!("v{}", i % 3),
            treated: *t,
            outcome: *y,
            covariates: x.clone(),
        })
        .collect();
    MatchingSample::new(schema(d, CovariateKind::Continuous), units, Provenance::FullPooling)
        .unwrap()
}

/// Random continuous sample with at least one treated and one control unit.
pub fn random_sample<R: Rng>(rng: &mut R, n: usize, d: usize) -> MatchingSample {
    assert!(n >= 2);
    let share = rng.random_range(0.2..0.6);
    let shift = rng.random_range(0.0..1.5);
    let rows: Vec<(bool, bool, Vec<f64>)> = (0..n)
        .map(|i| {
            let treated = match i {
                0 => true,
                1 => false,
                _ => rng.random_bool(share),
            };
            let x = (0..d)
                .map(|k| {
                    let u: f64 = rng.random_range(-1.0..1.0) + rng.random_range(-1.0..1.0);
                    u * (1.0 + k as f64) + if treated { shift } else { 0.0 }
                })
                .collect();
            (treated, rng.random_bool(0.4), x)
        })
        .collect();
    sample_with_outcomes(&rows)
}

/// Random sample whose covariates take a few integer levels, so L1 strata
/// are well populated.
pub fn random_discrete_sample<R: Rng>(rng: &mut R, n: usize, d: usize) -> MatchingSample {
    let rows: Vec<(bool, bool, Vec<f64>)> = (0..n)
        .map(|i| {
            let treated = match i {
                0 => true,
                1 => false,
                _ => rng.random_bool(0.35),
            };
            let x = (0..d)
                .map(|_| f64::from(rng.random_range(0..3u8) + u8::from(treated && rng.random_bool(0.3))))
                .collect();
            (treated, false, x)
        })
        .collect();
    sample_with_outcomes(&rows)
}

pub fn rows_of(sample: &MatchingSample) -> Vec<Vec<f64>> {
    sample.units.iter().map(|u| u.covariates.clone()).collect()
}

/// Sample covariance with denominator n - 1, two-pass.
pub fn covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d)
        .map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n)
        .collect();
    let mut s = vec![vec![0.0; d]; d];
    for r in rows {
        for a in 0..d {
            for b in 0..d {
                s[a][b] += (r[a] - mean[a]) * (r[b] - mean[b]);
            }
        }
    }
    for row in &mut s {
        for v in row.iter_mut() {
            *v /= n - 1.0;
        }
    }
    s
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn inverse(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = m.len();
    let mut a: Vec<Vec<f64>> = m
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = r.clone();
            row.extend((0..d).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for col in 0..d {
        let piv = (col..d)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        a.swap(col, piv);
        let p = a[col][col];
        assert!(p.abs() > 1e-300, "singular matrix");
        for v in a[col].iter_mut() {
            *v /= p;
        }
        for r in 0..d {
            if r != col {
                let f = a[r][col];
                if f != 0.0 {
                    let pivot = a[col].clone();
                    for (x, p) in a[r].iter_mut().zip(&pivot) {
                        *x -= f * p;
                    }
                }
            }
        }
    }
    a.into_iter().map(|r| r[d..].to_vec()).collect()
}

pub fn quad_distance(x: &[f64], y: &[f64], inv: &[Vec<f64>]) -> f64 {
    let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let mut q = 0.0;
    for a in 0..diff.len() {
        for b in 0..diff.len() {
            q += diff[a] * inv[a][b] * diff[b];
        }
    }
    q.max(0.0).sqrt()
}

/// Mean over `members` of the distance to the nearest opposite-group member.
pub fn ami_of(rows: &[Vec<f64>], treated: &[bool], members: &[usize], inv: &[Vec<f64>]) -> f64 {
    let total: f64 = members
        .iter()
        .map(|&i| {
            members
                .iter()
                .filter(|&&j| treated[j] != treated[i])
                .map(|&j| quad_distance(&rows[i], &rows[j], inv))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    total / members.len() as f64
}

/// Minimum AMI over every subset of each size that keeps both groups,
/// indexed by subset size. Entries for unreachable sizes are infinite.
pub fn brute_min_ami(rows: &[Vec<f64>], treated: &[bool], inv: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len();
    let mut best = vec![f64::INFINITY; n + 1];
    for mask in 1u32..(1 << n) {
        let members: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
        let t = members.iter().filter(|&&i| treated[i]).count();
        if t == 0 || t == members.len() {
            continue;
        }
        let v = ami_of(rows, treated, &members, inv);
        let m = members.len();
        best[m] = best[m].min(v);
    }
    best
}

/// L1 imbalance from explicit stratum keys.
pub fn l1_of<K: Ord + Clone>(keys: &[K], treated: &[bool], members: &[usize]) -> f64 {
    use std::collections::BTreeMap;
    let mut counts: BTreeMap<K, (f64, f64)> = BTreeMap::new();
    let (mut nt, mut nc) = (0.0, 0.0);
    for &i in members {
        let e = counts.entry(keys[i].clone()).or_default();
        if treated[i] {
            e.0 += 1.0;
            nt += 1.0;
        } else {
            e.1 += 1.0;
            nc += 1.0;
        }
    }
    0.5 * counts.values().map(|(t, c)| (t / nt - c / nc).abs()).sum::<f64>()
}

pub fn one_minus_sum_sq(shares: &[f64]) -> f64 {
    1.0 - shares.iter().map(|s| s * s).sum::<f64>()
}
