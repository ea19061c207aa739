mod common;

use std::collections::{BTreeMap, BTreeSet};

use frontier_match::data::write_dataset;
use frontier_match::descriptives::{diffusion_series, fractionalization_by, Dimension};
use frontier_match::estimation::welch_test;
use frontier_match::simulate::SIM_COVARIATES;
use frontier_match::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use common::*;

fn small_panel(seed: u64) -> PanelDataset {
    simulate(&GeneratorConfig {
        seed,
        villages: 3,
        households_per_village: 15,
        ..Default::default()
    })
    .unwrap()
    .panel
}

fn pooling() -> PoolingConfig {
    PoolingConfig::new((1994, 2004), SIM_COVARIATES.iter().map(|c| c.to_string()).collect())
}

// --- ingestion -----------------------------------------------------------------

const FIXTURE: &str = "\
household_id,year,village,ethnicity,religion,treated,outcome,farm_size,oxen
h1,2001,A,amhara,orthodox,0,0,1.5,1
h1,2002,A,amhara,orthodox,1,0,1.5,1
h1,2003,A,amhara,orthodox,0,1,1.6,1
h1,2004,A,amhara,orthodox,0,0,1.6,1
h2,2001,A,oromo,muslim,0,0,0.8,0
h2,2002,A,oromo,muslim,0,0,0.8,0
h2,2003,A,oromo,muslim,0,0,0.9,0
h2,2004,A,oromo,muslim,0,1,0.9,1
h3,2001,B,oromo,orthodox,1,1,2.2,1
h3,2002,B,oromo,orthodox,0,0,2.2,1
h3,2003,B,oromo,orthodox,1,0,2.3,1
h3,2004,B,oromo,orthodox,0,0,2.3,1
h4,2001,B,amhara,orthodox,0,1,0.5,0
h4,2002,B,amhara,orthodox,0,0,0.5,0
h4,2003,B,amhara,orthodox,0,0,0.6,0
h4,2004,B,amhara,orthodox,1,0,0.6,0
h5,2001,B,tigray,orthodox,0,0,1.1,1
h5,2002,B,tigray,orthodox,0,0,1.1,1
h5,2003,B,tigray,orthodox,1,0,1.2,1
h5,2004,B,tigray,orthodox,0,1,1.2,1
";

fn fixture_schema() -> CovariateSchema {
    CovariateSchema::new(vec![
        CovariateSpec::new("farm_size", CovariateKind::Continuous, "ha"),
        CovariateSpec::new("oxen", CovariateKind::Binary, ""),
    ])
    .unwrap()
}

#[test]
fn twenty_row_fixture_hand_counts() {
    let panel = parse_dataset(FIXTURE.as_bytes(), &fixture_schema())
        .unwrap()
        .with_study_window(2001, 2004);
    assert_eq!(panel.rows.len(), 20);
    assert!(validate(&panel).is_ok());
    assert_eq!(panel.village_row_counts(), BTreeMap::from([("A".into(), 8), ("B".into(), 12)]));

    // h1: cutoff 2002, treated there. h2: adopts 2004, never treated.
    // h3: treated and adopts 2001. h4: adopts 2001. h5: treated 2003.
    let config = PoolingConfig::new((2001, 2004), vec!["farm_size".into(), "oxen".into()]);
    let s = build_full_pooling(&panel, &config).unwrap();
    let keys: Vec<(String, i32, bool)> = s
        .units
        .iter()
        .map(|u| (u.unit_id.clone(), u.year, u.treated))
        .collect();
    let want: Vec<(String, i32, bool)> = [
        ("h1", 2001, false),
        ("h1", 2002, true),
        ("h2", 2001, false),
        ("h2", 2002, false),
        ("h2", 2003, false),
        ("h2", 2004, false),
        ("h3", 2001, true),
        ("h4", 2001, false),
        ("h5", 2001, false),
        ("h5", 2002, false),
        ("h5", 2003, true),
    ]
    .iter()
    .map(|&(h, y, t)| (h.to_string(), y, t))
    .collect();
    assert_eq!(keys, want);
    assert_eq!((s.n_treated(), s.n_control()), (3, 8));
    assert_eq!(s.units.iter().filter(|u| u.outcome).count(), 3);
}

#[test]
fn duplicate_household_year_is_rejected() {
    let text = format!("{FIXTURE}h5,2004,B,tigray,orthodox,0,0,1.2,1\n");
    match parse_dataset(text.as_bytes(), &fixture_schema()) {
        Err(Error::DuplicateKey { household_id, year, row }) => {
            assert_eq!((household_id.as_str(), year, row), ("h5", 2004, 21));
        }
        other => panic!("expected duplicate key error, got {other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn csv_round_trip(seed in any::<u64>()) {
        let panel = small_panel(seed);
        let mut buf = Vec::new();
        write_dataset(&mut buf, &panel).unwrap();
        let back = parse_dataset(buf.as_slice(), &panel.schema).unwrap();
        prop_assert_eq!(&back.rows, &panel.rows);
        let mut again = Vec::new();
        write_dataset(&mut again, &back).unwrap();
        prop_assert_eq!(buf, again);
    }

    #[test]
    fn pooled_samples_respect_assignment_rules(seed in any::<u64>()) {
        let panel = small_panel(seed);
        for (s, survey) in [
            (build_full_pooling(&panel, &pooling()).unwrap(), None),
            (
                build_partial_pooling(&panel, &pooling().with_survey_years([1994, 1997, 1999, 2004])).unwrap(),
                Some([1994, 1997, 1999, 2004]),
            ),
        ] {
            let mut by_household: BTreeMap<&str, Vec<&Unit>> = BTreeMap::new();
            for u in &s.units {
                by_household.entry(u.unit_id.as_str()).or_default().push(u);
                if let Some(years) = survey {
                    prop_assert!(years.contains(&u.year));
                }
            }
            for (id, units) in by_household {
                let rows: Vec<&Observation> = panel.rows.iter().filter(|r| r.household_id == id).collect();
                let first_treat = rows.iter().filter(|r| r.treated).map(|r| r.year).min();
                let adoption = rows.iter().filter(|r| r.outcome).map(|r| r.year).min();
                let cutoff = [first_treat, adoption].into_iter().flatten().min();
                prop_assert!(units.iter().filter(|u| u.treated).count() <= 1);
                for u in &units {
                    prop_assert!(cutoff.is_none_or(|c| u.year <= c));
                    prop_assert_eq!(u.treated, Some(u.year) == first_treat);
                    if u.outcome {
                        prop_assert_eq!(Some(u.year), adoption);
                    }
                }
            }
        }
    }

    #[test]
    fn att_ignores_unit_order(seed in any::<u64>()) {
        let s = build_full_pooling(&small_panel(seed), &pooling()).unwrap();
        let mut idx: Vec<usize> = (0..s.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = estimate_att(&s).unwrap();
        let b = estimate_att(&s.select(&idx)).unwrap();
        prop_assert!((a.att - b.att).abs() < 1e-12);
        prop_assert!((a.std_error - b.std_error).abs() < 1e-12);
        prop_assert_eq!(a.estimand, b.estimand);
    }

    #[test]
    fn welch_is_symmetric(
        a in proptest::collection::vec(-100.0f64..100.0, 2..30),
        b in proptest::collection::vec(-100.0f64..100.0, 2..30),
    ) {
        let ab = welch_test(&a, &b).unwrap();
        let ba = welch_test(&b, &a).unwrap();
        prop_assert!((ab.p_value - ba.p_value).abs() < 1e-12);
        prop_assert!((ab.t + ba.t).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab.p_value));
    }

    #[test]
    fn fractionalization_is_order_free_and_bounded(
        raw in proptest::collection::vec(0.01f64..1.0, 1..12),
        seed in any::<u64>(),
    ) {
        let total: f64 = raw.iter().sum();
        let shares: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let mut shuffled = shares.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let f = fractionalization(&shares).unwrap();
        prop_assert!((f - one_minus_sum_sq(&shares)).abs() < 1e-12);
        prop_assert!((f - fractionalization(&shuffled).unwrap()).abs() < 1e-12);
        let k = shares.len() as f64;
        prop_assert!(f >= -1e-12 && f <= 1.0 - 1.0 / k + 1e-12);
    }

    #[test]
    fn adopter_category_is_monotone(a in 0.001f64..100.0, b in 0.001f64..100.0) {
        let t = CategoryThresholds::default();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(adopter_category(lo, &t).unwrap() <= adopter_category(hi, &t).unwrap());
    }

    #[test]
    fn union_diffusion_adds_village_counts(seed in any::<u64>()) {
        let panel = small_panel(seed);
        let villages: Vec<String> = panel.villages().into_iter().map(String::from).collect();
        let all: BTreeSet<String> = villages.iter().cloned().collect();
        let union = diffusion_series(&panel, &all).unwrap();
        let per: Vec<_> = villages
            .iter()
            .map(|v| diffusion_series(&panel, &BTreeSet::from([v.clone()])).unwrap())
            .collect();
        for p in &union.points {
            let adopters: usize = per
                .iter()
                .map(|s| s.points.iter().rev().find(|q| q.year <= p.year).map_or(0, |q| q.adopters))
                .sum();
            let households: usize = per.iter().map(|s| s.points[0].households).sum();
            prop_assert_eq!(p.adopters, adopters);
            prop_assert_eq!(p.households, households);
        }
        prop_assert!(union.points.windows(2).all(|w| w[0].share <= w[1].share));
    }
}

// --- Welch against an independent t-distribution ----------------------------------

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < tiny {
        d = tiny;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        d = if d.abs() < tiny { tiny } else { d };
        c = 1.0 + aa / c;
        c = if c.abs() < tiny { tiny } else { c };
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        d = if d.abs() < tiny { tiny } else { d };
        c = 1.0 + aa / c;
        c = if c.abs() < tiny { tiny } else { c };
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// Lanczos log-gamma (g = 7, n = 9).
fn ln_gamma(x: f64) -> f64 {
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    let x = x - 1.0;
    let t = x + 7.5;
    let s = C[1..]
        .iter()
        .enumerate()
        .fold(C[0], |acc, (i, c)| acc + c / (x + i as f64 + 1.0));
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + s.ln()
}

fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    let front = (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln()).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

fn reference_welch_p(a: &[f64], b: &[f64]) -> f64 {
    let mv = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        (n, m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
    };
    let ((na, ma, va), (nb, mb, vb)) = (mv(a), mv(b));
    let se2 = va / na + vb / nb;
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    reg_inc_beta(df / 2.0, 0.5, df / (df + t * t))
}

#[test]
fn welch_matches_independent_t_distribution() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    for _ in 0..20 {
        let a: Vec<f64> = Normal::new(0.0, 1.0).unwrap().sample_iter(&mut rng).take(30).collect();
        let b: Vec<f64> = Normal::new(1.0, 1.0).unwrap().sample_iter(&mut rng).take(30).collect();
        let got = welch_test(&a, &b).unwrap().p_value;
        let want = reference_welch_p(&a, &b);
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }
}

#[test]
fn welch_reference_value() {
    // t = -1 with 8 degrees of freedom.
    let a = [1.0, 2.0, 3.0, 4.0, 5.0];
    let b = [2.0, 3.0, 4.0, 5.0, 6.0];
    let got = welch_test(&a, &b).unwrap();
    assert!((got.t + 1.0).abs() < 1e-12 && (got.df - 8.0).abs() < 1e-12);
    assert!((got.p_value - 0.346_593_507_087_334_16).abs() < 1e-12);
    assert!((reference_welch_p(&a, &b) - got.p_value).abs() < 1e-12);
}

// --- end to end on simulated data ----------------------------------------------------

#[test]
fn pipeline_on_simulated_panel() {
    let sim = simulate(&GeneratorConfig {
        seed: 11,
        villages: 3,
        households_per_village: 60,
        ..Default::default()
    })
    .unwrap();
    let s = build_full_pooling(&sim.panel, &pooling()).unwrap();
    let cov = estimate_covariance(&s).unwrap();
    let f = build_frontier_ami(&s, true, &cov).unwrap();
    let selection = select_balanced_subset(&f, &s, 0.10).unwrap();
    let subset = f.subset(&s, selection.point_index);
    assert_eq!(selection.report, balance_report(&subset, 0.10).unwrap());
    // Larger points on the frontier all fail the balance test.
    for k in 0..selection.point_index {
        assert!(!balance_report(&f.subset(&s, k), 0.10).unwrap().balanced);
    }
    let att = estimate_att(&subset).unwrap();
    let expected = if subset.n_treated() < s.n_treated() {
        Estimand::Fsatt
    } else {
        Estimand::Satt
    };
    assert_eq!(att.estimand, expected);

    let along = att_along_frontier(&f, &s);
    assert_eq!(along.len(), f.len());
    assert_eq!(along[selection.point_index].1.as_ref().unwrap(), &att);

    let eth = fractionalization_by(&sim.panel, Dimension::Ethnicity, None).unwrap();
    assert!(eth.value > 0.0 && eth.value < 1.0);
}

#[test]
fn full_pooling_keeps_more_rows_than_partial() {
    let panel = small_panel(4);
    let full = build_full_pooling(&panel, &pooling()).unwrap();
    let partial =
        build_partial_pooling(&panel, &pooling().with_survey_years([1994, 1997, 1999, 2004])).unwrap();
    assert!(partial.len() < full.len());
    let full_keys: BTreeSet<(String, i32)> =
        full.units.iter().map(|u| (u.unit_id.clone(), u.year)).collect();
    assert!(partial
        .units
        .iter()
        .all(|u| full_keys.contains(&(u.unit_id.clone(), u.year))));
}

#[test]
fn null_design_centers_matched_att_at_zero() {
    let reps = 40;
    let (mut matched, mut naive) = (Vec::new(), Vec::new());
    for seed in 0..reps {
        let sim = simulate(&GeneratorConfig {
            seed,
            villages: 4,
            households_per_village: 60,
            tau: 0.0,
            confounding: 0.0,
            outcome_confounding: 0.0,
            ..Default::default()
        })
        .unwrap();
        let s = build_full_pooling(&sim.panel, &pooling()).unwrap();
        let f = build_frontier_ami(&s, true, &estimate_covariance(&s).unwrap()).unwrap();
        let selection = select_balanced_subset(&f, &s, 0.10).unwrap();
        matched.push(estimate_att(&f.subset(&s, selection.point_index)).unwrap().att);
        naive.push(estimate_att(&s).unwrap().att);
    }
    for (name, xs) in [("matched", &matched), ("naive", &naive)] {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(m.abs() <= 3.0 * sd / n.sqrt(), "{name}: mean {m}, sd {sd}");
    }
}
