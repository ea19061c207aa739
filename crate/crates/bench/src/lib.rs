//! Synthetic inputs shared by the benchmarks.

use frontier_match::{
    CovariateKind, CovariateSchema, CovariateSpec, MatchingSample, Provenance, Unit,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` units with `d` continuous covariates; treated units are shifted by
/// half a standard deviation in every coordinate.
pub fn sample(n: usize, d: usize, seed: u64) -> MatchingSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schema = CovariateSchema::new(
        (0..d)
            .map(|k| CovariateSpec::new(format!("x{k}"), CovariateKind::Continuous, ""))
            .collect(),
    )
    .expect("valid schema");
    let units = (0..n)
        .map(|i| {
            let treated = i % 3 == 0;
            let shift = if treated { 0.5 } else { 0.0 };
            Unit {
                unit_id: format!("u{i}"),
                year: 2000,
                village: format!("v{}", i % 5),
                treated,
                outcome: rng.random_bool(0.3),
                covariates: (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0 + shift).collect(),
            }
        })
        .collect();
    MatchingSample::new(schema, units, Provenance::FullPooling).expect("valid sample")
}
