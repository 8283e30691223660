#![allow(dead_code)]

use ddp_core::{
    AggregateBundle, ConsumerType, Entry, MarketConfig, Population, SupplyModel, SupplyPath,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn path(v: &[f64]) -> SupplyPath {
    SupplyPath::new(v.to_vec()).unwrap()
}

pub fn bundle(v: &[f64]) -> AggregateBundle {
    AggregateBundle::new(v.to_vec()).unwrap()
}

pub fn cfg(n: usize, c0: f64) -> MarketConfig {
    MarketConfig::new(n, c0).unwrap()
}

pub fn four_scenarios() -> SupplyModel {
    SupplyModel::FiniteScenario {
        scenarios: vec![
            (path(&[0.0, 0.0]), 0.25),
            (path(&[0.0, 2.0]), 0.25),
            (path(&[4.0, 0.0]), 0.25),
            (path(&[4.0, 2.0]), 0.25),
        ],
    }
}

pub fn golden_population(r: f64) -> Population {
    Population::new(
        2,
        vec![
            Entry {
                consumer: ConsumerType::capped_linear(1, r, 4.0),
                mass: 0.5,
            },
            Entry {
                consumer: ConsumerType::capped_linear(2, r, 2.0),
                mass: 0.5,
            },
        ],
        vec![],
    )
    .unwrap()
}

/// Random finite-scenario model with `levels` supply values on a unit grid.
pub fn random_scenarios(rng: &mut ChaCha8Rng, n: usize, count: usize, levels: u32) -> SupplyModel {
    let raw: Vec<f64> = (0..count).map(|_| rng.random_range(1..=10u32) as f64).collect();
    let total: f64 = raw.iter().sum();
    let mut scenarios: Vec<(SupplyPath, f64)> = raw
        .iter()
        .map(|w| {
            let s: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64).collect();
            (path(&s), w / total)
        })
        .collect();
    // Make the probabilities sum to one to the last bit.
    let head: f64 = scenarios[..count - 1].iter().map(|s| s.1).sum();
    scenarios[count - 1].1 = 1.0 - head;
    SupplyModel::FiniteScenario { scenarios }
}

/// Random population of capped-linear types with `R >= c0`, masses summing
/// to one exactly.
pub fn random_population(rng: &mut ChaCha8Rng, n: usize, types: usize, c0: f64) -> Population {
    let mut masses: Vec<f64> = (0..types).map(|_| rng.random_range(1..=4u32) as f64).collect();
    let total: f64 = masses.iter().sum();
    for m in &mut masses {
        *m /= total;
    }
    let head: f64 = masses[..types - 1].iter().sum();
    masses[types - 1] = 1.0 - head;
    let entries = masses
        .into_iter()
        .map(|mass| Entry {
            consumer: ConsumerType::capped_linear(
                rng.random_range(1..=n),
                c0 * rng.random_range(1.0..3.0),
                rng.random_range(1..=4u32) as f64,
            ),
            mass,
        })
        .collect();
    Population::new(n, entries, vec![]).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
