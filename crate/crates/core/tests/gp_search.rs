use std::collections::HashSet;

use eqsearch::data::{Dataset, DatasetCollection, Provenance};
use eqsearch::expr::{parse, random_expression, PrimitiveSet};
use eqsearch::fit::FitOptions;
use eqsearch::gp::{crossover, evolve, initial_population, GpConfig};
use eqsearch::lmetric::resolution_floor;
use eqsearch::rng;
use eqsearch::transform::{dimensionalize, Template};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn linear_family() -> DatasetCollection {
    let systems = [(0.5, 1.0), (-1.5, 2.0), (2.0, -3.0), (1.25, 0.5), (3.0, 4.0)];
    let datasets = systems
        .iter()
        .enumerate()
        .map(|(j, &(a, b))| {
            let points = (0..12).map(|i| {
                let x = i as f64 * 0.5;
                (x, a * x + b)
            });
            Dataset::new(format!("s{j}"), points.collect()).unwrap()
        })
        .collect();
    DatasetCollection::new(datasets, Provenance::InMemory).unwrap()
}

fn small_config(generations: usize, seed: u64) -> GpConfig {
    GpConfig { population_size: 30, generations, max_depth: 4, seed, ..GpConfig::default() }
}

fn fast_fit() -> FitOptions {
    FitOptions { use_pso: false, ..FitOptions::default() }
}

#[test]
fn linear_family_is_found_first() {
    let outcome = evolve(&linear_family(), &small_config(5, 2), &fast_fit(), |_| {}).unwrap();
    let linear = Template::parse("t0*x + t1").unwrap().canonical_string();
    let first = &outcome.leaderboard[0];
    assert_eq!(first.canonical, linear);
    assert!(first.mean_l1() < 1e-10, "{}", first.mean_l1());
}

#[test]
fn zero_generations_evaluates_the_initial_population() {
    let config = small_config(0, 9);
    let outcome = evolve(&linear_family(), &config, &fast_fit(), |_| {}).unwrap();
    assert_eq!(outcome.progress.len(), 1);

    let mut stream = rng::stream(config.seed, rng::label_of("gp"));
    let expected: HashSet<String> = initial_population(&config, &mut stream)
        .iter()
        .filter_map(|e| dimensionalize(e).ok())
        .filter(|t| t.param_count() <= config.max_params)
        .map(|t| t.canonical_string())
        .collect();
    let got: HashSet<String> = outcome.leaderboard.iter().map(|r| r.canonical.clone()).collect();
    assert_eq!(got, expected);
    assert!(outcome.leaderboard.iter().all(|r| r.generation == 0));
}

#[test]
fn same_seed_gives_identical_leaderboards() {
    let data = linear_family();
    let run = || evolve(&data, &small_config(3, 4), &fast_fit(), |_| {}).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.leaderboard.len(), b.leaderboard.len());
    for (x, y) in a.leaderboard.iter().zip(&b.leaderboard) {
        assert_eq!(x.canonical, y.canonical);
        assert_eq!(x.mean_l1().to_bits(), y.mean_l1().to_bits());
        let bits = |m: &Vec<Vec<f64>>| m.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&x.fit.theta_matrix), bits(&y.fit.theta_matrix));
    }
}

#[test]
fn leaderboard_invariants() {
    let data = linear_family();
    let config = GpConfig { population_size: 24, generations: 4, max_depth: 5, seed: 13, ..GpConfig::default() };
    let mut seen = Vec::new();
    let outcome = evolve(&data, &config, &fast_fit(), |s| seen.push(s.best_l1)).unwrap();

    assert_eq!(seen.len(), config.generations + 1);
    assert!(seen.windows(2).all(|w| w[1] <= w[0]), "{seen:?}");

    let unique: HashSet<&str> = outcome.leaderboard.iter().map(|r| r.canonical.as_str()).collect();
    assert_eq!(unique.len(), outcome.leaderboard.len());
    for r in &outcome.leaderboard {
        assert!(r.param_count() <= config.max_params);
        assert_eq!(r.template.canonical_string(), r.canonical);
        assert_eq!(r.fit.theta_matrix.len(), data.len());
        assert!(r.fit.theta_matrix.iter().all(|row| row.len() == r.param_count()));
    }
    let floor = resolution_floor(&data);
    let ranked: Vec<f64> = outcome.leaderboard.iter().map(|r| r.mean_l1().max(floor)).collect();
    assert!(ranked.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn random_crossovers_respect_the_depth_limit() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let primitives = PrimitiveSet::default();
    for _ in 0..1000 {
        let a = random_expression(&primitives, 6, &mut rng);
        let b = random_expression(&primitives, 6, &mut rng);
        let (c, d) = crossover(&a, &b, 6, &mut rng);
        for child in [&c, &d] {
            assert!(child.depth() <= 6, "{child}");
            let reparsed = parse(&child.to_string()).unwrap();
            assert_eq!(reparsed.canonical_string(), child.canonical_string());
        }
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let data = linear_family();
    for config in [
        GpConfig { crossover_prob: 0.9, mutation_prob: 0.2, ..GpConfig::default() },
        GpConfig { population_size: 3, tournament_size: 5, ..GpConfig::default() },
        GpConfig { max_depth: 1, ..GpConfig::default() },
    ] {
        assert!(evolve(&data, &config, &fast_fit(), |_| {}).is_err());
    }
}
