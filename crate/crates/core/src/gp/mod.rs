//! Genetic-programming search over candidate expressions.

mod operators;

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DatasetCollection;
use crate::expr::{random_expression, random_full, Expression, PrimitiveSet};
use crate::fit::{fit_all, FitOptions, FitResult};
use crate::lmetric::{compare_candidates, ranking_value, resolution_floor, L2Report};
use crate::rng::{self, StreamRng};
use crate::transform::{dimensionalize, Template};

pub use operators::{crossover, crossover_at, mutate, mutate_at, truncate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpConfig {
    pub population_size: usize,
    pub generations: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    pub tournament_size: usize,
    pub max_depth: usize,
    pub elite_count: usize,
    /// Candidates whose template has more slots are not fitted.
    pub max_params: usize,
    pub seed: u64,
    pub primitives: PrimitiveSet,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            population_size: 200,
            generations: 30,
            crossover_prob: 0.7,
            mutation_prob: 0.2,
            tournament_size: 5,
            max_depth: 6,
            elite_count: 1,
            max_params: 10,
            seed: 0,
            primitives: PrimitiveSet::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GpConfigError {
    #[error("{name} = {value} is not a probability")]
    Probability { name: &'static str, value: f64 },
    #[error("crossover_prob + mutation_prob exceeds 1")]
    ProbabilitySum,
    #[error("population_size {population} is smaller than tournament_size {tournament}")]
    Population { population: usize, tournament: usize },
    #[error("{0} must be at least 1")]
    Zero(&'static str),
    #[error("max_depth must be at least 2")]
    Depth,
    #[error("elite_count exceeds population_size")]
    Elites,
    #[error("primitive set has no operators")]
    NoOperators,
}

impl GpConfig {
    pub fn validate(&self) -> Result<(), GpConfigError> {
        for (name, value) in [("crossover_prob", self.crossover_prob), ("mutation_prob", self.mutation_prob)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(GpConfigError::Probability { name, value });
            }
        }
        if self.crossover_prob + self.mutation_prob > 1.0 {
            return Err(GpConfigError::ProbabilitySum);
        }
        if self.tournament_size == 0 {
            return Err(GpConfigError::Zero("tournament_size"));
        }
        if self.elite_count == 0 {
            return Err(GpConfigError::Zero("elite_count"));
        }
        if self.population_size < self.tournament_size {
            return Err(GpConfigError::Population { population: self.population_size, tournament: self.tournament_size });
        }
        if self.elite_count > self.population_size {
            return Err(GpConfigError::Elites);
        }
        if self.max_depth < 2 {
            return Err(GpConfigError::Depth);
        }
        if self.primitives.is_empty() {
            return Err(GpConfigError::NoOperators);
        }
        Ok(())
    }
}

/// An evaluated candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateRecord {
    /// First raw expression that produced this template.
    pub raw: Expression,
    pub template: Template,
    pub canonical: String,
    pub fit: FitResult,
    pub l2: Option<L2Report>,
    pub total_l: Option<f64>,
    /// Generation in which the template was first evaluated.
    pub generation: usize,
}

impl CandidateRecord {
    pub fn mean_l1(&self) -> f64 {
        self.fit.mean_l1
    }

    pub fn param_count(&self) -> usize {
        self.template.param_count()
    }

    /// Attaches an L2 report; `total_l` becomes `mean_l1 + l2_total`.
    pub fn set_l2(&mut self, report: L2Report) {
        self.total_l = Some(self.fit.mean_l1 + report.l2_total);
        self.l2 = Some(report);
    }

    /// Marks the candidate as scored by L1 alone.
    pub fn set_l1_only(&mut self) {
        self.total_l = Some(self.fit.mean_l1);
        self.l2 = None;
    }
}

/// One line of the progress log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    /// Lowest mean L1 in the population.
    pub best_l1: f64,
    /// Distinct templates fitted so far.
    pub unique_evaluated: usize,
    /// Population members whose expression has no template within limits.
    pub invalid: usize,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    /// Every fitted template, ascending by mean L1.
    pub leaderboard: Vec<CandidateRecord>,
    pub progress: Vec<GenerationStats>,
}

/// Ramped half-and-half over depths `2..=max_depth`.
pub fn initial_population<R: Rng + ?Sized>(config: &GpConfig, rng: &mut R) -> Vec<Expression> {
    let depths: Vec<usize> = (2..=config.max_depth.max(2)).collect();
    (0..config.population_size)
        .map(|i| {
            let depth = depths[i % depths.len()];
            if (i / depths.len()) % 2 == 0 {
                random_full(&config.primitives, depth, rng)
            } else {
                random_expression(&config.primitives, depth, rng)
            }
        })
        .collect()
}

fn tournament<R: Rng + ?Sized>(fitness: &[f64], size: usize, rng: &mut R) -> usize {
    (0..size)
        .map(|_| rng.random_range(0..fitness.len()))
        .reduce(|best, i| if fitness[i] < fitness[best] || (fitness[i] == fitness[best] && i < best) { i } else { best })
        .expect("tournament size is at least 1")
}

enum Slot {
    Invalid,
    Known(usize),
    Pending(String),
}

struct Archive {
    records: Vec<CandidateRecord>,
    by_key: HashMap<String, usize>,
}

impl Archive {
    /// Fitness of each individual, fitting new templates in parallel.
    fn evaluate(
        &mut self,
        population: &[Expression],
        datasets: &DatasetCollection,
        config: &GpConfig,
        fit: &FitOptions,
        generation: usize,
        floor: f64,
    ) -> (Vec<f64>, usize) {
        let mut slots = Vec::with_capacity(population.len());
        let mut pending: HashMap<String, usize> = HashMap::new();
        let mut jobs: Vec<(usize, Template)> = Vec::new();
        for (i, e) in population.iter().enumerate() {
            let slot = match dimensionalize(e) {
                Ok(t) if t.param_count() <= config.max_params => {
                    let key = t.canonical_string();
                    if let Some(&r) = self.by_key.get(&key) {
                        Slot::Known(r)
                    } else {
                        if !pending.contains_key(&key) {
                            pending.insert(key.clone(), jobs.len());
                            jobs.push((i, t.clone()));
                        }
                        Slot::Pending(key)
                    }
                }
                _ => Slot::Invalid,
            };
            slots.push(slot);
        }
        let fits: Vec<FitResult> = jobs.par_iter().map(|(_, t)| fit_all(t, datasets, config.seed, fit)).collect();
        for ((i, template), fit) in jobs.into_iter().zip(fits) {
            let canonical = template.canonical_string();
            self.by_key.insert(canonical.clone(), self.records.len());
            self.records.push(CandidateRecord {
                raw: population[i].clone(),
                template,
                canonical,
                fit,
                l2: None,
                total_l: None,
                generation,
            });
        }
        let mut invalid = 0;
        let fitness = slots
            .into_iter()
            .map(|slot| {
                let r = match slot {
                    Slot::Invalid => {
                        invalid += 1;
                        return f64::INFINITY;
                    }
                    Slot::Known(r) => r,
                    Slot::Pending(key) => self.by_key[&key],
                };
                ranking_value(self.records[r].fit.mean_l1, floor)
            })
            .collect();
        (fitness, invalid)
    }
}

/// Runs the search. `on_generation` sees each progress line as soon as
/// the generation is evaluated.
pub fn evolve(
    datasets: &DatasetCollection,
    config: &GpConfig,
    fit: &FitOptions,
    mut on_generation: impl FnMut(&GenerationStats),
) -> Result<SearchOutcome, GpConfigError> {
    config.validate()?;
    let mut rng: StreamRng = rng::stream(config.seed, rng::label_of("gp"));
    let mut archive = Archive { records: Vec::new(), by_key: HashMap::new() };
    let mut progress = Vec::with_capacity(config.generations + 1);
    let mut population = initial_population(config, &mut rng);
    let floor = resolution_floor(datasets);

    for generation in 0..=config.generations {
        let (fitness, invalid) = archive.evaluate(&population, datasets, config, fit, generation, floor);
        let stats = GenerationStats {
            generation,
            best_l1: fitness.iter().copied().fold(f64::INFINITY, f64::min),
            unique_evaluated: archive.records.len(),
            invalid,
        };
        on_generation(&stats);
        progress.push(stats);
        if generation == config.generations {
            break;
        }

        let mut ranked: Vec<usize> = (0..population.len()).collect();
        ranked.sort_by(|&a, &b| fitness[a].total_cmp(&fitness[b]).then(a.cmp(&b)));
        let mut next: Vec<Expression> = ranked[..config.elite_count].iter().map(|&i| population[i].clone()).collect();
        while next.len() < config.population_size {
            let a = &population[tournament(&fitness, config.tournament_size, &mut rng)];
            let roll: f64 = rng.random();
            if roll < config.crossover_prob {
                let b = &population[tournament(&fitness, config.tournament_size, &mut rng)];
                let (c, d) = crossover(a, b, config.max_depth, &mut rng);
                next.push(c);
                if next.len() < config.population_size {
                    next.push(d);
                }
            } else if roll < config.crossover_prob + config.mutation_prob {
                next.push(mutate(a, &config.primitives, config.max_depth, &mut rng));
            } else {
                next.push(a.clone());
            }
        }
        population = next;
    }

    let mut leaderboard = archive.records;
    leaderboard.sort_by(|a, b| {
        let key = |r: &CandidateRecord| ranking_value(r.fit.mean_l1, floor);
        compare_candidates((key(a), a.param_count(), &a.canonical), (key(b), b.param_count(), &b.canonical))
    });
    Ok(SearchOutcome { leaderboard, progress })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn defaults_validate() {
        assert_eq!(GpConfig::default().validate(), Ok(()));
        let bad = GpConfig { population_size: 3, ..GpConfig::default() };
        assert!(matches!(bad.validate(), Err(GpConfigError::Population { .. })));
        let bad = GpConfig { mutation_prob: 1.5, ..GpConfig::default() };
        assert!(matches!(bad.validate(), Err(GpConfigError::Probability { .. })));
        let bad = GpConfig { elite_count: 0, ..GpConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn initial_population_is_ramped() {
        let config = GpConfig { population_size: 50, max_depth: 6, ..GpConfig::default() };
        let pop = initial_population(&config, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(pop.len(), 50);
        assert!(pop.iter().all(|e| e.depth() <= 6));
        // full trees in the first round reach their target depth
        for (i, e) in pop.iter().take(5).enumerate() {
            assert_eq!(e.depth(), i + 2);
        }
    }

    #[test]
    fn tournament_prefers_lower_fitness() {
        let fitness = [5.0, 1.0, 3.0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let wins = (0..300).filter(|_| tournament(&fitness, 3, &mut rng) == 1).count();
        assert!(wins > 200);
        assert_eq!(tournament(&[2.0; 4], 100, &mut rng), 0);
    }
}
