//! Cross-system parameter predictability (L2) and the total metric.

mod tree;

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DatasetCollection;
use crate::fit::{FitResult, NormStats};
use crate::rng;

pub use tree::{best_split, tree_fit, RegressionTree, SplitChoice, TreeParams};

/// Fewest systems for which a train/test split is attempted.
pub const MIN_SYSTEMS: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LmetricError {
    #[error("L2 needs at least {MIN_SYSTEMS} systems, got {0}")]
    InsufficientSystems(usize),
    #[error("split ratio {0} leaves an empty train or test set")]
    InvalidSplit(f64),
    #[error("theta matrix rows have unequal lengths")]
    Ragged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct L2Options {
    pub split_ratio: f64,
    pub tree: TreeParams,
}

impl Default for L2Options {
    fn default() -> Self {
        Self { split_ratio: 0.7, tree: TreeParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L2Report {
    /// Test mse of predicting each slot from the slots before it.
    pub contributions: Vec<f64>,
    pub l2_total: f64,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Splits row indices `0..d` into sorted train and test sets.
pub fn split_rows(d: usize, split_ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), LmetricError> {
    let n_train = (split_ratio * d as f64).round();
    if !(n_train >= 1.0 && n_train < d as f64) {
        return Err(LmetricError::InvalidSplit(split_ratio));
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.shuffle(&mut rng::stream(seed, rng::label_of("l2-split")));
    let (train, test) = order.split_at(n_train as usize);
    let (mut train, mut test) = (train.to_vec(), test.to_vec());
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Scores how predictable each parameter column is from the earlier ones.
/// Slot 0 is predicted by its train mean, slot k by a tree on slots
/// `0..k`; every contribution is a test-set mse in raw units.
pub fn l2_score(theta_matrix: &[Vec<f64>], options: &L2Options, seed: u64) -> Result<L2Report, LmetricError> {
    let d = theta_matrix.len();
    if d < MIN_SYSTEMS {
        return Err(LmetricError::InsufficientSystems(d));
    }
    let t = theta_matrix[0].len();
    if theta_matrix.iter().any(|row| row.len() != t) {
        return Err(LmetricError::Ragged);
    }
    let (train, test) = split_rows(d, options.split_ratio, seed)?;
    let contributions = l2_contributions(theta_matrix, &train, &test, &options.tree);
    let l2_total = contributions.iter().sum();
    Ok(L2Report { contributions, l2_total, train, test, seed })
}

/// Per-slot test mse for an explicit split.
pub fn l2_contributions(theta_matrix: &[Vec<f64>], train: &[usize], test: &[usize], params: &TreeParams) -> Vec<f64> {
    let t = theta_matrix.first().map_or(0, Vec::len);
    (0..t).into_par_iter().map(|k| slot_contribution(theta_matrix, k, train, test, params)).collect()
}

fn slot_contribution(theta: &[Vec<f64>], slot: usize, train: &[usize], test: &[usize], params: &TreeParams) -> f64 {
    let target = |rows: &[usize]| -> Vec<f64> { rows.iter().map(|&i| theta[i][slot]).collect() };
    let (train_y, test_y) = (target(train), target(test));
    let sq = |p: f64, y: &f64| (p - y).powi(2);
    if slot == 0 {
        let mean = train_y.iter().sum::<f64>() / train_y.len() as f64;
        return test_y.iter().map(|y| sq(mean, y)).sum::<f64>() / test_y.len() as f64;
    }
    let features = |rows: &[usize]| -> Vec<Vec<f64>> { rows.iter().map(|&i| theta[i][..slot].to_vec()).collect() };
    let tree = tree_fit(&features(train), &train_y, params);
    tree.mse(&features(test), &test_y)
}

/// `L = L1 + L2`; without a report (too few systems) `L = L1`.
pub fn total_metric(fit: &FitResult, l2: Option<&L2Report>) -> f64 {
    match l2 {
        Some(report) => fit.mean_l1 + report.l2_total,
        None => fit.mean_l1,
    }
}

/// Relative rms residual below which fits are indistinguishable from exact.
pub const RESOLUTION: f64 = 1e-10;

/// Metric value below which candidates rank as tied: the mean over systems
/// of `(RESOLUTION * y_range)^2`.
pub fn resolution_floor(datasets: &DatasetCollection) -> f64 {
    let total: f64 = datasets
        .iter()
        .map(|d| (RESOLUTION * NormStats::from_data(d.xs(), d.ys()).y_range).powi(2))
        .sum();
    total / datasets.len().max(1) as f64
}

/// The value a metric ranks by: clamped to the floor, NaN as +inf.
pub fn ranking_value(value: f64, floor: f64) -> f64 {
    if value.is_nan() {
        f64::INFINITY
    } else {
        value.max(floor)
    }
}

/// Orders candidates by L, then by parameter count, then by canonical string.
pub fn compare_candidates(a: (f64, usize, &str), b: (f64, usize, &str)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then_with(|| a.2.cmp(b.2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fit_result(theta_matrix: Vec<Vec<f64>>, mean_l1: f64) -> FitResult {
        let d = theta_matrix.len();
        FitResult { theta_matrix, per_dataset_l1: vec![mean_l1; d], mean_l1, methods: vec![] }
    }

    #[test]
    fn identical_rows_score_zero() {
        let rows = vec![vec![1.5, -2.0, 0.25]; 50];
        let report = l2_score(&rows, &L2Options::default(), 3).unwrap();
        assert_eq!(report.l2_total, 0.0);
        assert!(report.contributions.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn too_few_systems() {
        let rows = vec![vec![1.0]; 7];
        assert_eq!(l2_score(&rows, &L2Options::default(), 0), Err(LmetricError::InsufficientSystems(7)));
    }

    #[test]
    fn split_is_seeded_and_disjoint() {
        let (train, test) = split_rows(30, 0.7, 11).unwrap();
        assert_eq!((train.len(), test.len()), (21, 9));
        assert!(train.iter().all(|i| !test.contains(i)));
        assert_eq!(split_rows(30, 0.7, 11).unwrap(), (train, test));
        assert_ne!(split_rows(30, 0.7, 12).unwrap().0, split_rows(30, 0.7, 11).unwrap().0);
        assert!(matches!(split_rows(10, 1.0, 0), Err(LmetricError::InvalidSplit(_))));
    }

    #[test]
    fn first_slot_uses_the_train_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows: Vec<Vec<f64>> = (0..20).map(|_| vec![rng.random::<f64>()]).collect();
        let report = l2_score(&rows, &L2Options::default(), 5).unwrap();
        let mean = report.train.iter().map(|&i| rows[i][0]).sum::<f64>() / report.train.len() as f64;
        let expected =
            report.test.iter().map(|&i| (rows[i][0] - mean).powi(2)).sum::<f64>() / report.test.len() as f64;
        assert!((report.contributions[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn later_slots_are_scored_on_unseen_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let rows: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        let options = L2Options::default();
        let report = l2_score(&rows, &options, 1).unwrap();
        let train_x: Vec<Vec<f64>> = report.train.iter().map(|&i| vec![rows[i][0]]).collect();
        let train_y: Vec<f64> = report.train.iter().map(|&i| rows[i][1]).collect();
        let tree = tree_fit(&train_x, &train_y, &options.tree);
        let test_x: Vec<Vec<f64>> = report.test.iter().map(|&i| vec![rows[i][0]]).collect();
        let test_y: Vec<f64> = report.test.iter().map(|&i| rows[i][1]).collect();
        assert_eq!(report.contributions[1], tree.mse(&test_x, &test_y));
        assert_eq!(report.l2_total, report.contributions.iter().sum::<f64>());
    }

    #[test]
    fn total_metric_adds_l2() {
        let fit = fit_result(vec![vec![0.0]; 10], 0.25);
        let report = L2Report { contributions: vec![0.5], l2_total: 0.5, train: vec![], test: vec![], seed: 0 };
        assert_eq!(total_metric(&fit, Some(&report)), 0.75);
        assert_eq!(total_metric(&fit, None), 0.25);
        let zero = L2Report { contributions: vec![0.0], l2_total: 0.0, ..report };
        assert_eq!(total_metric(&fit, Some(&zero)), 0.25);
    }

    #[test]
    fn ties_prefer_fewer_parameters_then_text() {
        assert_eq!(compare_candidates((1.0, 3, "b"), (1.0, 5, "a")), Ordering::Less);
        assert_eq!(compare_candidates((1.0, 3, "a"), (1.0, 3, "b")), Ordering::Less);
        assert_eq!(compare_candidates((0.5, 9, "z"), (1.0, 3, "a")), Ordering::Less);
    }

    #[test]
    fn values_below_the_floor_tie() {
        use crate::data::{Dataset, Provenance};
        let points = |scale: f64| (0..5).map(|i| (i as f64, scale * i as f64)).collect();
        let data = DatasetCollection::new(
            vec![Dataset::new("a", points(1.0)).unwrap(), Dataset::new("b", points(3.0)).unwrap()],
            Provenance::InMemory,
        )
        .unwrap();
        let floor = resolution_floor(&data);
        let expected = ((RESOLUTION * 4.0).powi(2) + (RESOLUTION * 12.0).powi(2)) / 2.0;
        assert!((floor - expected).abs() <= 1e-12 * expected);
        assert_eq!(ranking_value(1e-30, floor), ranking_value(0.0, floor));
        assert_eq!(ranking_value(0.5, floor), 0.5);
        assert_eq!(ranking_value(f64::NAN, floor), f64::INFINITY);
    }
}
