use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self { max_depth: 4, min_samples_leaf: 2 }
    }
}

/// CART regression tree. Samples with `feature <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RegressionTree {
    Leaf { value: f64, samples: usize },
    Split { feature: usize, threshold: f64, left: Box<RegressionTree>, right: Box<RegressionTree> },
}

/// Best split of a node: feature, threshold and the resulting sum of
/// squared errors of both children.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    pub sse: f64,
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + 0.5 * (b - a);
    if m < b {
        m
    } else {
        a
    }
}

/// Greedy best split over all features and midpoints between distinct
/// sorted values, honoring `min_samples_leaf`. Ties keep the lowest feature
/// and then the lowest threshold.
pub fn best_split(rows: &[Vec<f64>], targets: &[f64], indices: &[usize], min_leaf: usize) -> Option<SplitChoice> {
    let n = indices.len();
    let min_leaf = min_leaf.max(1);
    if n < 2 * min_leaf {
        return None;
    }
    let total: f64 = indices.iter().map(|&i| targets[i]).sum();
    let total_sq: f64 = indices.iter().map(|&i| targets[i] * targets[i]).sum();
    let features = rows.first().map_or(0, Vec::len);
    let mut best: Option<(f64, SplitChoice)> = None;
    let mut order = indices.to_vec();
    for feature in 0..features {
        order.sort_by(|&a, &b| rows[a][feature].total_cmp(&rows[b][feature]).then(a.cmp(&b)));
        let mut left = 0.0;
        for k in 1..n {
            left += targets[order[k - 1]];
            let (lo, hi) = (rows[order[k - 1]][feature], rows[order[k]][feature]);
            if k < min_leaf || n - k < min_leaf || lo == hi {
                continue;
            }
            let right = total - left;
            // maximizing this is minimizing the children's summed SSE
            let score = left * left / k as f64 + right * right / (n - k) as f64;
            if best.as_ref().is_none_or(|(s, _)| score > *s) {
                let sse = (total_sq - score).max(0.0);
                best = Some((score, SplitChoice { feature, threshold: midpoint(lo, hi), sse }));
            }
        }
    }
    best.map(|(_, choice)| choice)
}

impl RegressionTree {
    /// Grows a tree on `rows` (one feature vector per sample).
    pub fn fit(rows: &[Vec<f64>], targets: &[f64], params: &TreeParams) -> Self {
        assert_eq!(rows.len(), targets.len(), "one target per row");
        assert!(!targets.is_empty(), "tree needs at least one sample");
        let indices: Vec<usize> = (0..targets.len()).collect();
        grow(rows, targets, &indices, 0, params)
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        match self {
            RegressionTree::Leaf { value, .. } => *value,
            RegressionTree::Split { feature, threshold, left, right } => {
                if row[*feature] <= *threshold {
                    left.predict(row)
                } else {
                    right.predict(row)
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            RegressionTree::Leaf { .. } => 0,
            RegressionTree::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            RegressionTree::Leaf { .. } => 1,
            RegressionTree::Split { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    /// Mean squared error of the tree's predictions on the given samples.
    pub fn mse(&self, rows: &[Vec<f64>], targets: &[f64]) -> f64 {
        let sum: f64 = rows.iter().zip(targets).map(|(r, y)| (self.predict(r) - y).powi(2)).sum();
        sum / targets.len() as f64
    }
}

/// Fits with the default hyperparameters.
pub fn tree_fit(rows: &[Vec<f64>], targets: &[f64], params: &TreeParams) -> RegressionTree {
    RegressionTree::fit(rows, targets, params)
}

fn grow(rows: &[Vec<f64>], targets: &[f64], indices: &[usize], depth: usize, params: &TreeParams) -> RegressionTree {
    let value = indices.iter().map(|&i| targets[i]).sum::<f64>() / indices.len() as f64;
    let leaf = RegressionTree::Leaf { value, samples: indices.len() };
    let first = targets[indices[0]];
    if depth >= params.max_depth || indices.iter().all(|&i| targets[i] == first) {
        return leaf;
    }
    let Some(split) = best_split(rows, targets, indices, params.min_samples_leaf) else {
        return leaf;
    };
    let (left, right): (Vec<usize>, Vec<usize>) =
        indices.iter().partition(|&&i| rows[i][split.feature] <= split.threshold);
    RegressionTree::Split {
        feature: split.feature,
        threshold: split.threshold,
        left: Box::new(grow(rows, targets, &left, depth + 1, params)),
        right: Box::new(grow(rows, targets, &right, depth + 1, params)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_targets_give_one_leaf() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let tree = tree_fit(&rows, &[3.0; 10], &TreeParams::default());
        assert_eq!(tree, RegressionTree::Leaf { value: 3.0, samples: 10 });
        assert_eq!(tree.mse(&rows, &[3.0; 10]), 0.0);
    }

    #[test]
    fn step_function_splits_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sample = |rng: &mut ChaCha8Rng| {
            let x: f64 = rng.random_range(-1.0..1.0);
            (vec![x], if x < 0.0 { 0.0 } else { 1.0 })
        };
        let (rows, ys): (Vec<_>, Vec<_>) = (0..100).map(|_| sample(&mut rng)).unzip();
        let tree = tree_fit(&rows[..70], &ys[..70], &TreeParams::default());
        let RegressionTree::Split { threshold, left, right, .. } = &tree else { panic!("no split") };
        assert!(threshold.abs() < 0.05, "{threshold}");
        assert!(matches!(**left, RegressionTree::Leaf { .. }) && matches!(**right, RegressionTree::Leaf { .. }));
        assert!(tree.mse(&rows[70..], &ys[70..]) < 1e-3);
    }

    #[test]
    fn min_leaf_and_depth_are_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<Vec<f64>> = (0..64).map(|_| vec![rng.random(), rng.random()]).collect();
        let ys: Vec<f64> = (0..64).map(|_| rng.random()).collect();
        let params = TreeParams { max_depth: 3, min_samples_leaf: 5 };
        let tree = tree_fit(&rows, &ys, &params);
        assert!(tree.depth() <= 3);
        fn check(t: &RegressionTree, min: usize) {
            match t {
                RegressionTree::Leaf { samples, .. } => assert!(*samples >= min),
                RegressionTree::Split { left, right, .. } => {
                    check(left, min);
                    check(right, min);
                }
            }
        }
        check(&tree, 5);
    }

    #[test]
    fn leaves_predict_their_training_mean() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64]).collect();
        let ys = [1.0, 1.2, 0.8, 5.0, 5.5, 4.5];
        let tree = tree_fit(&rows, &ys, &TreeParams { max_depth: 1, min_samples_leaf: 1 });
        assert!((tree.predict(&[0.0]) - 1.0).abs() < 1e-15);
        assert!((tree.predict(&[5.0]) - 5.0).abs() < 1e-15);
        assert_eq!(tree.predict(&[2.4]), tree.predict(&[0.0]));
        assert_eq!(tree.predict(&[2.6]), tree.predict(&[5.0]));
    }
}
