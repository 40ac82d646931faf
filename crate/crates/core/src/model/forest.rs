use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_inputs, ModelError, ModelKind, TrainConfig, TrainedClassifier, TrainingMeta};
use crate::seeding::{self, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum Node {
    /// Positive-class fraction of the training rows reaching the leaf.
    Leaf { value: f64 },
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// A CART tree stored as a node arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, row: ArrayView1<'_, f64>) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub(super) fn check(&self, feature_count: usize) -> Result<(), String> {
        if self.nodes.is_empty() {
            return Err("empty tree".into());
        }
        for (i, node) in self.nodes.iter().enumerate() {
            match *node {
                Node::Leaf { value } if !(0.0..=1.0).contains(&value) => {
                    return Err(format!("leaf {i} value {value} outside [0, 1]"))
                }
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    // children come after parents, which also rules out cycles
                    if feature >= feature_count
                        || !threshold.is_finite()
                        || left <= i
                        || right <= i
                        || left >= self.nodes.len()
                        || right >= self.nodes.len()
                    {
                        return Err(format!("malformed split at node {i}"));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

struct Builder<'a> {
    x: &'a Array2<f64>,
    y: &'a [bool],
    mtry: usize,
    max_depth: usize,
    min_leaf: usize,
    nodes: Vec<Node>,
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

impl Builder<'_> {
    fn grow(&mut self, rows: &mut [usize], depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let id = self.nodes.len();
        let pos = rows.iter().filter(|&&i| self.y[i]).count();
        let value = pos as f64 / rows.len() as f64;
        self.nodes.push(Node::Leaf { value });
        if depth >= self.max_depth || pos == 0 || pos == rows.len() || rows.len() < 2 * self.min_leaf {
            return id;
        }
        let Some((feature, threshold)) = self.best_split(rows, pos, rng) else {
            return id;
        };
        let mut cut = 0;
        for k in 0..rows.len() {
            if self.x[[rows[k], feature]] <= threshold {
                rows.swap(k, cut);
                cut += 1;
            }
        }
        let (l, r) = rows.split_at_mut(cut);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }

    /// Lowest weighted Gini over the sampled features; zero-gain splits are
    /// allowed so that XOR-like structure can be reached at the next level.
    fn best_split(&self, rows: &[usize], pos: usize, rng: &mut ChaCha8Rng) -> Option<(usize, f64)> {
        let n = rows.len();
        let m = self.x.ncols();
        let mut features: Vec<usize> = sample(rng, m, self.mtry).into_vec();
        features.sort_unstable();
        let mut best: Option<(f64, usize, f64)> = None;
        let mut sorted: Vec<(f64, bool)> = Vec::with_capacity(n);
        for feature in features {
            sorted.clear();
            sorted.extend(rows.iter().map(|&i| (self.x[[i, feature]], self.y[i])));
            sorted.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_pos = 0;
            for k in 1..n {
                left_pos += usize::from(sorted[k - 1].1);
                if sorted[k - 1].0 == sorted[k].0 || k < self.min_leaf || n - k < self.min_leaf {
                    continue;
                }
                let score = k as f64 * gini(left_pos, k) + (n - k) as f64 * gini(pos - left_pos, n - k);
                if best.map_or(true, |(b, _, _)| score < b) {
                    let threshold = sorted[k - 1].0 + (sorted[k].0 - sorted[k - 1].0) / 2.0;
                    best = Some((score, feature, threshold));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

/// Bagged CART trees with Gini splits and per-split feature subsampling.
pub fn train_forest(
    x: &Array2<f64>,
    y: &[bool],
    config: &TrainConfig,
) -> Result<TrainedClassifier, ModelError> {
    let config = TrainConfig {
        model_kind: ModelKind::Forest,
        ..config.clone()
    };
    config.validate()?;
    check_inputs(x, y)?;
    let (n, m) = x.dim();
    let fraction = config
        .feature_subsample
        .unwrap_or_else(|| if m == 0 { 1.0 } else { (m as f64).sqrt() / m as f64 });
    let mtry = ((fraction * m as f64).ceil() as usize).clamp(usize::from(m > 0), m);

    let mut rng = seeding::rng(config.seed, Stream::Forest);
    let mut trees = Vec::with_capacity(config.n_trees);
    for _ in 0..config.n_trees {
        let mut rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        let mut builder = Builder {
            x,
            y,
            mtry,
            max_depth: if m == 0 { 0 } else { config.max_depth },
            min_leaf: config.min_leaf,
            nodes: Vec::new(),
        };
        builder.grow(&mut rows, 0, &mut rng);
        trees.push(Tree {
            nodes: builder.nodes,
        });
    }

    let probs = predict(&trees, x.view());
    let eps = 1e-15;
    let final_loss = probs
        .iter()
        .zip(y)
        .map(|(&p, &t)| -(if t { p } else { 1.0 - p }).clamp(eps, 1.0).ln())
        .sum::<f64>()
        / n as f64;
    Ok(TrainedClassifier {
        model_kind: ModelKind::Forest,
        feature_count: m,
        weights: None,
        trees: Some(trees),
        training_meta: TrainingMeta {
            iterations_run: config.n_trees,
            final_loss,
        },
    })
}

pub(super) fn predict(trees: &[Tree], x: ArrayView2<'_, f64>) -> Vec<f64> {
    x.rows()
        .into_iter()
        .map(|row| trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / trees.len() as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::classify;
    use ndarray::array;
    use rand::SeedableRng;

    fn small(n_trees: usize, max_depth: usize) -> TrainConfig {
        TrainConfig {
            n_trees,
            max_depth,
            min_leaf: 1,
            feature_subsample: Some(1.0),
            ..TrainConfig::forest()
        }
    }

    fn random_problem(seed: u64) -> (Array2<f64>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((80, 3), |_| rng.gen_range(-1.0..1.0));
        let y = x.rows().into_iter().map(|r| r[0] + 0.3 * rng.gen_range(-1.0..1.0) > 0.0).collect();
        (x, y)
    }

    #[test]
    fn depth_zero_returns_bootstrap_base_rate() {
        let x = array![[0.0], [1.0], [2.0], [3.0]];
        let y = [true, false, false, true];
        let config = TrainConfig {
            n_trees: 1,
            max_depth: 0,
            ..TrainConfig::forest()
        };
        let model = train_forest(&x, &y, &config).unwrap();
        let p = model.predict_proba(x.view()).unwrap();
        let Node::Leaf { value } = model.trees.as_ref().unwrap()[0].nodes[0] else {
            panic!("root must be a leaf");
        };
        assert!(p.iter().all(|&v| v == value));
        assert_eq!(model.trees.unwrap()[0].nodes.len(), 1);
    }

    #[test]
    fn pure_labels_give_certain_posteriors() {
        let (x, _) = random_problem(2);
        let y = vec![true; x.nrows()];
        let model = train_forest(&x, &y, &small(5, 4)).unwrap();
        assert!(model.predict_proba(x.view()).unwrap().iter().all(|&p| p == 1.0));
    }

    #[test]
    fn xor_is_learned() {
        let x = array![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]];
        let y = [false, true, true, false];
        let model = train_forest(&x, &y, &small(25, 2)).unwrap();
        let yhat = classify(&model.predict_proba(x.view()).unwrap(), 0.5);
        assert_eq!(yhat, y);
    }

    #[test]
    fn posterior_lies_between_tree_extremes() {
        let (x, y) = random_problem(4);
        let model = train_forest(&x, &y, &small(15, 3)).unwrap();
        let trees = model.trees.as_ref().unwrap();
        let p = model.predict_proba(x.view()).unwrap();
        for (i, row) in x.rows().into_iter().enumerate() {
            let each: Vec<f64> = trees.iter().map(|t| t.predict_row(row)).collect();
            let lo = each.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = each.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(lo - 1e-12 <= p[i] && p[i] <= hi + 1e-12);
        }
    }

    #[test]
    fn tree_order_does_not_matter() {
        let (x, y) = random_problem(5);
        let mut model = train_forest(&x, &y, &small(9, 3)).unwrap();
        let before = model.predict_proba(x.view()).unwrap();
        model.trees.as_mut().unwrap().reverse();
        let after = model.predict_proba(x.view()).unwrap();
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn min_leaf_is_respected() {
        let (x, y) = random_problem(6);
        let config = TrainConfig {
            min_leaf: 10,
            ..small(1, 8)
        };
        let model = train_forest(&x, &y, &config).unwrap();
        // every leaf of a single tree holds a multiple of 1/count with count >= 10
        let tree = &model.trees.unwrap()[0];
        let leaves = tree.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count();
        assert!(leaves <= x.nrows() / 10);
    }

    #[test]
    fn same_seed_same_forest() {
        let (x, y) = random_problem(7);
        let config = TrainConfig {
            n_trees: 5,
            ..TrainConfig::forest()
        };
        assert_eq!(
            train_forest(&x, &y, &config).unwrap(),
            train_forest(&x, &y, &config).unwrap()
        );
    }

    #[test]
    fn default_subsample_is_square_root() {
        let (x, y) = random_problem(8);
        // 3 features -> ceil(sqrt(3)) = 2 per split; just exercise the default path
        let model = train_forest(&x, &y, &TrainConfig { n_trees: 3, ..TrainConfig::forest() }).unwrap();
        assert_eq!(model.feature_count, 3);
    }
}
