//! Built-in classifiers producing posterior scores.

mod forest;
mod logistic;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use forest::{train_forest, Node, Tree};
pub use logistic::{logistic_objective, train_logistic};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("loss became non-finite at iteration {iteration}; lower the learning rate")]
    NonFiniteLoss { iteration: usize },
    #[error("model expects {expected} feature columns, got {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("cannot train on zero rows")]
    EmptyTrainingSet,
    #[error("{rows} rows but {labels} labels")]
    LabelLength { rows: usize, labels: usize },
    #[error("training features contain a non-finite value")]
    NonFiniteInput,
    #[error("invalid model file: {0}")]
    InvalidModel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Logistic,
    Forest,
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "logistic" => Ok(ModelKind::Logistic),
            "forest" => Ok(ModelKind::Forest),
            other => Err(format!("unknown model kind `{other}` (expected logistic or forest)")),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Logistic => "logistic",
            ModelKind::Forest => "forest",
        })
    }
}

/// Hyperparameters for both model families. Fields that do not apply to
/// the chosen kind are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model_kind: ModelKind,
    pub l2_lambda: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub learning_rate: f64,
    /// Stop logistic training when validation loss has not improved for
    /// `patience` iterations and keep the best weights. Off by default;
    /// needs validation rows.
    pub early_stopping: bool,
    pub patience: usize,
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Fraction of features considered per split; `None` means sqrt(m)/m.
    pub feature_subsample: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model_kind: ModelKind::Logistic,
            l2_lambda: 1e-4,
            max_iters: 5000,
            tol: 1e-8,
            learning_rate: 0.1,
            early_stopping: false,
            patience: 50,
            n_trees: 100,
            max_depth: 8,
            min_leaf: 5,
            feature_subsample: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn logistic() -> Self {
        Self::default()
    }

    pub fn forest() -> Self {
        Self {
            model_kind: ModelKind::Forest,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::InvalidConfig(msg.to_string()));
        match self.model_kind {
            ModelKind::Logistic => {
                if !(self.l2_lambda.is_finite() && self.l2_lambda >= 0.0) {
                    return bad("l2_lambda must be finite and >= 0");
                }
                if !(self.tol.is_finite() && self.tol > 0.0) {
                    return bad("tol must be > 0");
                }
                if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
                    return bad("learning_rate must be > 0");
                }
                if self.early_stopping && self.patience == 0 {
                    return bad("patience must be >= 1");
                }
            }
            ModelKind::Forest => {
                if self.n_trees == 0 {
                    return bad("n_trees must be >= 1");
                }
                if self.min_leaf == 0 {
                    return bad("min_leaf must be >= 1");
                }
                if let Some(f) = self.feature_subsample {
                    if !(f > 0.0 && f <= 1.0) {
                        return bad("feature_subsample must lie in (0, 1]");
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub iterations_run: usize,
    /// Regularized objective for logistic models, training log-loss for
    /// forests.
    pub final_loss: f64,
}

/// A fitted classifier. Logistic models carry `weights` (m coefficients
/// followed by the intercept), forests carry `trees`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedClassifier {
    pub model_kind: ModelKind,
    pub feature_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trees: Option<Vec<Tree>>,
    pub training_meta: TrainingMeta,
}

impl TrainedClassifier {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let model: Self =
            serde_json::from_str(text).map_err(|e| ModelError::InvalidModel(e.to_string()))?;
        model.check()?;
        Ok(model)
    }

    fn check(&self) -> Result<(), ModelError> {
        let invalid = |m: &str| Err(ModelError::InvalidModel(m.to_string()));
        match (self.model_kind, &self.weights, &self.trees) {
            (ModelKind::Logistic, Some(w), None) => {
                if w.len() != self.feature_count + 1 {
                    return invalid("weights must have feature_count + 1 entries");
                }
                if w.iter().any(|v| !v.is_finite()) {
                    return invalid("non-finite weight");
                }
            }
            (ModelKind::Forest, None, Some(trees)) => {
                if trees.is_empty() {
                    return invalid("forest has no trees");
                }
                for t in trees {
                    t.check(self.feature_count).map_err(ModelError::InvalidModel)?;
                }
            }
            _ => return invalid("parameters do not match model_kind"),
        }
        Ok(())
    }

    /// Posterior Pr(y = 1 | x) for each row.
    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>, ModelError> {
        if x.ncols() != self.feature_count {
            return Err(ModelError::ShapeMismatch {
                expected: self.feature_count,
                found: x.ncols(),
            });
        }
        Ok(match (&self.weights, &self.trees) {
            (Some(w), _) => logistic::predict(w, x),
            (_, Some(trees)) => forest::predict(trees, x),
            _ => unreachable!("checked at construction"),
        })
    }
}

/// Trains the model family named by `config`.
///
/// `validation` is used only by logistic early stopping.
pub fn train(
    x: &Array2<f64>,
    y: &[bool],
    config: &TrainConfig,
    validation: Option<(&Array2<f64>, &[bool])>,
) -> Result<TrainedClassifier, ModelError> {
    match config.model_kind {
        ModelKind::Logistic => logistic::train_logistic_with_validation(x, y, config, validation),
        ModelKind::Forest => train_forest(x, y, config),
    }
}

/// Hard labels: `p >= threshold`.
pub fn classify(probs: &[f64], threshold: f64) -> Vec<bool> {
    assert!(
        threshold > 0.0 && threshold < 1.0,
        "threshold must lie in (0, 1), got {threshold}"
    );
    probs.iter().map(|&p| p >= threshold).collect()
}

fn check_inputs(x: &Array2<f64>, y: &[bool]) -> Result<(), ModelError> {
    if x.nrows() == 0 {
        return Err(ModelError::EmptyTrainingSet);
    }
    if x.nrows() != y.len() {
        return Err(ModelError::LabelLength {
            rows: x.nrows(),
            labels: y.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteInput);
    }
    Ok(())
}
