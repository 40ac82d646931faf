//! Seeded repetitions over bias grids.
//!
//! The fairness protocol injects bias into train and validation rows only
//! and evaluates on an untouched test part. The detection protocol injects
//! into the whole dataset and measures RD, SD and sAUC on identically
//! distributed parts.

mod output;
mod run;
mod welch;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{load_csv, make_synthetic, DataError, Schema, SplitFractions, SyntheticSpec, TabularDataset};
use crate::inject::{BiasSpec, InjectError};
use crate::model::{ModelError, TrainConfig};

pub use output::{emit_table, format_cell, level_label, run_to_dir, write_results, RunMeta, RunStatus, TableFormat};
pub use run::{run_bias_grid, run_detection_grid, run_experiment, run_joint_grid, run_repetition, RunOptions};
pub use welch::{welch_t_test, WelchError, WelchTest};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("repetition {repetition}, level {levels}: {source}")]
    Inject {
        repetition: usize,
        levels: String,
        #[source]
        source: InjectError,
    },
    #[error("repetition {repetition}, level {levels}: {source}")]
    Model {
        repetition: usize,
        levels: String,
        #[source]
        source: ModelError,
    },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasAxis {
    Underrepresentation,
    LabelFlip,
    ProxyAdd,
    ProxyDrop,
}

impl BiasAxis {
    /// Symbol used in table headers.
    pub fn symbol(self) -> &'static str {
        match self {
            BiasAxis::Underrepresentation => "u",
            BiasAxis::LabelFlip => "f",
            BiasAxis::ProxyAdd => "rho",
            BiasAxis::ProxyDrop => "k",
        }
    }

    /// The injection for one grid level; `None` where the level means "no
    /// injection" (rho = 0, k = 0).
    pub fn spec(self, level: f64) -> Option<BiasSpec> {
        match self {
            BiasAxis::Underrepresentation => Some(BiasSpec::Underrepresentation { u: level }),
            BiasAxis::LabelFlip => Some(BiasSpec::LabelFlip { f: level }),
            BiasAxis::ProxyAdd if level == 0.0 => None,
            BiasAxis::ProxyAdd => Some(BiasSpec::ProxyAdd { rho: level }),
            BiasAxis::ProxyDrop if level == 0.0 => None,
            BiasAxis::ProxyDrop => Some(BiasSpec::ProxyDrop { k: level as usize }),
        }
    }

    fn check_level(self, level: f64) -> Result<(), String> {
        let ok = match self {
            BiasAxis::ProxyDrop => level >= 0.0 && level.fract() == 0.0 && level.is_finite(),
            _ => (0.0..=1.0).contains(&level),
        };
        if ok {
            Ok(())
        } else {
            Err(format!("level {level} is invalid for {}", self.symbol()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    #[default]
    Fairness,
    Detection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Ba,
    Dp,
    Eo,
    Pqp,
    TprA,
    TprD,
    Rd,
    Sd,
    Sauc,
}

impl MetricName {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::Ba => "ba",
            MetricName::Dp => "dp",
            MetricName::Eo => "eo",
            MetricName::Pqp => "pqp",
            MetricName::TprA => "tpr_a",
            MetricName::TprD => "tpr_d",
            MetricName::Rd => "rd",
            MetricName::Sd => "sd",
            MetricName::Sauc => "sauc",
        }
    }

    pub fn is_detection(self) -> bool {
        matches!(self, MetricName::Rd | MetricName::Sd | MetricName::Sauc)
    }
}

impl std::fmt::Display for MetricName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where the data comes from. Relative paths resolve against the directory
/// of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetRef {
    Csv {
        data: PathBuf,
        schema: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<String>,
    },
    Synthetic { spec: SyntheticSpec, seed: u64 },
}

fn default_threshold() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetRef,
    pub sensitive_name: String,
    #[serde(default)]
    pub model: TrainConfig,
    pub bias_axis: BiasAxis,
    pub levels: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second_axis: Option<BiasAxis>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub second_levels: Vec<f64>,
    #[serde(default)]
    pub protocol: Protocol,
    pub repetitions: usize,
    pub base_seed: u64,
    #[serde(default)]
    pub split_fractions: SplitFractions,
    pub metrics: Vec<MetricName>,
    /// Decision threshold on posteriors for hard-label metrics.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self, ExperimentError> {
        let mut config: Self = serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        config.base_dir = base_dir.to_path_buf();
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_json(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.repetitions == 0 {
            return bad("repetitions must be >= 1".into());
        }
        check_levels(self.bias_axis, &self.levels).map_err(ExperimentError::Config)?;
        match self.second_axis {
            Some(axis) if axis == self.bias_axis => return bad("second_axis must differ from bias_axis".into()),
            Some(axis) => check_levels(axis, &self.second_levels).map_err(ExperimentError::Config)?,
            None if !self.second_levels.is_empty() => return bad("second_levels given without second_axis".into()),
            None => {}
        }
        if self.metrics.is_empty() {
            return bad("metrics must not be empty".into());
        }
        if self.protocol == Protocol::Detection {
            if let Some(m) = self.metrics.iter().find(|m| !m.is_detection()) {
                return bad(format!("metric {m} is not available in the detection protocol"));
            }
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad("threshold must lie in (0, 1)".into());
        }
        self.split_fractions.validate()?;
        self.model
            .validate()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        Ok(())
    }

    /// Axes in application order.
    pub fn axes(&self) -> Vec<BiasAxis> {
        let mut axes = vec![self.bias_axis];
        axes.extend(self.second_axis);
        axes
    }

    /// Every grid cell as one level per axis, first axis outermost.
    pub fn cells(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for &l in &self.levels {
            if self.second_axis.is_some() {
                out.extend(self.second_levels.iter().map(|&k| vec![l, k]));
            } else {
                out.push(vec![l]);
            }
        }
        out
    }

    pub fn dataset_id(&self) -> String {
        match &self.dataset {
            DatasetRef::Csv { id: Some(id), .. } => id.clone(),
            DatasetRef::Csv { data, .. } => data
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into()),
            DatasetRef::Synthetic { .. } => "synthetic".into(),
        }
    }

    /// Loads the referenced dataset and checks that its sensitive column is
    /// `sensitive_name`.
    pub fn load_dataset(&self) -> Result<TabularDataset, ExperimentError> {
        let dataset = match &self.dataset {
            DatasetRef::Csv { data, schema, .. } => {
                let schema = Schema::load(&self.base_dir.join(schema))?;
                load_csv(&self.base_dir.join(data), &schema)?
            }
            DatasetRef::Synthetic { spec, seed } => make_synthetic(spec, *seed)?,
        };
        let actual = &dataset.schema().sensitive().name;
        if *actual != self.sensitive_name {
            return Err(ExperimentError::Config(format!(
                "sensitive_name `{}` does not match the schema's sensitive column `{actual}`",
                self.sensitive_name
            )));
        }
        Ok(dataset)
    }
}

fn check_levels(axis: BiasAxis, levels: &[f64]) -> Result<(), String> {
    if levels.is_empty() {
        return Err(format!("no levels given for {}", axis.symbol()));
    }
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(format!("levels for {} must be strictly increasing", axis.symbol()));
    }
    levels.iter().try_for_each(|&l| axis.check_level(l))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Significance {
    None,
    P05,
    P01,
}

impl Significance {
    pub fn from_p(p: Option<f64>) -> Self {
        match p {
            Some(p) if p < 0.01 => Significance::P01,
            Some(p) if p < 0.05 => Significance::P05,
            _ => Significance::None,
        }
    }

    pub fn marker(self) -> &'static str {
        match self {
            Significance::None => "",
            Significance::P05 => "*",
            Significance::P01 => "**",
        }
    }
}

/// One metric value (or the reason it is unavailable) for one repetition and
/// grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionRecord {
    pub repetition: usize,
    pub seed: u64,
    pub levels: Vec<f64>,
    pub metric: MetricName,
    pub value: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    /// Levels as configured.
    pub levels: Vec<f64>,
    /// Levels actually injected (differs where 1.0 became 0.95).
    pub effective_levels: Vec<f64>,
    pub metric: MetricName,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// Per repetition, `None` where the metric was undefined.
    pub values: Vec<Option<f64>>,
    pub p_value: Option<f64>,
    pub significance: Significance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub dataset_id: String,
    pub protocol: Protocol,
    pub axes: Vec<BiasAxis>,
    pub cells: Vec<CellSummary>,
    pub records: Vec<RepetitionRecord>,
    pub seeds: Vec<u64>,
    pub substitutions: Vec<String>,
    pub wall_time_secs: f64,
}

impl ExperimentResult {
    pub fn cell(&self, levels: &[f64], metric: MetricName) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.levels == levels && c.metric == metric)
    }

    pub fn mean(&self, levels: &[f64], metric: MetricName) -> Option<f64> {
        self.cell(levels, metric).and_then(|c| c.mean)
    }

    /// Mean and sample std over repetitions of `value(to) − value(from)`,
    /// pairing cells by repetition seed. Repetitions where either side is
    /// unavailable are skipped.
    pub fn paired_difference(&self, metric: MetricName, from: &[f64], to: &[f64]) -> Option<(f64, f64)> {
        let (a, b) = (self.cell(from, metric)?, self.cell(to, metric)?);
        let diffs: Vec<f64> = a
            .values
            .iter()
            .zip(&b.values)
            .filter_map(|(x, y)| Some((*y)? - (*x)?))
            .collect();
        if diffs.is_empty() {
            return None;
        }
        Some((crate::stats::mean(&diffs), crate::stats::sample_std(&diffs)))
    }

    /// EO(u=1, f) − EO(u=0, f) on a joint underrepresentation × label-flip
    /// grid, paired by seed.
    pub fn delta_eo(&self, f: f64) -> Option<(f64, f64)> {
        self.paired_difference(MetricName::Eo, &[0.0, f], &[1.0, f])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config_json() -> serde_json::Value {
        serde_json::json!({
            "dataset": {"kind": "synthetic", "spec": {"n": 100, "prevalence_a": 0.5, "base_rate_a": 0.5,
                        "base_rate_d": 0.5, "proxy_corr": 0.0, "noise_dim": 1}, "seed": 0},
            "sensitive_name": "s",
            "bias_axis": "label_flip",
            "levels": [0.0, 0.5],
            "repetitions": 2,
            "base_seed": 10,
            "metrics": ["eo", "ba"]
        })
    }

    fn parse(v: serde_json::Value) -> Result<ExperimentConfig, ExperimentError> {
        ExperimentConfig::from_json(&v.to_string(), Path::new("."))
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let c = parse(config_json()).unwrap();
        assert_eq!(c.protocol, Protocol::Fairness);
        assert_eq!(c.threshold, 0.5);
        assert_eq!(c.split_fractions, SplitFractions::EIGHTY_TEN_TEN);
        assert_eq!(c.cells(), vec![vec![0.0], vec![0.5]]);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut v = config_json();
        v["levels"] = serde_json::json!([0.5, 0.0]);
        assert!(parse(v).is_err());
        let mut v = config_json();
        v["repetitions"] = serde_json::json!(0);
        assert!(parse(v).is_err());
        let mut v = config_json();
        v["protocol"] = serde_json::json!("detection");
        assert!(parse(v).is_err());
        let mut v = config_json();
        v["second_axis"] = serde_json::json!("label_flip");
        v["second_levels"] = serde_json::json!([0.0]);
        assert!(parse(v).is_err());
        let mut v = config_json();
        v["extra"] = serde_json::json!(1);
        assert!(parse(v).is_err());
    }

    #[test]
    fn joint_cells_are_a_product() {
        let mut v = config_json();
        v["bias_axis"] = serde_json::json!("underrepresentation");
        v["levels"] = serde_json::json!([0.0, 1.0]);
        v["second_axis"] = serde_json::json!("label_flip");
        v["second_levels"] = serde_json::json!([0.0, 0.2]);
        let c = parse(v).unwrap();
        assert_eq!(
            c.cells(),
            vec![vec![0.0, 0.0], vec![0.0, 0.2], vec![1.0, 0.0], vec![1.0, 0.2]]
        );
    }

    #[test]
    fn significance_markers() {
        assert_eq!(Significance::from_p(Some(0.009)).marker(), "**");
        assert_eq!(Significance::from_p(Some(0.03)).marker(), "*");
        assert_eq!(Significance::from_p(Some(0.05)).marker(), "");
        assert_eq!(Significance::from_p(None).marker(), "");
    }

    #[test]
    fn axis_levels_map_to_specs() {
        assert_eq!(BiasAxis::ProxyAdd.spec(0.0), None);
        assert_eq!(BiasAxis::ProxyDrop.spec(2.0), Some(BiasSpec::ProxyDrop { k: 2 }));
        assert!(BiasAxis::ProxyDrop.check_level(1.5).is_err());
    }
}
