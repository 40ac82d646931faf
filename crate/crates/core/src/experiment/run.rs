use std::borrow::Cow;
use std::time::Instant;

use rayon::prelude::*;

use super::{
    welch_t_test, BiasAxis, CellSummary, ExperimentConfig, ExperimentError, ExperimentResult, MetricName, Protocol,
    RepetitionRecord, Significance,
};
use crate::data::{encode, fit_encoder, stratified_split, TabularDataset};
use crate::detect::{detection_measures, representation_difference, sensitive_auc, separation_difference};
use crate::inject::{
    add_proxy, drop_strongest_proxy, drop_strongest_proxy_columns, flip_labels, underrepresent, BiasSpec, InjectError,
};
use crate::metrics::{
    balanced_accuracy, demographic_parity, equal_opportunity, groupwise_tpr, prediction_quality_parity,
};
use crate::model::{classify, train, TrainConfig};
use crate::stats::{mean, sample_std};

/// Level substituted for 1.0 in detection grids, where a full removal or
/// flip would leave nothing to measure.
const DETECTION_CAP: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Run repetitions on the rayon pool; results are identical either way.
    pub parallel: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { parallel: true }
    }
}

pub fn run_bias_grid(config: &ExperimentConfig) -> Result<ExperimentResult, ExperimentError> {
    let dataset = config.load_dataset()?;
    run_experiment(config, &dataset, RunOptions::default())
}

/// Product grid of `config.bias_axis` levels and `second_levels`.
pub fn run_joint_grid(
    config: &ExperimentConfig,
    second_axis: BiasAxis,
    second_levels: &[f64],
) -> Result<ExperimentResult, ExperimentError> {
    let config = ExperimentConfig {
        second_axis: Some(second_axis),
        second_levels: second_levels.to_vec(),
        ..config.clone()
    };
    config.validate()?;
    run_bias_grid(&config)
}

pub fn run_detection_grid(config: &ExperimentConfig) -> Result<ExperimentResult, ExperimentError> {
    let config = ExperimentConfig {
        protocol: Protocol::Detection,
        ..config.clone()
    };
    config.validate()?;
    run_bias_grid(&config)
}

pub fn run_experiment(
    config: &ExperimentConfig,
    dataset: &TabularDataset,
    options: RunOptions,
) -> Result<ExperimentResult, ExperimentError> {
    config.validate()?;
    let started = Instant::now();
    let reps: Vec<usize> = (0..config.repetitions).collect();
    let per_rep: Vec<Result<Vec<RepetitionRecord>, ExperimentError>> = if options.parallel {
        reps.par_iter().map(|&i| run_repetition(config, dataset, i)).collect()
    } else {
        reps.iter().map(|&i| run_repetition(config, dataset, i)).collect()
    };
    let mut records = Vec::new();
    for r in per_rep {
        records.extend(r?);
    }

    let axes = config.axes();
    let mut substitutions = Vec::new();
    let mut cells = Vec::new();
    for levels in config.cells() {
        let effective = effective_levels(config, &axes, &levels);
        if effective != levels {
            substitutions.push(format!(
                "{} -> {}",
                super::level_label(&axes, &levels),
                super::level_label(&axes, &effective)
            ));
        }
        for &metric in &config.metrics {
            let values: Vec<Option<f64>> = records
                .iter()
                .filter(|r| r.levels == levels && r.metric == metric)
                .map(|r| r.value)
                .collect();
            let available: Vec<f64> = values.iter().flatten().copied().collect();
            let (mean, std) = if available.is_empty() {
                (None, None)
            } else {
                (Some(mean(&available)), Some(sample_std(&available)))
            };
            cells.push(CellSummary {
                levels: levels.clone(),
                effective_levels: effective.clone(),
                metric,
                mean,
                std,
                values,
                p_value: None,
                significance: Significance::None,
            });
        }
    }
    attach_significance(&mut cells, config.levels[0]);

    Ok(ExperimentResult {
        dataset_id: config.dataset_id(),
        protocol: config.protocol,
        axes,
        cells,
        records,
        seeds: (0..config.repetitions as u64).map(|i| config.base_seed + i).collect(),
        substitutions,
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

/// Compares every cell with the cell at the first level of the first axis
/// and the same levels on the other axes.
fn attach_significance(cells: &mut [CellSummary], baseline_level: f64) {
    let snapshot = cells.to_vec();
    for cell in cells.iter_mut() {
        if cell.levels[0] == baseline_level {
            continue;
        }
        let mut base_levels = cell.levels.clone();
        base_levels[0] = baseline_level;
        let Some(base) = snapshot
            .iter()
            .find(|c| c.levels == base_levels && c.metric == cell.metric)
        else {
            continue;
        };
        let a: Vec<f64> = base.values.iter().flatten().copied().collect();
        let b: Vec<f64> = cell.values.iter().flatten().copied().collect();
        cell.p_value = match welch_t_test(&a, &b) {
            Ok(t) => Some(t.p),
            Err(e) => e.conventional_p(),
        };
        cell.significance = Significance::from_p(cell.p_value);
    }
}

fn effective_levels(config: &ExperimentConfig, axes: &[BiasAxis], levels: &[f64]) -> Vec<f64> {
    levels
        .iter()
        .zip(axes)
        .map(|(&l, &axis)| {
            if config.protocol == Protocol::Detection && axis != BiasAxis::ProxyDrop && l == 1.0 {
                DETECTION_CAP
            } else {
                l
            }
        })
        .collect()
}

/// All records of repetition `repetition`, which uses seed
/// `base_seed + repetition` for splitting, injection and training.
pub fn run_repetition(
    config: &ExperimentConfig,
    dataset: &TabularDataset,
    repetition: usize,
) -> Result<Vec<RepetitionRecord>, ExperimentError> {
    let seed = config.base_seed + repetition as u64;
    let model = TrainConfig {
        seed,
        ..config.model.clone()
    };
    let axes = config.axes();
    let mut records = Vec::new();
    let split = match config.protocol {
        Protocol::Fairness => Some(stratified_split(dataset, config.split_fractions, seed)?),
        Protocol::Detection => None,
    };
    for levels in config.cells() {
        let context = |source| ExperimentError::Inject {
            repetition,
            levels: super::level_label(&axes, &levels),
            source,
        };
        let values = match &split {
            Some(split) => fairness_cell(config, dataset, split, &axes, &levels, seed, &model, repetition)?,
            None => {
                let effective = effective_levels(config, &axes, &levels);
                let injected = inject_everywhere(dataset, &axes, &effective, seed).map_err(context)?;
                detection_cell(config, &injected, seed, &model)?
            }
        };
        for (metric, value) in config.metrics.iter().zip(values) {
            let (value, error) = match value {
                Ok(v) => (Some(v), None),
                Err(e) => {
                    log::warn!(
                        "repetition {repetition}, {}: {metric} unavailable: {e}",
                        super::level_label(&axes, &levels)
                    );
                    (None, Some(e))
                }
            };
            records.push(RepetitionRecord {
                repetition,
                seed,
                levels: levels.clone(),
                metric: *metric,
                value,
                error,
            });
        }
    }
    Ok(records)
}

type MetricValue = Result<f64, String>;

#[allow(clippy::too_many_arguments)]
fn fairness_cell(
    config: &ExperimentConfig,
    original: &TabularDataset,
    split: &crate::data::SplitIndices,
    axes: &[BiasAxis],
    levels: &[f64],
    seed: u64,
    model_config: &TrainConfig,
    repetition: usize,
) -> Result<Vec<MetricValue>, ExperimentError> {
    let label = || super::level_label(axes, levels);
    let inject_err = |source| ExperimentError::Inject {
        repetition,
        levels: label(),
        source,
    };
    let mut ds = Cow::Borrowed(original);
    let mut train_rows = split.train.clone();
    let mut val_rows = split.validation.clone();
    let test = &split.test;

    for (&axis, &level) in axes.iter().zip(levels) {
        let Some(spec) = axis.spec(level) else { continue };
        let mut exposed: Vec<usize> = train_rows.iter().chain(&val_rows).copied().collect();
        exposed.sort_unstable();
        assert_disjoint(&exposed, test);
        match spec {
            BiasSpec::Underrepresentation { u } => {
                let (kept, _) = underrepresent(&ds, &exposed, u, seed).map_err(inject_err)?;
                let mut keep = vec![false; ds.n()];
                kept.iter().for_each(|&i| keep[i] = true);
                train_rows.retain(|&i| keep[i]);
                val_rows.retain(|&i| keep[i]);
            }
            BiasSpec::LabelFlip { f } => {
                ds = Cow::Owned(flip_labels(&ds, &exposed, f, seed).map_err(inject_err)?.0);
            }
            BiasSpec::ProxyAdd { rho } => {
                // every row needs a value so the model can score test rows
                ds = Cow::Owned(add_proxy(&ds, rho, seed).map_err(inject_err)?.0);
            }
            BiasSpec::ProxyDrop { k } => {
                let encoder = fit_encoder(&ds, &train_rows)?;
                let exposed_matrix = encode(&ds, &encoder)?.select_rows(&train_rows);
                let (_, dropped, _) = drop_strongest_proxy(&exposed_matrix, k).map_err(inject_err)?;
                ds = Cow::Owned(ds.without_columns(&dropped)?);
            }
        }
    }
    assert!(
        test.iter()
            .all(|&i| ds.y()[i] == original.y()[i] && ds.s()[i] == original.s()[i]),
        "test rows were modified by injection"
    );

    let encoder = fit_encoder(&ds, &train_rows)?;
    let full = encode(&ds, &encoder)?;
    let tr = full.select_rows(&train_rows);
    let te = full.select_rows(test);
    let va = full.select_rows(&val_rows);
    let validation = (model_config.early_stopping && va.n() > 0).then_some((&va.features, &va.y[..]));
    let model = train(&tr.features, &tr.y, model_config, validation).map_err(|source| ExperimentError::Model {
        repetition,
        levels: label(),
        source,
    })?;
    let probs = model
        .predict_proba(te.features.view())
        .map_err(|source| ExperimentError::Model {
            repetition,
            levels: label(),
            source,
        })?;
    let yhat = classify(&probs, config.threshold);
    let (y, s) = (&te.y[..], &te.s[..]);

    let text = |r: Result<f64, crate::metrics::MetricError>| r.map_err(|e| e.to_string());
    Ok(config
        .metrics
        .iter()
        .map(|metric| match metric {
            MetricName::Ba => text(balanced_accuracy(y, &yhat)),
            MetricName::Dp => text(demographic_parity(&yhat, s)),
            MetricName::Eo => text(equal_opportunity(y, &yhat, s)),
            MetricName::Pqp => text(prediction_quality_parity(y, &yhat, s)),
            MetricName::TprA => text(groupwise_tpr(y, &yhat, s).map(|t| t.0)),
            MetricName::TprD => text(groupwise_tpr(y, &yhat, s).map(|t| t.1)),
            MetricName::Sd => text(separation_difference(&probs, y, s)),
            MetricName::Rd => {
                let exposed: Vec<bool> = train_rows.iter().chain(&val_rows).map(|&i| ds.s()[i]).collect();
                Ok(representation_difference(&exposed))
            }
            MetricName::Sauc => sensitive_auc(&ds, &train_rows, test, model_config).map_err(|e| e.to_string()),
        })
        .collect())
}

fn assert_disjoint(exposed: &[usize], test: &[usize]) {
    // both sorted
    let (mut i, mut j) = (0, 0);
    while i < exposed.len() && j < test.len() {
        assert_ne!(exposed[i], test[j], "row {} is both exposed to injection and in the test part", test[j]);
        if exposed[i] < test[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
}

fn inject_everywhere(
    dataset: &TabularDataset,
    axes: &[BiasAxis],
    levels: &[f64],
    seed: u64,
) -> Result<TabularDataset, InjectError> {
    let mut ds = dataset.clone();
    for (&axis, &level) in axes.iter().zip(levels) {
        let Some(spec) = axis.spec(level) else { continue };
        let all = ds.all_indices();
        ds = match spec {
            BiasSpec::Underrepresentation { u } => ds.subset(&underrepresent(&ds, &all, u, seed)?.0),
            BiasSpec::LabelFlip { f } => flip_labels(&ds, &all, f, seed)?.0,
            BiasSpec::ProxyAdd { rho } => add_proxy(&ds, rho, seed)?.0,
            BiasSpec::ProxyDrop { k } => drop_strongest_proxy_columns(&ds, k)?.0,
        };
    }
    Ok(ds)
}

fn detection_cell(
    config: &ExperimentConfig,
    dataset: &TabularDataset,
    seed: u64,
    model: &TrainConfig,
) -> Result<Vec<MetricValue>, ExperimentError> {
    let split = stratified_split(dataset, config.split_fractions, seed)?;
    let m = detection_measures(dataset, &split.train, &split.test, model);
    Ok(config
        .metrics
        .iter()
        .map(|metric| match metric {
            MetricName::Rd => Ok(m.rd),
            MetricName::Sd => m.separation.as_ref().map(|c| c.2).map_err(|e| e.to_string()),
            MetricName::Sauc => m.sauc.as_ref().copied().map_err(|e| e.to_string()),
            other => unreachable!("{other} rejected by config validation"),
        })
        .collect())
}
