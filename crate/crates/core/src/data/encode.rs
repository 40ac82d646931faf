use std::collections::BTreeSet;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::dataset::{is_missing, parse_number, TabularDataset};
use super::schema::{ColumnKind, ColumnRole};
use super::DataError;

/// Numeric design matrix with its labels and groups.
///
/// `sources[j]` names the dataset column that produced encoded column `j`;
/// indicator columns of one categorical source share the same entry.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedMatrix {
    pub features: Array2<f64>,
    pub y: Vec<bool>,
    pub s: Vec<bool>,
    pub feature_names: Vec<String>,
    pub sources: Vec<String>,
}

impl EncodedMatrix {
    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn m(&self) -> usize {
        self.features.ncols()
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select(Axis(0), indices),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            s: indices.iter().map(|&i| self.s[i]).collect(),
            feature_names: self.feature_names.clone(),
            sources: self.sources.clone(),
        }
    }

    /// Copy keeping only the encoded columns at `keep`, in that order.
    pub fn select_columns(&self, keep: &[usize]) -> Self {
        Self {
            features: self.features.select(Axis(1), keep),
            y: self.y.clone(),
            s: self.s.clone(),
            feature_names: keep.iter().map(|&j| self.feature_names[j].clone()).collect(),
            sources: keep.iter().map(|&j| self.sources[j].clone()).collect(),
        }
    }

    /// Copy without any encoded column whose source is listed.
    pub fn without_sources(&self, sources: &[String]) -> Self {
        let keep: Vec<usize> = (0..self.m())
            .filter(|&j| !sources.contains(&self.sources[j]))
            .collect();
        self.select_columns(&keep)
    }

    /// Copy whose labels are the sensitive groups, used to train `x -> s`.
    pub fn with_group_targets(&self) -> Self {
        Self {
            y: self.s.clone(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EncoderBlock {
    Numeric {
        source: String,
        mean: f64,
        std: f64,
    },
    Categorical {
        source: String,
        categories: Vec<String>,
    },
}

impl EncoderBlock {
    pub fn source(&self) -> &str {
        match self {
            EncoderBlock::Numeric { source, .. } | EncoderBlock::Categorical { source, .. } => {
                source
            }
        }
    }

    fn width(&self) -> usize {
        match self {
            EncoderBlock::Numeric { .. } => 1,
            EncoderBlock::Categorical { categories, .. } => categories.len(),
        }
    }
}

/// Standardization and one-hot vocabularies fitted on a subset of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    blocks: Vec<EncoderBlock>,
    warnings: Vec<String>,
}

impl Encoder {
    pub fn blocks(&self) -> &[EncoderBlock] {
        &self.blocks
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn width(&self) -> usize {
        self.blocks.iter().map(EncoderBlock::width).sum()
    }
}

/// Fits per-column statistics on `fit_indices` only.
///
/// Numeric columns get their mean and population standard deviation; a
/// constant column keeps stddev 1 and records a warning. Categorical columns
/// get a sorted vocabulary of the values seen in the fit rows.
pub fn fit_encoder(dataset: &TabularDataset, fit_indices: &[usize]) -> Result<Encoder, DataError> {
    if fit_indices.is_empty() {
        return Err(DataError::EmptyFitSet);
    }
    if let Some(&bad) = fit_indices.iter().find(|&&i| i >= dataset.n()) {
        return Err(DataError::IndexOutOfRange {
            index: bad,
            n: dataset.n(),
        });
    }
    let mut blocks = Vec::new();
    let mut warnings = Vec::new();
    for (c, col) in dataset.schema().columns().iter().enumerate() {
        if col.role != ColumnRole::Feature {
            continue;
        }
        match col.kind {
            ColumnKind::Numeric => {
                let values: Vec<f64> = fit_indices
                    .iter()
                    .filter_map(|&i| {
                        let cell = dataset.cell(i, c);
                        (!is_missing(cell)).then(|| parse_number(cell).unwrap_or(0.0))
                    })
                    .collect();
                let (mean, var) = if values.is_empty() {
                    warnings.push(format!("column `{}` has no values on the fit set", col.name));
                    (0.0, 0.0)
                } else {
                    let n = values.len() as f64;
                    let mean = values.iter().sum::<f64>() / n;
                    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    (mean, var)
                };
                let std = if var > 0.0 {
                    var.sqrt()
                } else {
                    warnings.push(format!(
                        "column `{}` is constant on the fit set; stddev set to 1",
                        col.name
                    ));
                    1.0
                };
                blocks.push(EncoderBlock::Numeric {
                    source: col.name.clone(),
                    mean,
                    std,
                });
            }
            ColumnKind::Categorical => {
                let categories: BTreeSet<&str> = fit_indices
                    .iter()
                    .map(|&i| dataset.cell(i, c).trim())
                    .filter(|cell| !is_missing(cell))
                    .collect();
                blocks.push(EncoderBlock::Categorical {
                    source: col.name.clone(),
                    categories: categories.into_iter().map(str::to_string).collect(),
                });
            }
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(Encoder { blocks, warnings })
}

/// Encodes every row of `dataset`, preserving row order.
///
/// Missing numeric values encode to 0 (the fit mean); missing or unseen
/// categories encode to an all-zero indicator block.
pub fn encode(dataset: &TabularDataset, encoder: &Encoder) -> Result<EncodedMatrix, DataError> {
    let schema = dataset.schema();
    let features: Vec<&str> = schema
        .feature_indices()
        .into_iter()
        .map(|i| schema.columns()[i].name.as_str())
        .collect();
    let block_sources: Vec<&str> = encoder.blocks.iter().map(EncoderBlock::source).collect();
    if features != block_sources {
        return Err(DataError::SchemaMismatch(format!(
            "encoder expects feature columns {block_sources:?}, dataset has {features:?}"
        )));
    }

    let n = dataset.n();
    let m = encoder.width();
    let mut x = Array2::<f64>::zeros((n, m));
    let mut names = Vec::with_capacity(m);
    let mut sources = Vec::with_capacity(m);
    let mut offset = 0;
    for block in &encoder.blocks {
        let c = schema.column_index(block.source()).expect("checked above");
        match block {
            EncoderBlock::Numeric { source, mean, std } => {
                if schema.columns()[c].kind != ColumnKind::Numeric {
                    return Err(DataError::SchemaMismatch(format!(
                        "column `{source}` is no longer numeric"
                    )));
                }
                for i in 0..n {
                    let cell = dataset.cell(i, c);
                    if !is_missing(cell) {
                        let v = parse_number(cell).unwrap_or(*mean);
                        x[[i, offset]] = (v - mean) / std;
                    }
                }
                names.push(source.clone());
                sources.push(source.clone());
            }
            EncoderBlock::Categorical { source, categories } => {
                if schema.columns()[c].kind != ColumnKind::Categorical {
                    return Err(DataError::SchemaMismatch(format!(
                        "column `{source}` is no longer categorical"
                    )));
                }
                for i in 0..n {
                    if let Ok(k) = categories
                        .binary_search_by(|cat| cat.as_str().cmp(dataset.cell(i, c).trim()))
                    {
                        x[[i, offset + k]] = 1.0;
                    }
                }
                for cat in categories {
                    names.push(format!("{source}={cat}"));
                    sources.push(source.clone());
                }
            }
        }
        offset += block.width();
    }
    debug_assert!(x.iter().all(|v| v.is_finite()));
    Ok(EncodedMatrix {
        features: x,
        y: dataset.y().to_vec(),
        s: dataset.s().to_vec(),
        feature_names: names,
        sources,
    })
}
