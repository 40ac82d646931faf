//! Bias detection from practitioner-visible data and Data Bias Profiles.

use std::fmt::Write as _;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{encode, fit_encoder, stratified_split, DataError, SplitFractions, TabularDataset};
use crate::metrics::{auc, within_group_auc, xauc, Group, MetricError};
use crate::model::{train, ModelError, TrainConfig};

pub const PROFILE_VERSION: &str = "dbp-v1";

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("{measure}: {source}")]
    Measure {
        measure: &'static str,
        #[source]
        source: MetricError,
    },
    #[error("{measure}: {source}")]
    Model {
        measure: &'static str,
        #[source]
        source: ModelError,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("profile schema mismatch: {0}")]
    SchemaMismatch(String),
}

/// Pr(s = a) − Pr(s = d).
pub fn representation_difference(s: &[bool]) -> f64 {
    let n_a = s.iter().filter(|&&g| g).count() as f64;
    let n_d = s.len() as f64 - n_a;
    (n_a - n_d) / s.len() as f64
}

/// xAUC(a, d) − xAUC(d, a).
pub fn delta_xauc(scores: &[f64], labels: &[bool], s: &[bool]) -> Result<f64, MetricError> {
    Ok(xauc(scores, labels, s, Group::A, Group::D)? - xauc(scores, labels, s, Group::D, Group::A)?)
}

/// AUC within a minus AUC within d.
pub fn delta_wauc(scores: &[f64], labels: &[bool], s: &[bool]) -> Result<f64, MetricError> {
    Ok(within_group_auc(scores, labels, s, Group::A)? - within_group_auc(scores, labels, s, Group::D)?)
}

/// `(ΔxAUC, ΔwAUC, SD)` with SD their mean.
pub fn separation_components(scores: &[f64], labels: &[bool], s: &[bool]) -> Result<(f64, f64, f64), MetricError> {
    let x = delta_xauc(scores, labels, s)?;
    let w = delta_wauc(scores, labels, s)?;
    Ok((x, w, (x + w) / 2.0))
}

pub fn separation_difference(scores: &[f64], labels: &[bool], s: &[bool]) -> Result<f64, MetricError> {
    separation_components(scores, labels, s).map(|c| c.2)
}

/// Posterior scores of a model trained on `train_rows` for `target` and
/// evaluated on `eval_rows`. With `predict_group` the target is s, with
/// group a as the positive class.
fn fit_and_score(
    dataset: &TabularDataset,
    train_rows: &[usize],
    eval_rows: &[usize],
    config: &TrainConfig,
    predict_group: bool,
    measure: &'static str,
) -> Result<Vec<f64>, DetectError> {
    let encoder = fit_encoder(dataset, train_rows)?;
    let full = encode(dataset, &encoder)?;
    let full = if predict_group { full.with_group_targets() } else { full };
    let tr = full.select_rows(train_rows);
    let ev = full.select_rows(eval_rows);
    let model = train(&tr.features, &tr.y, config, None).map_err(|source| DetectError::Model { measure, source })?;
    model
        .predict_proba(ev.features.view())
        .map_err(|source| DetectError::Model { measure, source })
}

/// AUC, on `eval_rows`, of a classifier h: x → s trained on `train_rows`.
pub fn sensitive_auc(
    dataset: &TabularDataset,
    train_rows: &[usize],
    eval_rows: &[usize],
    config: &TrainConfig,
) -> Result<f64, DetectError> {
    let measure = "sauc";
    for (rows, part) in [(train_rows, "train"), (eval_rows, "eval")] {
        for g in [Group::A, Group::D] {
            if !rows.iter().any(|&i| dataset.s()[i] == (g == Group::A)) {
                log::debug!("group {g} missing from {part} part");
                return Err(DetectError::Measure {
                    measure,
                    source: MetricError::MissingGroup(g),
                });
            }
        }
    }
    let scores = fit_and_score(dataset, train_rows, eval_rows, config, true, measure)?;
    let s: Vec<bool> = eval_rows.iter().map(|&i| dataset.s()[i]).collect();
    auc(&scores, &s).map_err(|source| DetectError::Measure { measure, source })
}

/// RD, SD and sAUC for one dataset and one train/eval partition. Each
/// measure may fail independently.
#[derive(Debug)]
pub struct DetectionMeasures {
    pub rd: f64,
    pub separation: Result<(f64, f64, f64), DetectError>,
    pub sauc: Result<f64, DetectError>,
}

/// RD over every row; SD and sAUC on `eval_rows` from models fitted on
/// `train_rows`. The two trainings run concurrently.
pub fn detection_measures(
    dataset: &TabularDataset,
    train_rows: &[usize],
    eval_rows: &[usize],
    config: &TrainConfig,
) -> DetectionMeasures {
    let (separation, sauc) = rayon::join(
        || {
            let scores = fit_and_score(dataset, train_rows, eval_rows, config, false, "sd")?;
            let y: Vec<bool> = eval_rows.iter().map(|&i| dataset.y()[i]).collect();
            let s: Vec<bool> = eval_rows.iter().map(|&i| dataset.s()[i]).collect();
            separation_components(&scores, &y, &s).map_err(|source| DetectError::Measure { measure: "sd", source })
        },
        || sensitive_auc(dataset, train_rows, eval_rows, config),
    );
    DetectionMeasures {
        rd: representation_difference(dataset.s()),
        separation,
        sauc,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataBiasProfile {
    pub version: String,
    pub dataset_id: String,
    pub sensitive_name: String,
    pub rd: f64,
    pub delta_xauc: f64,
    pub delta_wauc: f64,
    pub sd: f64,
    pub sauc: f64,
    pub model_config_digest: String,
    pub seed: u64,
    pub split_fractions: [f64; 3],
    pub created_at: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProfile {
    version: String,
    dataset_id: String,
    sensitive_name: String,
    rd: f64,
    delta_xauc: f64,
    delta_wauc: f64,
    #[allow(dead_code)]
    sd: f64,
    sauc: f64,
    model_config_digest: String,
    seed: u64,
    split_fractions: [f64; 3],
    created_at: String,
}

/// The stored `sd` is ignored and recomputed from its two components.
impl<'de> Deserialize<'de> for DataBiasProfile {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let r = RawProfile::deserialize(de)?;
        if r.version != PROFILE_VERSION {
            return Err(serde::de::Error::custom(format!(
                "unsupported profile version `{}` (expected {PROFILE_VERSION})",
                r.version
            )));
        }
        Ok(DataBiasProfile {
            version: r.version,
            dataset_id: r.dataset_id,
            sensitive_name: r.sensitive_name,
            rd: r.rd,
            delta_xauc: r.delta_xauc,
            delta_wauc: r.delta_wauc,
            sd: (r.delta_xauc + r.delta_wauc) / 2.0,
            sauc: r.sauc,
            model_config_digest: r.model_config_digest,
            seed: r.seed,
            split_fractions: r.split_fractions,
            created_at: r.created_at,
        })
    }
}

impl DataBiasProfile {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, DetectError> {
        serde_json::from_str(text).map_err(|e| DetectError::SchemaMismatch(e.to_string()))
    }
}

pub fn config_digest(config: &TrainConfig) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    let mut hex = String::with_capacity(64);
    for b in Sha256::digest(json.as_bytes()) {
        let _ = write!(hex, "{b:02x}");
    }
    hex
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileConfig {
    pub model: TrainConfig,
    /// The train part fits g and h; the test part is evaluated; the
    /// validation part is unused.
    pub split_fractions: SplitFractions,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            model: TrainConfig::default(),
            split_fractions: SplitFractions::EIGHTY_TEN_TEN,
        }
    }
}

/// Splits the dataset into identically distributed parts and computes the
/// profile. Deterministic in `seed` except for `created_at`.
pub fn build_profile(
    dataset: &TabularDataset,
    dataset_id: &str,
    config: &ProfileConfig,
    seed: u64,
) -> Result<DataBiasProfile, DetectError> {
    build_profile_at(dataset, dataset_id, config, seed, Utc::now())
}

pub fn build_profile_at(
    dataset: &TabularDataset,
    dataset_id: &str,
    config: &ProfileConfig,
    seed: u64,
    created_at: DateTime<Utc>,
) -> Result<DataBiasProfile, DetectError> {
    let split = stratified_split(dataset, config.split_fractions, seed)?;
    let model = TrainConfig {
        seed,
        ..config.model.clone()
    };
    let m = detection_measures(dataset, &split.train, &split.test, &model);
    let (delta_xauc, delta_wauc, sd) = m.separation?;
    Ok(DataBiasProfile {
        version: PROFILE_VERSION.to_string(),
        dataset_id: dataset_id.to_string(),
        sensitive_name: dataset.schema().sensitive().name.clone(),
        rd: m.rd,
        delta_xauc,
        delta_wauc,
        sd,
        sauc: m.sauc?,
        model_config_digest: config_digest(&model),
        seed,
        split_fractions: config.split_fractions.as_array(),
        created_at: created_at.to_rfc3339_opts(SecondsFormat::Secs, true),
    })
}

/// Gaps above which `compare_profiles` labels a difference. These are
/// heuristics for ranking datasets, not certified bias thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareThresholds {
    pub sauc_gap: f64,
    pub sd_gap: f64,
    pub rd_gap: f64,
}

impl Default for CompareThresholds {
    fn default() -> Self {
        Self {
            sauc_gap: 0.2,
            sd_gap: 0.05,
            rd_gap: 0.2,
        }
    }
}

/// Signed differences `first − second` with coarse labels describing the
/// first profile relative to the second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileDiff {
    pub first: String,
    pub second: String,
    pub rd: f64,
    pub delta_xauc: f64,
    pub delta_wauc: f64,
    pub sd: f64,
    pub sauc: f64,
    pub classification: Vec<String>,
    pub thresholds: CompareThresholds,
}

pub fn compare_profiles(
    first: &DataBiasProfile,
    second: &DataBiasProfile,
    thresholds: CompareThresholds,
) -> Result<ProfileDiff, DetectError> {
    if first.version != second.version {
        return Err(DetectError::SchemaMismatch(format!(
            "{} vs {}",
            first.version, second.version
        )));
    }
    let mut classification = Vec::new();
    let mut label = |gap: f64, limit: f64, more: &str, less: &str| {
        if gap > limit {
            classification.push(more.to_string());
        } else if gap < -limit {
            classification.push(less.to_string());
        }
    };
    let sauc = first.sauc - second.sauc;
    let sd = first.sd - second.sd;
    label(sauc, thresholds.sauc_gap, "stronger-proxy", "weaker-proxy");
    label(sd, thresholds.sd_gap, "more-label-bias", "less-label-bias");
    label(
        first.rd.abs() - second.rd.abs(),
        thresholds.rd_gap,
        "more-imbalanced",
        "less-imbalanced",
    );
    if classification.is_empty() {
        classification.push("similar".to_string());
    }
    Ok(ProfileDiff {
        first: first.dataset_id.clone(),
        second: second.dataset_id.clone(),
        rd: first.rd - second.rd,
        delta_xauc: first.delta_xauc - second.delta_xauc,
        delta_wauc: first.delta_wauc - second.delta_wauc,
        sd,
        sauc,
        classification,
        thresholds,
    })
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Radar chart with axes RD, SD and sAUC. RD and SD are mapped from
/// [−1, 1] to [0, 1] by (v + 1) / 2; sAUC is drawn as is.
pub fn radar_svg(profiles: &[(&str, &DataBiasProfile)]) -> String {
    let (cx, cy, r) = (200.0, 190.0, 140.0);
    let axes = ["RD", "SD", "sAUC"];
    let angle = |k: usize| -std::f64::consts::FRAC_PI_2 + k as f64 * 2.0 * std::f64::consts::PI / 3.0;
    let point = |k: usize, v: f64| {
        let v = v.clamp(0.0, 1.0);
        (cx + r * v * angle(k).cos(), cy + r * v * angle(k).sin())
    };

    let mut svg = String::new();
    let height = 400 + 20 * profiles.len();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="400" height="{height}" viewBox="0 0 400 {height}" font-family="sans-serif" font-size="12">"#
    );
    for ring in [0.25, 0.5, 0.75, 1.0] {
        let pts: Vec<String> = (0..3).map(|k| {
            let (x, y) = point(k, ring);
            format!("{x:.2},{y:.2}")
        }).collect();
        let _ = writeln!(svg, r##"  <polygon class="grid" points="{}" fill="none" stroke="#ddd"/>"##, pts.join(" "));
    }
    for (k, name) in axes.iter().enumerate() {
        let (x, y) = point(k, 1.0);
        let (lx, ly) = (cx + (r + 18.0) * angle(k).cos(), cy + (r + 18.0) * angle(k).sin());
        let _ = writeln!(
            svg,
            r##"  <line class="axis" x1="{cx}" y1="{cy}" x2="{x:.2}" y2="{y:.2}" stroke="#888"/>"##
        );
        let _ = writeln!(svg, r#"  <text x="{lx:.2}" y="{ly:.2}" text-anchor="middle">{name}</text>"#);
    }
    for (i, (label, p)) in profiles.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let values = [(p.rd + 1.0) / 2.0, (p.sd + 1.0) / 2.0, p.sauc];
        let pts: Vec<String> = values
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let (x, y) = point(k, v);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            svg,
            r#"  <polygon class="profile" points="{}" fill="{color}" fill-opacity="0.2" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        );
        let ly = 390 + 20 * i;
        let _ = writeln!(
            svg,
            r#"  <text x="20" y="{ly}" fill="{color}">{}</text>"#,
            escape(label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
