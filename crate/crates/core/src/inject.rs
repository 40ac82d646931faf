//! Bias injection protocols.
//!
//! Every function is a pure transformation: inputs are never mutated, and the
//! same seed always yields the same output. Functions that take
//! `target_indices` only touch those rows; choosing which rows are exposed
//! (train and validation, never test) is the caller's job.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{encode, fit_encoder, DataError, EncodedMatrix, TabularDataset};
use crate::seeding::{self, Stream};
use crate::stats::pearson;

#[derive(Debug, Error)]
pub enum InjectError {
    #[error("{name} = {value} is out of range ({range})")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("all rows belong to one sensitive group")]
    DegenerateSensitive,
    #[error("no feature columns left to drop (requested {requested}, dropped {dropped})")]
    NoFeaturesLeft { requested: usize, dropped: usize },
    #[error("malformed bias `{0}`; expected underrep:U, flip:F, proxy-add:RHO or proxy-drop:K")]
    Malformed(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasKind {
    Underrepresentation,
    LabelFlip,
    ProxyAdd,
    ProxyDrop,
}

impl BiasKind {
    pub fn name(self) -> &'static str {
        match self {
            BiasKind::Underrepresentation => "underrepresentation",
            BiasKind::LabelFlip => "label_flip",
            BiasKind::ProxyAdd => "proxy_add",
            BiasKind::ProxyDrop => "proxy_drop",
        }
    }
}

impl fmt::Display for BiasKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A single bias-injection request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BiasSpec {
    /// Remove a fraction `u` of disadvantaged rows.
    Underrepresentation { u: f64 },
    /// Flip a fraction `f` of disadvantaged positives to negative.
    LabelFlip { f: f64 },
    /// Append a feature with Pearson correlation `rho` to s.
    ProxyAdd { rho: f64 },
    /// Drop the `k` features most correlated with s.
    ProxyDrop { k: usize },
}

impl BiasSpec {
    pub fn kind(&self) -> BiasKind {
        match self {
            BiasSpec::Underrepresentation { .. } => BiasKind::Underrepresentation,
            BiasSpec::LabelFlip { .. } => BiasKind::LabelFlip,
            BiasSpec::ProxyAdd { .. } => BiasKind::ProxyAdd,
            BiasSpec::ProxyDrop { .. } => BiasKind::ProxyDrop,
        }
    }

    pub fn validate(&self) -> Result<(), InjectError> {
        match *self {
            BiasSpec::Underrepresentation { u } => check_unit("u", u, false),
            BiasSpec::LabelFlip { f } => check_unit("f", f, false),
            BiasSpec::ProxyAdd { rho } => check_unit("rho", rho, true),
            BiasSpec::ProxyDrop { k } if k == 0 => Err(InjectError::InvalidParameter {
                name: "k",
                value: 0.0,
                range: "k >= 1",
            }),
            BiasSpec::ProxyDrop { .. } => Ok(()),
        }
    }
}

/// Parses the `name:value` form used on the command line.
impl FromStr for BiasSpec {
    type Err = InjectError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let malformed = || InjectError::Malformed(text.to_string());
        let (name, value) = text.split_once(':').ok_or_else(malformed)?;
        let real = || value.trim().parse::<f64>().map_err(|_| malformed());
        let spec = match name.trim() {
            "underrep" => BiasSpec::Underrepresentation { u: real()? },
            "flip" => BiasSpec::LabelFlip { f: real()? },
            "proxy-add" => BiasSpec::ProxyAdd { rho: real()? },
            "proxy-drop" => BiasSpec::ProxyDrop {
                k: value.trim().parse().map_err(|_| malformed())?,
            },
            _ => return Err(malformed()),
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn check_unit(name: &'static str, value: f64, open_at_zero: bool) -> Result<(), InjectError> {
    let ok = if open_at_zero {
        value > 0.0 && value <= 1.0
    } else {
        (0.0..=1.0).contains(&value)
    };
    if ok {
        Ok(())
    } else {
        Err(InjectError::InvalidParameter {
            name,
            value,
            range: if open_at_zero { "(0, 1]" } else { "[0, 1]" },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionReport {
    pub kind: BiasKind,
    pub rows_removed: usize,
    pub labels_flipped: usize,
    pub columns_added: Vec<String>,
    pub columns_dropped: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub realized_corr: Option<f64>,
}

impl InjectionReport {
    fn empty(kind: BiasKind) -> Self {
        Self {
            kind,
            rows_removed: 0,
            labels_flipped: 0,
            columns_added: Vec::new(),
            columns_dropped: Vec::new(),
            realized_corr: None,
        }
    }
}

/// Keeps every advantaged row of `target_indices` and a uniform sample of
/// `round((1 - u) * n_d)` disadvantaged rows, preserving input order.
///
/// For a fixed seed the retained disadvantaged rows are nested: a larger `u`
/// keeps a subset of what a smaller `u` keeps.
pub fn underrepresent(
    dataset: &TabularDataset,
    target_indices: &[usize],
    u: f64,
    seed: u64,
) -> Result<(Vec<usize>, InjectionReport), InjectError> {
    check_unit("u", u, false)?;
    let s = dataset.s();
    let mut disadvantaged: Vec<usize> = target_indices.iter().copied().filter(|&i| !s[i]).collect();
    let retain = ((1.0 - u) * disadvantaged.len() as f64).round() as usize;
    disadvantaged.shuffle(&mut seeding::rng(seed, Stream::Underrepresent));
    let mut keep = vec![false; dataset.n()];
    for &i in &disadvantaged[..retain] {
        keep[i] = true;
    }
    let kept: Vec<usize> = target_indices
        .iter()
        .copied()
        .filter(|&i| s[i] || keep[i])
        .collect();
    let mut report = InjectionReport::empty(BiasKind::Underrepresentation);
    report.rows_removed = target_indices.len() - kept.len();
    Ok((kept, report))
}

/// Flips `round(f * count)` labels, chosen uniformly among the
/// disadvantaged positives of `target_indices`, to the negative class.
pub fn flip_labels(
    dataset: &TabularDataset,
    target_indices: &[usize],
    f: f64,
    seed: u64,
) -> Result<(TabularDataset, InjectionReport), InjectError> {
    check_unit("f", f, false)?;
    let (y, s) = (dataset.y(), dataset.s());
    let mut eligible: Vec<usize> = target_indices
        .iter()
        .copied()
        .filter(|&i| !s[i] && y[i])
        .collect();
    eligible.sort_unstable();
    eligible.dedup();
    let count = (f * eligible.len() as f64).round() as usize;
    eligible.shuffle(&mut seeding::rng(seed, Stream::FlipLabels));
    let flipped = dataset.with_negated_labels(&eligible[..count]);
    let mut report = InjectionReport::empty(BiasKind::LabelFlip);
    report.labels_flipped = count;
    Ok((flipped, report))
}

/// Standard deviation of the Gaussian noise added to a binary variable with
/// standard deviation `sigma_s` so that the sum correlates with it at `rho`.
///
/// From `corr(s, s + v) = sigma_s / sqrt(sigma_s^2 + std^2)`.
pub fn proxy_noise_std(sigma_s: f64, rho: f64) -> f64 {
    sigma_s * (1.0 / (rho * rho) - 1.0).max(0.0).sqrt()
}

pub const ADDED_PROXY_COLUMN: &str = "proxy_added";

/// Appends a numeric column `s + v` with `v ~ Normal(0, std^2)` calibrated so
/// the population correlation with s equals `rho`.
pub fn add_proxy(
    dataset: &TabularDataset,
    rho: f64,
    seed: u64,
) -> Result<(TabularDataset, InjectionReport), InjectError> {
    check_unit("rho", rho, true)?;
    let s = dataset.s();
    let p = s.iter().filter(|&&a| a).count() as f64 / s.len() as f64;
    let sigma_s = (p * (1.0 - p)).sqrt();
    if sigma_s == 0.0 {
        return Err(InjectError::DegenerateSensitive);
    }
    let std = proxy_noise_std(sigma_s, rho);
    let mut rng = seeding::rng(seed, Stream::ProxyAdd);
    let values: Vec<f64> = s
        .iter()
        .map(|&a| {
            let v: f64 = StandardNormal.sample(&mut rng);
            f64::from(u8::from(a)) + std * v
        })
        .collect();
    let s_real: Vec<f64> = s.iter().map(|&a| f64::from(u8::from(a))).collect();
    let realized = pearson(&values, &s_real);

    let mut name = ADDED_PROXY_COLUMN.to_string();
    let mut k = 2;
    while dataset.schema().column_index(&name).is_some() {
        name = format!("{ADDED_PROXY_COLUMN}_{k}");
        k += 1;
    }
    let out = dataset.with_numeric_column(&name, &values)?;
    let mut report = InjectionReport::empty(BiasKind::ProxyAdd);
    report.columns_added.push(name);
    report.realized_corr = Some(realized);
    Ok((out, report))
}

/// Absolute Pearson correlation between each encoded column and s.
pub fn proxy_strengths(matrix: &EncodedMatrix) -> Vec<f64> {
    let s: Vec<f64> = matrix.s.iter().map(|&a| f64::from(u8::from(a))).collect();
    matrix
        .features
        .columns()
        .into_iter()
        .map(|col| pearson(&col.to_vec(), &s).abs())
        .collect()
}

/// Removes, `k` times, the encoded column most correlated with s in absolute
/// value (lowest index on ties), together with all indicator columns of the
/// same source column.
///
/// Returns the reduced matrix and the dropped source names in drop order.
pub fn drop_strongest_proxy(
    matrix: &EncodedMatrix,
    k: usize,
) -> Result<(EncodedMatrix, Vec<String>, InjectionReport), InjectError> {
    if k == 0 {
        return Err(InjectError::InvalidParameter {
            name: "k",
            value: 0.0,
            range: "k >= 1",
        });
    }
    let mut current = matrix.clone();
    let mut dropped = Vec::with_capacity(k);
    for _ in 0..k {
        if current.m() == 0 {
            return Err(InjectError::NoFeaturesLeft {
                requested: k,
                dropped: dropped.len(),
            });
        }
        let strengths = proxy_strengths(&current);
        let mut best = 0;
        for (j, &c) in strengths.iter().enumerate() {
            if c > strengths[best] {
                best = j;
            }
        }
        let source = current.sources[best].clone();
        current = current.without_sources(std::slice::from_ref(&source));
        dropped.push(source);
    }
    let mut report = InjectionReport::empty(BiasKind::ProxyDrop);
    report.columns_dropped = dropped.clone();
    Ok((current, dropped, report))
}

/// Dataset-level subtractive protocol: ranks columns on an encoding fitted to
/// all rows, then removes the chosen source columns from schema and rows.
pub fn drop_strongest_proxy_columns(
    dataset: &TabularDataset,
    k: usize,
) -> Result<(TabularDataset, InjectionReport), InjectError> {
    let encoder = fit_encoder(dataset, &dataset.all_indices())?;
    let matrix = encode(dataset, &encoder)?;
    let (_, dropped, report) = drop_strongest_proxy(&matrix, k)?;
    Ok((dataset.without_columns(&dropped)?, report))
}

/// Applies one [`BiasSpec`] to every row of a dataset.
pub fn inject_all(
    dataset: &TabularDataset,
    spec: &BiasSpec,
    seed: u64,
) -> Result<(TabularDataset, InjectionReport), InjectError> {
    spec.validate()?;
    let all = dataset.all_indices();
    match *spec {
        BiasSpec::Underrepresentation { u } => {
            let (kept, report) = underrepresent(dataset, &all, u, seed)?;
            Ok((dataset.subset(&kept), report))
        }
        BiasSpec::LabelFlip { f } => flip_labels(dataset, &all, f, seed),
        BiasSpec::ProxyAdd { rho } => add_proxy(dataset, rho, seed),
        BiasSpec::ProxyDrop { k } => drop_strongest_proxy_columns(dataset, k),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic, read_csv, ColumnSpec, Schema, SyntheticSpec};
    use ndarray::array;

    fn schema() -> Schema {
        Schema::new(vec![
            ColumnSpec::numeric("x"),
            ColumnSpec::target("y", "1", Some("0")),
            ColumnSpec::sensitive("s", "a", Some("d")),
        ])
        .unwrap()
    }

    /// `n_a` advantaged rows then `n_d` disadvantaged rows; the first
    /// `pos_d` disadvantaged rows are positive.
    fn groups(n_a: usize, n_d: usize, pos_d: usize) -> TabularDataset {
        let mut csv = String::from("x,y,s\n");
        for i in 0..n_a {
            csv += &format!("{i},{},a\n", i % 2);
        }
        for i in 0..n_d {
            csv += &format!("{i},{},d\n", u8::from(i < pos_d));
        }
        read_csv(csv.as_bytes(), &schema()).unwrap()
    }

    #[test]
    fn underrepresent_zero_is_identity() {
        let ds = groups(30, 20, 5);
        let idx = ds.all_indices();
        let (kept, report) = underrepresent(&ds, &idx, 0.0, 1).unwrap();
        assert_eq!(kept, idx);
        assert_eq!(report.rows_removed, 0);
    }

    #[test]
    fn underrepresent_one_removes_all_disadvantaged() {
        let ds = groups(30, 20, 5);
        let (kept, report) = underrepresent(&ds, &ds.all_indices(), 1.0, 1).unwrap();
        assert!(kept.iter().all(|&i| ds.s()[i]));
        assert_eq!(kept.len(), 30);
        assert_eq!(report.rows_removed, 20);
    }

    #[test]
    fn underrepresent_point_eight_keeps_twenty_of_hundred() {
        let ds = groups(10, 100, 5);
        let (kept, _) = underrepresent(&ds, &ds.all_indices(), 0.8, 9).unwrap();
        assert_eq!(kept.iter().filter(|&&i| !ds.s()[i]).count(), 20);
        assert!(kept.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn underrepresent_without_disadvantaged_rows() {
        let ds = groups(10, 0, 0);
        let (kept, _) = underrepresent(&ds, &ds.all_indices(), 1.0, 0).unwrap();
        assert_eq!(kept.len(), 10);
    }

    #[test]
    fn flip_zero_and_one() {
        let ds = groups(10, 10, 6);
        let idx = ds.all_indices();
        let (same, r0) = flip_labels(&ds, &idx, 0.0, 3).unwrap();
        assert_eq!(same.y(), ds.y());
        assert_eq!(r0.labels_flipped, 0);
        let (all, r1) = flip_labels(&ds, &idx, 1.0, 3).unwrap();
        assert_eq!(r1.labels_flipped, 6);
        assert!((0..ds.n()).all(|i| ds.s()[i] || !all.y()[i]));
    }

    #[test]
    fn flip_half_of_ten() {
        let ds = groups(4, 12, 10);
        let (out, report) = flip_labels(&ds, &ds.all_indices(), 0.5, 5).unwrap();
        assert_eq!(report.labels_flipped, 5);
        let before = ds.y().iter().filter(|&&v| v).count();
        let after = out.y().iter().filter(|&&v| v).count();
        assert_eq!(before - after, 5);
    }

    #[test]
    fn flip_respects_target_indices() {
        let ds = groups(4, 10, 10);
        let target: Vec<usize> = (4..9).collect();
        let (out, report) = flip_labels(&ds, &target, 1.0, 5).unwrap();
        assert_eq!(report.labels_flipped, 5);
        assert!((9..14).all(|i| out.y()[i]));
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        // 0.5 * 5 = 2.5 rounds to 3
        let ds = groups(2, 5, 5);
        let (_, report) = flip_labels(&ds, &ds.all_indices(), 0.5, 0).unwrap();
        assert_eq!(report.labels_flipped, 3);
    }

    #[test]
    fn add_proxy_rho_one_copies_s() {
        let ds = groups(7, 5, 2);
        let (out, report) = add_proxy(&ds, 1.0, 2).unwrap();
        let c = out.schema().column_index(ADDED_PROXY_COLUMN).unwrap();
        for i in 0..out.n() {
            let v: f64 = out.cell(i, c).parse().unwrap();
            assert_eq!(v, if ds.s()[i] { 1.0 } else { 0.0 });
        }
        assert!((report.realized_corr.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn add_proxy_noise_std_for_half_correlation() {
        // p = 0.5 gives sigma_s = 0.5; std = 0.5 * sqrt(3)
        let std = proxy_noise_std(0.5, 0.5);
        assert!((std - 0.5 * 3f64.sqrt()).abs() < 1e-15);
        assert!((std - 0.8660).abs() < 1e-4);
    }

    #[test]
    fn add_proxy_rejects_zero_and_degenerate() {
        let ds = groups(5, 5, 1);
        assert!(matches!(
            add_proxy(&ds, 0.0, 0),
            Err(InjectError::InvalidParameter { name: "rho", .. })
        ));
        let only_a = groups(5, 0, 0);
        assert!(matches!(
            add_proxy(&only_a, 0.5, 0),
            Err(InjectError::DegenerateSensitive)
        ));
    }

    #[test]
    fn add_proxy_realized_correlation_near_target() {
        let ds = make_synthetic(
            &SyntheticSpec {
                n: 10_000,
                prevalence_a: 0.5,
                base_rate_a: 0.5,
                base_rate_d: 0.5,
                proxy_corr: 0.0,
                noise_dim: 0,
            },
            4,
        )
        .unwrap();
        let (_, report) = add_proxy(&ds, 0.5, 4).unwrap();
        assert!((report.realized_corr.unwrap() - 0.5).abs() < 0.05);
    }

    fn matrix(features: ndarray::Array2<f64>, s: Vec<bool>, sources: &[&str]) -> EncodedMatrix {
        EncodedMatrix {
            y: vec![false; s.len()],
            s,
            feature_names: sources.iter().map(|n| n.to_string()).collect(),
            sources: sources.iter().map(|n| n.to_string()).collect(),
            features,
        }
    }

    #[test]
    fn drop_removes_exact_copy_of_s_first() {
        let m = matrix(
            array![[0.3, 1.0, 0.0], [0.1, 0.0, 1.0], [0.9, 1.0, 2.0], [0.2, 0.0, 0.5]],
            vec![true, false, true, false],
            &["a", "copy", "b"],
        );
        let (out, dropped, report) = drop_strongest_proxy(&m, 1).unwrap();
        assert_eq!(dropped, vec!["copy"]);
        assert_eq!(out.sources, vec!["a", "b"]);
        assert_eq!(report.columns_dropped, vec!["copy"]);
    }

    #[test]
    fn drop_all_columns_leaves_empty_matrix() {
        let m = matrix(
            array![[0.3, 1.0], [0.1, 0.0], [0.9, 1.0]],
            vec![true, false, true],
            &["a", "b"],
        );
        let (out, _, _) = drop_strongest_proxy(&m, 2).unwrap();
        assert_eq!(out.m(), 0);
        assert!(matches!(
            drop_strongest_proxy(&m, 3),
            Err(InjectError::NoFeaturesLeft { requested: 3, dropped: 2 })
        ));
    }

    #[test]
    fn drop_takes_categorical_siblings_together() {
        let m = matrix(
            array![[1.0, 0.0, 0.2], [0.0, 1.0, 0.1], [1.0, 0.0, 0.4], [0.0, 1.0, 0.3]],
            vec![true, false, true, false],
            &["c", "c", "x"],
        );
        let (out, dropped, _) = drop_strongest_proxy(&m, 1).unwrap();
        assert_eq!(dropped, vec!["c"]);
        assert_eq!(out.sources, vec!["x"]);
    }

    #[test]
    fn drop_ties_pick_lowest_index() {
        let m = matrix(
            array![[1.0, 1.0], [0.0, 0.0]],
            vec![true, false],
            &["first", "second"],
        );
        let (_, dropped, _) = drop_strongest_proxy(&m, 1).unwrap();
        assert_eq!(dropped, vec!["first"]);
    }

    #[test]
    fn bias_strings() {
        assert_eq!(
            "underrep:0.8".parse::<BiasSpec>().unwrap(),
            BiasSpec::Underrepresentation { u: 0.8 }
        );
        assert_eq!(
            "proxy-drop:3".parse::<BiasSpec>().unwrap(),
            BiasSpec::ProxyDrop { k: 3 }
        );
        assert!(matches!(
            "flip:1.5".parse::<BiasSpec>(),
            Err(InjectError::InvalidParameter { .. })
        ));
        assert!(matches!(
            "flip=0.2".parse::<BiasSpec>(),
            Err(InjectError::Malformed(_))
        ));
        assert!("proxy-drop:0".parse::<BiasSpec>().is_err());
        assert!("proxy-add:0".parse::<BiasSpec>().is_err());
    }

    #[test]
    fn bias_spec_json_shape() {
        let json = serde_json::to_string(&BiasSpec::LabelFlip { f: 0.2 }).unwrap();
        assert_eq!(json, r#"{"kind":"label_flip","f":0.2}"#);
    }
}
