use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::TabularDataset;
use super::schema::{ColumnSpec, Schema};
use super::DataError;
use crate::inject::proxy_noise_std;
use crate::seeding::{self, Stream};

/// Parameters of a generated binary-group classification dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    /// Pr(s = a).
    pub prevalence_a: f64,
    /// Pr(y = 1 | s = a).
    pub base_rate_a: f64,
    /// Pr(y = 1 | s = d).
    pub base_rate_d: f64,
    /// Population Pearson correlation between the `proxy` column and s.
    pub proxy_corr: f64,
    pub noise_dim: usize,
}

pub const SIGNAL_COLUMN: &str = "signal";
pub const PROXY_COLUMN: &str = "proxy";

pub fn synthetic_schema(noise_dim: usize) -> Schema {
    let mut cols = vec![
        ColumnSpec::numeric(SIGNAL_COLUMN),
        ColumnSpec::numeric(PROXY_COLUMN),
    ];
    cols.extend((0..noise_dim).map(|k| ColumnSpec::numeric(format!("noise_{k}"))));
    cols.push(ColumnSpec::target("y", "1", Some("0")));
    cols.push(ColumnSpec::sensitive("s", "a", Some("d")));
    Schema::new(cols).expect("static schema is valid")
}

/// Draws a dataset with one informative feature, one proxy of s, and
/// independent noise features.
///
/// * `s ~ Bernoulli(prevalence_a)`, `y | s ~ Bernoulli(base_rate_s)`
/// * `signal | y ~ Normal(+1, 1)` for positives, `Normal(-1, 1)` otherwise
/// * `proxy = s + v`, `v ~ Normal(0, std^2)` with std chosen so that the
///   population correlation with s equals `proxy_corr`; at `proxy_corr = 0`
///   the proxy is pure standard-normal noise
pub fn make_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<TabularDataset, DataError> {
    let probs = [
        spec.prevalence_a,
        spec.base_rate_a,
        spec.base_rate_d,
        spec.proxy_corr,
    ];
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(DataError::InvalidSynthetic(
            "probabilities and proxy_corr must lie in [0, 1]".into(),
        ));
    }
    if spec.n < 10 {
        return Err(DataError::InvalidSynthetic("n must be at least 10".into()));
    }
    let p = spec.prevalence_a;
    let proxy_std = if spec.proxy_corr > 0.0 {
        Some(proxy_noise_std((p * (1.0 - p)).sqrt(), spec.proxy_corr))
    } else {
        None
    };

    let mut rng = seeding::rng(seed, Stream::Synthetic);
    let mut rows = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let s = rng.gen_bool(p);
        let y = rng.gen_bool(if s { spec.base_rate_a } else { spec.base_rate_d });
        let z: f64 = StandardNormal.sample(&mut rng);
        let signal = if y { 1.0 } else { -1.0 } + z;
        let v: f64 = StandardNormal.sample(&mut rng);
        let proxy = match proxy_std {
            Some(std) => f64::from(u8::from(s)) + std * v,
            None => v,
        };
        let mut row = Vec::with_capacity(spec.noise_dim + 4);
        row.push(format!("{signal}"));
        row.push(format!("{proxy}"));
        for _ in 0..spec.noise_dim {
            let e: f64 = StandardNormal.sample(&mut rng);
            row.push(format!("{e}"));
        }
        row.push(if y { "1" } else { "0" }.to_string());
        row.push(if s { "a" } else { "d" }.to_string());
        rows.push(row);
    }
    TabularDataset::from_rows(synthetic_schema(spec.noise_dim), rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SyntheticSpec {
        SyntheticSpec {
            n: 200,
            prevalence_a: 0.6,
            base_rate_a: 0.5,
            base_rate_d: 0.3,
            proxy_corr: 1.0,
            noise_dim: 2,
        }
    }

    #[test]
    fn perfect_proxy_equals_s() {
        let ds = make_synthetic(&spec(), 1).unwrap();
        let proxy = ds.schema().column_index(PROXY_COLUMN).unwrap();
        for (i, &s) in ds.s().iter().enumerate() {
            let v: f64 = ds.cell(i, proxy).parse().unwrap();
            assert_eq!(v, if s { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(
            make_synthetic(&spec(), 5).unwrap(),
            make_synthetic(&spec(), 5).unwrap()
        );
    }

    #[test]
    fn rejects_out_of_range() {
        let mut bad = spec();
        bad.base_rate_a = 1.5;
        assert!(make_synthetic(&bad, 0).is_err());
        let mut small = spec();
        small.n = 9;
        assert!(make_synthetic(&small, 0).is_err());
    }

    #[test]
    fn column_layout() {
        let ds = make_synthetic(&spec(), 0).unwrap();
        let names: Vec<&str> = ds.schema().columns().iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["signal", "proxy", "noise_0", "noise_1", "y", "s"]);
    }
}
