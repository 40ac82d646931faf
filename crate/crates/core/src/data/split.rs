use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::TabularDataset;
use super::DataError;
use crate::seeding::{self, Stream};

/// Train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl SplitFractions {
    pub const EIGHTY_TEN_TEN: Self = Self {
        train: 0.8,
        validation: 0.1,
        test: 0.1,
    };

    pub fn new(train: f64, validation: f64, test: f64) -> Result<Self, DataError> {
        let f = Self {
            train,
            validation,
            test,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let parts = self.as_array();
        if parts.iter().any(|p| !(p.is_finite() && *p > 0.0)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(DataError::InvalidFractions(parts));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.train, self.validation, self.test]
    }
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self::EIGHTY_TEN_TEN
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl SplitIndices {
    /// Train and validation indices together, the rows bias is injected into.
    pub fn train_and_validation(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.train.iter().chain(&self.validation).copied().collect();
        all.sort_unstable();
        all
    }
}

/// Splits rows into three parts, stratified on the joint (y, s) cell.
///
/// Within each stratum the part sizes are allocated by largest remainder, so
/// every part is within one row of `fraction * stratum_size`. A stratum with
/// fewer rows than parts is assigned row by row at random instead, with a
/// warning. Each part is returned in ascending index order.
pub fn stratified_split(
    dataset: &TabularDataset,
    fractions: SplitFractions,
    seed: u64,
) -> Result<SplitIndices, DataError> {
    stratified_split_labels(dataset.y(), dataset.s(), fractions, seed)
}

pub(crate) fn stratified_split_labels(
    y: &[bool],
    s: &[bool],
    fractions: SplitFractions,
    seed: u64,
) -> Result<SplitIndices, DataError> {
    fractions.validate()?;
    let fr = fractions.as_array();
    let mut rng = seeding::rng(seed, Stream::Split);
    let mut parts: [Vec<usize>; 3] = Default::default();
    let mut warnings = Vec::new();

    for (stratum_y, stratum_s) in [(false, false), (false, true), (true, false), (true, true)] {
        let mut members: Vec<usize> = (0..y.len())
            .filter(|&i| y[i] == stratum_y && s[i] == stratum_s)
            .collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        if members.len() < fr.len() {
            warnings.push(format!(
                "stratum (y={}, s={}) has {} rows; assigned at random",
                u8::from(stratum_y),
                if stratum_s { "a" } else { "d" },
                members.len()
            ));
            for i in members {
                let u: f64 = rng.gen();
                let part = if u < fr[0] {
                    0
                } else if u < fr[0] + fr[1] {
                    1
                } else {
                    2
                };
                parts[part].push(i);
            }
            continue;
        }
        let sizes = largest_remainder(members.len(), &fr);
        let mut start = 0;
        for (part, size) in sizes.into_iter().enumerate() {
            parts[part].extend_from_slice(&members[start..start + size]);
            start += size;
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let [mut train, mut validation, mut test] = parts;
    train.sort_unstable();
    validation.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices {
        train,
        validation,
        test,
        seed,
        warnings,
    })
}

/// Integer sizes summing to `total` with each within one of `total * f`.
fn largest_remainder(total: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
    let mut sizes = [0usize; 3];
    for (k, e) in exact.iter().enumerate() {
        sizes[k] = e.floor() as usize;
    }
    let mut assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for k in order.into_iter().cycle() {
        if assigned >= total {
            break;
        }
        sizes[k] += 1;
        assigned += 1;
    }
    sizes
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize) -> (Vec<bool>, Vec<bool>) {
        let y = (0..n).map(|i| i % 2 == 0).collect();
        let s = (0..n).map(|i| (i / 2) % 2 == 0).collect();
        (y, s)
    }

    #[test]
    fn eighty_ten_ten_on_balanced_strata() {
        let (y, s) = labels(1000);
        let split = stratified_split_labels(&y, &s, SplitFractions::EIGHTY_TEN_TEN, 7).unwrap();
        assert_eq!(
            (split.train.len(), split.validation.len(), split.test.len()),
            (800, 100, 100)
        );
    }

    #[test]
    fn same_seed_same_indices() {
        let (y, s) = labels(333);
        let a = stratified_split_labels(&y, &s, SplitFractions::EIGHTY_TEN_TEN, 11).unwrap();
        let b = stratified_split_labels(&y, &s, SplitFractions::EIGHTY_TEN_TEN, 11).unwrap();
        let c = stratified_split_labels(&y, &s, SplitFractions::EIGHTY_TEN_TEN, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn rejects_bad_fractions() {
        let (y, s) = labels(10);
        let bad = SplitFractions {
            train: 0.8,
            validation: 0.1,
            test: 0.2,
        };
        assert!(stratified_split_labels(&y, &s, bad, 0).is_err());
        let zero = SplitFractions {
            train: 1.0,
            validation: 0.0,
            test: 0.0,
        };
        assert!(stratified_split_labels(&y, &s, zero, 0).is_err());
    }

    #[test]
    fn tiny_stratum_falls_back_with_warning() {
        let mut y = vec![false; 50];
        let s = vec![true; 50];
        y[0] = true;
        let split = stratified_split_labels(&y, &s, SplitFractions::EIGHTY_TEN_TEN, 3).unwrap();
        assert_eq!(split.warnings.len(), 1);
        let total = split.train.len() + split.validation.len() + split.test.len();
        assert_eq!(total, 50);
    }

    #[test]
    fn largest_remainder_sums() {
        for total in 3..200 {
            let sizes = largest_remainder(total, &[0.7, 0.15, 0.15]);
            assert_eq!(sizes.iter().sum::<usize>(), total);
        }
    }
}
