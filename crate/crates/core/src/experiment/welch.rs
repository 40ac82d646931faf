use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use thiserror::Error;

use crate::stats::{mean, sample_std};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WelchError {
    #[error("each sample needs at least two values (got {0} and {1})")]
    TooFewValues(usize, usize),
    /// Both samples have zero variance. By convention `p = 1` when the means
    /// agree and `p = 0` otherwise; the statistic is not defined.
    #[error("both samples have zero variance (conventional p = {p})")]
    DegenerateSample { t: f64, p: f64 },
}

impl WelchError {
    /// The conventional p-value for a degenerate pair.
    pub fn conventional_p(&self) -> Option<f64> {
        match self {
            WelchError::DegenerateSample { p, .. } => Some(*p),
            WelchError::TooFewValues(..) => None,
        }
    }
}

/// Two-sided unpaired t-test without the equal-variance assumption.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchTest, WelchError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(WelchError::TooFewValues(a.len(), b.len()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let va = sample_std(a).powi(2) / na;
    let vb = sample_std(b).powi(2) / nb;
    let se2 = va + vb;
    if se2 == 0.0 {
        return Err(if ma == mb {
            WelchError::DegenerateSample { t: 0.0, p: 1.0 }
        } else {
            WelchError::DegenerateSample {
                t: if ma > mb { f64::INFINITY } else { f64::NEG_INFINITY },
                p: 0.0,
            }
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let p = beta_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0);
    Ok(WelchTest { t, df, p })
}
