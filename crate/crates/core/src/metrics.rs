//! Performance and fairness metrics on hard labels, and AUC-family ranking
//! metrics on scores.
//!
//! Group vectors use `true` for the advantaged group a and `false` for the
//! disadvantaged group d; labels use `true` for the positive class.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    A,
    D,
}

impl Group {
    fn matches(self, s: bool) -> bool {
        s == (self == Group::A)
    }
}

impl std::fmt::Display for Group {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Group::A => "a",
            Group::D => "d",
        })
    }
}

/// Which rows an xAUC side draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupSelector {
    All,
    Only(Group),
}

impl GroupSelector {
    fn matches(self, s: bool) -> bool {
        match self {
            GroupSelector::All => true,
            GroupSelector::Only(g) => g.matches(s),
        }
    }
}

impl From<Group> for GroupSelector {
    fn from(g: Group) -> Self {
        GroupSelector::Only(g)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("labels contain only one class")]
    MissingClass,
    #[error("group {0} has no positive examples")]
    NoPositivesInGroup(Group),
    #[error("group {0} is absent")]
    MissingGroup(Group),
    #[error("group {0} lacks one of the two classes")]
    MissingClassInGroup(Group),
    #[error("no (positive, negative) pairs for the requested groups")]
    EmptyPairSet,
    #[error("input lengths differ: {0}")]
    LengthMismatch(String),
}

fn same_len(lens: &[usize]) -> Result<(), MetricError> {
    if lens.windows(2).any(|w| w[0] != w[1]) {
        return Err(MetricError::LengthMismatch(format!("{lens:?}")));
    }
    Ok(())
}

/// Confusion cells for one sensitive group.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
}

impl Confusion {
    fn add(&mut self, y: bool, yhat: bool) {
        match (y, yhat) {
            (true, true) => self.tp += 1,
            (true, false) => self.fn_ += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
        }
    }

    fn merge(self, o: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + o.tp,
            fn_: self.fn_ + o.fn_,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
        }
    }

    pub fn positives(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> usize {
        self.fp + self.tn
    }

    pub fn total(&self) -> usize {
        self.positives() + self.negatives()
    }

    pub fn tpr(&self) -> f64 {
        self.tp as f64 / self.positives() as f64
    }

    pub fn tnr(&self) -> f64 {
        self.tn as f64 / self.negatives() as f64
    }

    pub fn acceptance_rate(&self) -> f64 {
        (self.tp + self.fp) as f64 / self.total() as f64
    }

    pub fn balanced_accuracy(&self) -> f64 {
        (self.tpr() + self.tnr()) / 2.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupConfusion {
    pub a: Confusion,
    pub d: Confusion,
}

impl GroupConfusion {
    pub fn tally(y: &[bool], yhat: &[bool], s: &[bool]) -> Result<Self, MetricError> {
        same_len(&[y.len(), yhat.len(), s.len()])?;
        let mut c = GroupConfusion::default();
        for i in 0..y.len() {
            if s[i] { &mut c.a } else { &mut c.d }.add(y[i], yhat[i]);
        }
        Ok(c)
    }

    pub fn group(&self, g: Group) -> &Confusion {
        match g {
            Group::A => &self.a,
            Group::D => &self.d,
        }
    }

    pub fn overall(&self) -> Confusion {
        self.a.merge(self.d)
    }
}

pub fn balanced_accuracy(y: &[bool], yhat: &[bool]) -> Result<f64, MetricError> {
    same_len(&[y.len(), yhat.len()])?;
    let mut c = Confusion::default();
    for (&t, &p) in y.iter().zip(yhat) {
        c.add(t, p);
    }
    if c.positives() == 0 || c.negatives() == 0 {
        return Err(MetricError::MissingClass);
    }
    Ok(c.balanced_accuracy())
}

/// `(tpr_a, tpr_d)`.
pub fn groupwise_tpr(y: &[bool], yhat: &[bool], s: &[bool]) -> Result<(f64, f64), MetricError> {
    let c = GroupConfusion::tally(y, yhat, s)?;
    for g in [Group::A, Group::D] {
        if c.group(g).positives() == 0 {
            return Err(MetricError::NoPositivesInGroup(g));
        }
    }
    Ok((c.a.tpr(), c.d.tpr()))
}

/// Acceptance rate of a minus acceptance rate of d.
pub fn demographic_parity(yhat: &[bool], s: &[bool]) -> Result<f64, MetricError> {
    same_len(&[yhat.len(), s.len()])?;
    let mut count = [0usize; 2];
    let mut accepted = [0usize; 2];
    for (&p, &g) in yhat.iter().zip(s) {
        count[usize::from(g)] += 1;
        accepted[usize::from(g)] += usize::from(p);
    }
    if count[1] == 0 {
        return Err(MetricError::MissingGroup(Group::A));
    }
    if count[0] == 0 {
        return Err(MetricError::MissingGroup(Group::D));
    }
    Ok(accepted[1] as f64 / count[1] as f64 - accepted[0] as f64 / count[0] as f64)
}

/// `tpr_a - tpr_d`.
pub fn equal_opportunity(y: &[bool], yhat: &[bool], s: &[bool]) -> Result<f64, MetricError> {
    let (a, d) = groupwise_tpr(y, yhat, s)?;
    Ok(a - d)
}

/// Balanced accuracy on group a minus balanced accuracy on group d.
pub fn prediction_quality_parity(y: &[bool], yhat: &[bool], s: &[bool]) -> Result<f64, MetricError> {
    let c = GroupConfusion::tally(y, yhat, s)?;
    for g in [Group::A, Group::D] {
        let cell = c.group(g);
        if cell.positives() == 0 || cell.negatives() == 0 {
            return Err(MetricError::MissingClassInGroup(g));
        }
    }
    Ok(c.a.balanced_accuracy() - c.d.balanced_accuracy())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub balanced_accuracy: f64,
    pub tpr_a: f64,
    pub tpr_d: f64,
    pub dp: f64,
    pub eo: f64,
    pub pqp: f64,
    pub counts: GroupConfusion,
}

impl FairnessReport {
    /// All hard-label metrics at once; fails if any one of them is undefined.
    pub fn compute(y: &[bool], yhat: &[bool], s: &[bool]) -> Result<Self, MetricError> {
        let counts = GroupConfusion::tally(y, yhat, s)?;
        let (tpr_a, tpr_d) = groupwise_tpr(y, yhat, s)?;
        Ok(Self {
            balanced_accuracy: balanced_accuracy(y, yhat)?,
            tpr_a,
            tpr_d,
            dp: demographic_parity(yhat, s)?,
            eo: tpr_a - tpr_d,
            pqp: prediction_quality_parity(y, yhat, s)?,
            counts,
        })
    }
}

/// Probability that a random score from `pos` exceeds one from `neg`, ties
/// counting one half. Computed by sorting, but from integer pair counts, so
/// it equals the pairwise definition exactly.
pub fn pair_auc(pos: &[f64], neg: &[f64]) -> Option<f64> {
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut sorted = neg.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    // twice the AUC numerator: 2 per win, 1 per tie
    let mut doubled: u128 = 0;
    for &p in pos {
        let below = sorted.partition_point(|&v| v < p);
        let not_above = sorted.partition_point(|&v| v <= p);
        doubled += 2 * below as u128 + (not_above - below) as u128;
    }
    Some(doubled as f64 / (2 * pos.len() as u128 * neg.len() as u128) as f64)
}

pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    same_len(&[scores.len(), labels.len()])?;
    let (pos, neg) = split_by_label(scores, labels, |_| true);
    pair_auc(&pos, &neg).ok_or(MetricError::MissingClass)
}

/// Pr(score_i > score_j) for positives i from `from` and negatives j from
/// `to`, ties one half.
pub fn xauc(
    scores: &[f64],
    labels: &[bool],
    s: &[bool],
    from: impl Into<GroupSelector>,
    to: impl Into<GroupSelector>,
) -> Result<f64, MetricError> {
    same_len(&[scores.len(), labels.len(), s.len()])?;
    let (from, to) = (from.into(), to.into());
    let pos: Vec<f64> = (0..scores.len())
        .filter(|&i| labels[i] && from.matches(s[i]))
        .map(|i| scores[i])
        .collect();
    let neg: Vec<f64> = (0..scores.len())
        .filter(|&i| !labels[i] && to.matches(s[i]))
        .map(|i| scores[i])
        .collect();
    pair_auc(&pos, &neg).ok_or(MetricError::EmptyPairSet)
}

/// AUC restricted to one group.
pub fn within_group_auc(scores: &[f64], labels: &[bool], s: &[bool], g: Group) -> Result<f64, MetricError> {
    same_len(&[scores.len(), labels.len(), s.len()])?;
    let (pos, neg) = split_by_label(scores, labels, |i| g.matches(s[i]));
    pair_auc(&pos, &neg).ok_or(MetricError::MissingClassInGroup(g))
}

fn split_by_label(scores: &[f64], labels: &[bool], keep: impl Fn(usize) -> bool) -> (Vec<f64>, Vec<f64>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for i in (0..scores.len()).filter(|&i| keep(i)) {
        if labels[i] { &mut pos } else { &mut neg }.push(scores[i]);
    }
    (pos, neg)
}
