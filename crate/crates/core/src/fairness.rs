//! Group fairness metrics: disparate impact ratio, equalized-odds error-rate
//! gaps, the reweighing baseline's sample weights, and audit reports.
//!
//! Groups are coded 1 = privileged, 0 = unprivileged; outcomes and labels
//! are binary with 1 = anxious.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Cohort, DatasetError};

pub const DIR_BOUNDS: [f64; 2] = [0.8, 1.2];

#[derive(Debug, Error)]
pub enum FairnessError {
    #[error("group {0} is empty")]
    EmptyGroup(u8),
    #[error("disparate impact undefined: privileged group has no positive outcomes")]
    UndefinedRatio,
    #[error("group {group} has no {class} true labels")]
    MissingOutcomeClass { group: u8, class: &'static str },
    #[error("reweighing cell (group {0}, label {1}) is empty")]
    EmptyCell(u8, u8),
    #[error("sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("non-binary value {0}")]
    NotBinary(u8),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

pub type Result<T> = std::result::Result<T, FairnessError>;

fn check(a: &[u8], b: &[u8]) -> Result<()> {
    if a.len() != b.len() {
        return Err(FairnessError::LengthMismatch(a.len(), b.len()));
    }
    if let Some(v) = a.iter().chain(b).find(|v| **v > 1) {
        return Err(FairnessError::NotBinary(*v));
    }
    Ok(())
}

/// Which group is subtracted from which in the error-rate gaps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignConvention {
    #[default]
    UnprivilegedMinusPrivileged,
    PrivilegedMinusUnprivileged,
}

/// Confusion counts per group: `counts[group][outcome][label]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GroupOutcomes {
    pub counts: [[[usize; 2]; 2]; 2],
}

impl GroupOutcomes {
    pub fn tally(outcomes: &[u8], labels: &[u8], groups: &[u8]) -> Result<Self> {
        check(outcomes, groups)?;
        check(labels, groups)?;
        let mut counts = [[[0usize; 2]; 2]; 2];
        for ((o, y), g) in outcomes.iter().zip(labels).zip(groups) {
            counts[*g as usize][*o as usize][*y as usize] += 1;
        }
        Ok(GroupOutcomes { counts })
    }

    pub fn size(&self, g: u8) -> usize {
        self.counts[g as usize].iter().flatten().sum()
    }

    fn positive_outcomes(&self, g: u8) -> usize {
        self.counts[g as usize][1].iter().sum()
    }

    /// P(outcome = 1 | group = g).
    pub fn positive_rate(&self, g: u8) -> Result<f64> {
        let n = self.size(g);
        if n == 0 {
            return Err(FairnessError::EmptyGroup(g));
        }
        Ok(self.positive_outcomes(g) as f64 / n as f64)
    }

    pub fn disparate_impact(&self) -> Result<f64> {
        let unpriv = self.positive_rate(0)?;
        let priv_ = self.positive_rate(1)?;
        if self.positive_outcomes(1) == 0 {
            return Err(FairnessError::UndefinedRatio);
        }
        Ok(unpriv / priv_)
    }

    /// (FNR, FPR) of group `g`.
    pub fn error_rates(&self, g: u8) -> Result<(f64, f64)> {
        let c = &self.counts[g as usize];
        let positives = c[0][1] + c[1][1];
        let negatives = c[0][0] + c[1][0];
        if positives == 0 {
            return Err(FairnessError::MissingOutcomeClass { group: g, class: "positive" });
        }
        if negatives == 0 {
            return Err(FairnessError::MissingOutcomeClass { group: g, class: "negative" });
        }
        Ok((c[0][1] as f64 / positives as f64, c[1][0] as f64 / negatives as f64))
    }
}

/// Pr(Y=1 | unprivileged) / Pr(Y=1 | privileged).
pub fn disparate_impact(outcomes: &[u8], groups: &[u8]) -> Result<f64> {
    GroupOutcomes::tally(outcomes, outcomes, groups)?.disparate_impact()
}

/// Same ratio with per-sample weights on every count.
pub fn weighted_disparate_impact(outcomes: &[u8], groups: &[u8], weights: &[f64]) -> Result<f64> {
    check(outcomes, groups)?;
    if weights.len() != outcomes.len() {
        return Err(FairnessError::LengthMismatch(weights.len(), outcomes.len()));
    }
    let mut mass = [[0.0f64; 2]; 2];
    for ((o, g), w) in outcomes.iter().zip(groups).zip(weights) {
        mass[*g as usize][*o as usize] += w;
    }
    let rate = |g: usize| -> Result<f64> {
        let total = mass[g][0] + mass[g][1];
        if total <= 0.0 {
            return Err(FairnessError::EmptyGroup(g as u8));
        }
        Ok(mass[g][1] / total)
    };
    let (r0, r1) = (rate(0)?, rate(1)?);
    if mass[1][1] <= 0.0 {
        return Err(FairnessError::UndefinedRatio);
    }
    Ok(r0 / r1)
}

/// (diff_fn, diff_fp) as unprivileged minus privileged.
pub fn equalized_odds_diffs(preds: &[u8], labels: &[u8], groups: &[u8]) -> Result<(f64, f64)> {
    equalized_odds_diffs_with(preds, labels, groups, SignConvention::default())
}

pub fn equalized_odds_diffs_with(
    preds: &[u8],
    labels: &[u8],
    groups: &[u8],
    convention: SignConvention,
) -> Result<(f64, f64)> {
    let t = GroupOutcomes::tally(preds, labels, groups)?;
    let (fnr0, fpr0) = t.error_rates(0)?;
    let (fnr1, fpr1) = t.error_rates(1)?;
    Ok(match convention {
        SignConvention::UnprivilegedMinusPrivileged => (fnr0 - fnr1, fpr0 - fpr1),
        SignConvention::PrivilegedMinusUnprivileged => (fnr1 - fnr0, fpr1 - fpr0),
    })
}

/// Reweighing weights `w(s, y) = P(s) P(y) / P(s, y)`, indexed `[group][label]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReweighWeights {
    pub table: [[f64; 2]; 2],
}

impl ReweighWeights {
    pub fn weight(&self, group: u8, label: u8) -> f64 {
        self.table[group as usize][label as usize]
    }

    pub fn sample_weights(&self, labels: &[u8], groups: &[u8]) -> Vec<f64> {
        labels.iter().zip(groups).map(|(y, g)| self.weight(*g, *y)).collect()
    }
}

pub fn reweigh_weights(labels: &[u8], groups: &[u8]) -> Result<ReweighWeights> {
    check(labels, groups)?;
    let n = labels.len() as f64;
    let mut cell = [[0usize; 2]; 2];
    for (y, g) in labels.iter().zip(groups) {
        cell[*g as usize][*y as usize] += 1;
    }
    let mut table = [[0.0; 2]; 2];
    for g in 0..2 {
        for y in 0..2 {
            if cell[g][y] == 0 {
                return Err(FairnessError::EmptyCell(g as u8, y as u8));
            }
            let p_s = (cell[g][0] + cell[g][1]) as f64 / n;
            let p_y = (cell[0][y] + cell[1][y]) as f64 / n;
            table[g][y] = p_s * p_y / (cell[g][y] as f64 / n);
        }
    }
    Ok(ReweighWeights { table })
}

pub fn accuracy(preds: &[u8], labels: &[u8]) -> f64 {
    let hits = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / preds.len().max(1) as f64
}

/// F1 of the positive class; 0 when there are no true or predicted positives.
pub fn f1_score(preds: &[u8], labels: &[u8]) -> f64 {
    let tp = preds.iter().zip(labels).filter(|(p, y)| **p == 1 && **y == 1).count() as f64;
    let fp = preds.iter().zip(labels).filter(|(p, y)| **p == 1 && **y == 0).count() as f64;
    let fn_ = preds.iter().zip(labels).filter(|(p, y)| **p == 0 && **y == 1).count() as f64;
    if tp == 0.0 {
        return 0.0;
    }
    2.0 * tp / (2.0 * tp + fp + fn_)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub attribute: String,
    pub n_privileged: usize,
    pub n_unprivileged: usize,
    pub dir: f64,
    pub diff_fn: Option<f64>,
    pub diff_fp: Option<f64>,
    pub in_bounds: bool,
    pub bounds: [f64; 2],
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
}

pub fn dir_in_bounds(dir: f64) -> bool {
    DIR_BOUNDS[0] <= dir && dir <= DIR_BOUNDS[1]
}

fn report(attribute: &str, t: &GroupOutcomes, dir: f64) -> FairnessReport {
    FairnessReport {
        attribute: attribute.to_string(),
        n_privileged: t.size(1),
        n_unprivileged: t.size(0),
        dir,
        diff_fn: None,
        diff_fp: None,
        in_bounds: dir_in_bounds(dir),
        bounds: DIR_BOUNDS,
        accuracy: None,
        f1: None,
    }
}

/// Dataset-level audit: the true labels are the outcomes.
pub fn audit_dataset(cohort: &Cohort, attribute: &str) -> Result<FairnessReport> {
    let groups = cohort.groups(attribute)?;
    let labels = cohort.labels();
    let t = GroupOutcomes::tally(&labels, &labels, &groups)?;
    Ok(report(attribute, &t, t.disparate_impact()?))
}

/// Model-level audit of binary predictions against true labels.
pub fn audit_predictions(preds: &[u8], labels: &[u8], groups: &[u8], attribute: &str) -> Result<FairnessReport> {
    let t = GroupOutcomes::tally(preds, labels, groups)?;
    let mut r = report(attribute, &t, t.disparate_impact()?);
    let (dfn, dfp) = equalized_odds_diffs(preds, labels, groups)?;
    r.diff_fn = Some(dfn);
    r.diff_fp = Some(dfp);
    r.accuracy = Some(accuracy(preds, labels));
    r.f1 = Some(f1_score(preds, labels));
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dir_examples() {
        // Unprivileged 1/4 positive, privileged 2/4.
        let outcomes = [1, 0, 0, 0, 1, 1, 0, 0];
        let groups = [0, 0, 0, 0, 1, 1, 1, 1];
        assert_eq!(disparate_impact(&outcomes, &groups).unwrap(), 0.5);
        assert_eq!(disparate_impact(&[1, 0, 1, 0], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert!(matches!(disparate_impact(&[1, 0, 0, 0], &[0, 0, 1, 1]), Err(FairnessError::UndefinedRatio)));
        assert!(matches!(disparate_impact(&[1, 0], &[1, 1]), Err(FairnessError::EmptyGroup(0))));
    }

    #[test]
    fn equalized_odds_examples() {
        let labels = [1, 1, 0, 0, 1, 1, 0, 0];
        let groups = [0, 0, 0, 0, 1, 1, 1, 1];
        let preds = [1, 0, 0, 1, 1, 0, 0, 1];
        assert_eq!(equalized_odds_diffs(&preds, &labels, &groups).unwrap(), (0.0, 0.0));

        // Unprivileged FNR 3/10, privileged FNR 2/10.
        let mut p = Vec::new();
        let mut y = Vec::new();
        let mut g = Vec::new();
        for (grp, misses) in [(0u8, 3), (1u8, 2)] {
            for i in 0..10 {
                y.push(1);
                p.push(u8::from(i >= misses));
                g.push(grp);
            }
            y.push(0);
            p.push(0);
            g.push(grp);
        }
        let (dfn, dfp) = equalized_odds_diffs(&p, &y, &g).unwrap();
        assert!((dfn - 0.1).abs() < 1e-12);
        assert_eq!(dfp, 0.0);
        let (dfn2, _) = equalized_odds_diffs_with(&p, &y, &g, SignConvention::PrivilegedMinusUnprivileged).unwrap();
        assert!((dfn2 + 0.1).abs() < 1e-12);

        let err = equalized_odds_diffs(&[0, 0, 1, 0], &[0, 0, 1, 0], &[0, 0, 1, 1]);
        assert!(matches!(err, Err(FairnessError::MissingOutcomeClass { group: 0, class: "positive" })));
    }

    #[test]
    fn reweigh_examples() {
        // Independent cells: every weight is 1.
        let labels = [0, 1, 0, 1];
        let groups = [0, 0, 1, 1];
        let w = reweigh_weights(&labels, &groups).unwrap();
        assert!(w.table.iter().flatten().all(|&v| (v - 1.0).abs() < 1e-15));

        // P(s=1)=0.5, P(y=1)=0.5, P(s=1,y=1)=0.4 -> 0.625.
        let mut labels = Vec::new();
        let mut groups = Vec::new();
        for (g, y, k) in [(1u8, 1u8, 4), (1, 0, 1), (0, 1, 1), (0, 0, 4)] {
            for _ in 0..k {
                labels.push(y);
                groups.push(g);
            }
        }
        let w = reweigh_weights(&labels, &groups).unwrap();
        assert!((w.weight(1, 1) - 0.625).abs() < 1e-15);
        assert!(matches!(reweigh_weights(&[1, 1], &[0, 1]), Err(FairnessError::EmptyCell(0, 0))));
    }

    #[test]
    fn audit_bounds_flag() {
        assert!(!dir_in_bounds(0.682));
        assert!(dir_in_bounds(1.0));
        assert!(!dir_in_bounds(1.3));
        assert!(dir_in_bounds(0.8) && dir_in_bounds(1.2));
    }

    #[test]
    fn prediction_audit_json_fields() {
        let preds = [1, 0, 1, 0, 1, 1, 0, 0];
        let labels = [1, 1, 0, 0, 1, 1, 0, 0];
        let groups = [0, 0, 0, 0, 1, 1, 1, 1];
        let r = audit_predictions(&preds, &labels, &groups, "age").unwrap();
        let v = serde_json::to_value(&r).unwrap();
        for key in ["attribute", "n_privileged", "n_unprivileged", "dir", "diff_fn", "diff_fp", "in_bounds", "bounds", "accuracy", "f1"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(r.accuracy, Some(0.75));
        assert_eq!(v["bounds"], serde_json::json!([0.8, 1.2]));
    }

    #[test]
    fn f1_matches_definition() {
        assert_eq!(f1_score(&[1, 1, 0, 0], &[1, 0, 1, 0]), 0.5);
        assert_eq!(f1_score(&[0, 0], &[1, 0]), 0.0);
    }

    fn binary_pair() -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
        (2usize..80).prop_flat_map(|n| (prop::collection::vec(0u8..2, n), prop::collection::vec(0u8..2, n)))
    }

    proptest! {
        #[test]
        fn dir_invariant_under_permutation_and_duplication((o, g) in binary_pair(), k in 1usize..4, seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let Ok(base) = disparate_impact(&o, &g) else { return Ok(()); };
            let mut idx: Vec<usize> = (0..o.len()).collect();
            idx.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let po: Vec<u8> = idx.iter().map(|&i| o[i]).collect();
            let pg: Vec<u8> = idx.iter().map(|&i| g[i]).collect();
            prop_assert_eq!(disparate_impact(&po, &pg).unwrap(), base);
            let ko: Vec<u8> = o.iter().cycle().take(o.len() * k).copied().collect();
            let kg: Vec<u8> = g.iter().cycle().take(g.len() * k).copied().collect();
            prop_assert_eq!(disparate_impact(&ko, &kg).unwrap(), base);
        }

        #[test]
        fn reweighing_equalizes_positive_rates((y, g) in binary_pair()) {
            let Ok(w) = reweigh_weights(&y, &g) else { return Ok(()); };
            prop_assert!(w.table.iter().flatten().all(|v| *v > 0.0));
            let d = weighted_disparate_impact(&y, &g, &w.sample_weights(&y, &g)).unwrap();
            prop_assert!((d - 1.0).abs() < 1e-9);
        }
    }
}
