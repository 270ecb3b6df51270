use serde::{Deserialize, Serialize};

use super::select::{final_predict, mitigate, Predictions};
use super::{train_baseline, train_reweighted, Result, TrainConfig};
use crate::dataset::{Cohort, SplitCohort};
use crate::fairness::{self, FairnessError};

/// Test-set scores of one model. Fairness entries are `None` when the
/// metric is undefined for the predictions at hand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScores {
    pub accuracy: f64,
    pub f1: f64,
    pub dir: Option<f64>,
    pub diff_fn: Option<f64>,
    pub diff_fp: Option<f64>,
    pub positive_rate: f64,
    /// Shannon entropy in bits of the predicted label distribution.
    pub prediction_entropy: f64,
}

fn defined<T>(r: std::result::Result<T, FairnessError>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(
            FairnessError::UndefinedRatio | FairnessError::MissingOutcomeClass { .. } | FairnessError::EmptyGroup(_),
        ) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

pub fn evaluate_model(preds: &Predictions, cohort: &Cohort, attribute: &str) -> Result<ModelScores> {
    let labels = cohort.labels();
    let groups = cohort.groups(attribute)?;
    let p = &preds.labels;
    let diffs = defined(fairness::equalized_odds_diffs(p, &labels, &groups))?;
    let rate = p.iter().map(|v| *v as f64).sum::<f64>() / p.len().max(1) as f64;
    let entropy = [rate, 1.0 - rate].iter().filter(|q| **q > 0.0).map(|q| -q * q.log2()).sum();
    Ok(ModelScores {
        accuracy: fairness::accuracy(p, &labels),
        f1: fairness::f1_score(p, &labels),
        dir: defined(fairness::disparate_impact(p, &groups))?,
        diff_fn: diffs.map(|d| d.0),
        diff_fp: diffs.map(|d| d.1),
        positive_rate: rate,
        prediction_entropy: entropy,
    })
}

/// Base, reweighing and proposed models scored on the same test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub attribute: String,
    pub base: ModelScores,
    pub reweighing: ModelScores,
    pub proposed: ModelScores,
    pub chosen_epoch: u32,
}

impl ComparisonTable {
    /// Aligned plain-text rendering, one metric per row.
    pub fn render(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "undef".to_string(), |x| format!("{x:.3}"));
        let cols = [&self.base, &self.reweighing, &self.proposed];
        let rows: [(&str, Box<dyn Fn(&ModelScores) -> String>); 5] = [
            ("Accuracy", Box::new(|s| format!("{:.3}", s.accuracy))),
            ("F1", Box::new(|s| format!("{:.3}", s.f1))),
            ("DI Ratio", Box::new(|s| fmt(s.dir))),
            ("Diff in FN", Box::new(|s| fmt(s.diff_fn))),
            ("Diff in FP", Box::new(|s| fmt(s.diff_fp))),
        ];
        let mut out = format!("{:<12}{:>12}{:>12}{:>12}\n", self.attribute, "Base", "Reweighing", "Proposed");
        for (name, f) in rows.iter() {
            out.push_str(&format!("{name:<12}"));
            for c in cols {
                out.push_str(&format!("{:>12}", f(c)));
            }
            out.push('\n');
        }
        out
    }
}

/// Trains all three models on `split.train` and scores them on `split.test`.
pub fn compare_models(split: &SplitCohort, attribute: &str, cfg: &TrainConfig) -> Result<ComparisonTable> {
    let test = &split.test;
    let base = train_baseline(&split.train, cfg)?;
    let base_scores = evaluate_model(&final_predict(&base.params, test, 0.5)?, test, attribute)?;

    let labels = split.train.labels();
    let groups = split.train.groups(attribute)?;
    let w = fairness::reweigh_weights(&labels, &groups)?.sample_weights(&labels, &groups);
    let rw = train_reweighted(&split.train, cfg, &w)?;
    let rw_scores = evaluate_model(&final_predict(&rw.params, test, 0.5)?, test, attribute)?;

    let outcome = mitigate(split, attribute, cfg, None)?;
    let proposed = evaluate_model(&outcome.predictions, test, attribute)?;
    Ok(ComparisonTable {
        attribute: attribute.to_string(),
        base: base_scores,
        reweighing: rw_scores,
        proposed,
        chosen_epoch: outcome.selection.chosen_epoch,
    })
}
