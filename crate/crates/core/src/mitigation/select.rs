use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{inputs, train_mtl_with_checkpoints, MitigationError, Result, TrainConfig, TrainRun};
use crate::dataset::{Cohort, SplitCohort};
use crate::nnet::{forward, mc_forward, ModelParams, NnError};
use crate::rng;

/// Pooled Monte-Carlo statistics of one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyRecord {
    pub epoch: u32,
    pub c_anxiety: f64,
    pub c_protected: f64,
    pub p_anxiety: f64,
    pub p_protected: f64,
    pub passes: usize,
}

impl UncertaintyRecord {
    pub fn gap(&self) -> f64 {
        self.c_protected - self.c_anxiety
    }
}

/// Scores every two-head checkpoint on `cohort`: `mc_passes` dropout passes
/// per sample, then the per-sample variances and means are averaged over
/// samples for each head.
pub fn evaluate_uncertainties(
    checkpoints: &[ModelParams],
    cohort: &Cohort,
    cfg: &TrainConfig,
) -> Result<Vec<UncertaintyRecord>> {
    cfg.validate()?;
    if cohort.is_empty() {
        return Err(MitigationError::EmptyCohort);
    }
    let xs = inputs(cohort);
    let n = xs.len() as f64;
    checkpoints
        .iter()
        .map(|ckpt| {
            let heads = ckpt.architecture().heads;
            if heads != 2 {
                return Err(NnError::ShapeMismatch(format!("uncertainty scoring needs 2 heads, got {heads}")).into());
            }
            let epoch = ckpt.epoch();
            let per_sample = cfg.exec.map(&xs, |i, x| {
                let mut r = rng::stream(cfg.seed, "mc", ((epoch as u64) << 32) | i as u64);
                mc_forward(ckpt, x, cfg.mc_passes, cfg.keep_rate, &mut r)
            });
            let mut sums = [0.0; 4];
            for est in per_sample {
                let est = est?;
                sums[0] += est.variance[0];
                sums[1] += est.variance[1];
                sums[2] += est.mean[0];
                sums[3] += est.mean[1];
            }
            Ok(UncertaintyRecord {
                epoch,
                c_anxiety: sums[0] / n,
                c_protected: sums[1] / n,
                p_anxiety: sums[2] / n,
                p_protected: sums[3] / n,
                passes: cfg.mc_passes,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub chosen_epoch: u32,
    pub gap: f64,
    #[serde(skip)]
    pub records: Vec<UncertaintyRecord>,
}

/// Record with the largest `c_protected - c_anxiety`; ties go to the
/// earliest epoch.
pub fn select_checkpoint(records: &[UncertaintyRecord]) -> Result<SelectionResult> {
    let mut best: Option<&UncertaintyRecord> = None;
    for r in records {
        best = match best {
            Some(b) if r.gap() < b.gap() || (r.gap() == b.gap() && r.epoch >= b.epoch) => Some(b),
            _ => Some(r),
        };
    }
    let best = best.ok_or(MitigationError::NoCheckpoints)?;
    Ok(SelectionResult { chosen_epoch: best.epoch, gap: best.gap(), records: records.to_vec() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub probabilities: Vec<f64>,
    pub labels: Vec<u8>,
}

/// Dropout-free anxiety-head predictions; any other head is ignored.
pub fn final_predict(params: &ModelParams, cohort: &Cohort, threshold: f64) -> Result<Predictions> {
    let xs = inputs(cohort);
    let probabilities = xs
        .iter()
        .map(|x| forward(params, x, None).map(|(out, _)| out[0]))
        .collect::<std::result::Result<Vec<f64>, NnError>>()?;
    let labels = probabilities.iter().map(|p| u8::from(*p >= threshold)).collect();
    Ok(Predictions { probabilities, labels })
}

/// Result of the full train / score / select / predict pipeline.
#[derive(Debug, Clone)]
pub struct MitigationOutcome {
    pub run: TrainRun,
    pub records: Vec<UncertaintyRecord>,
    pub selection: SelectionResult,
    pub selected: ModelParams,
    pub predictions: Predictions,
}

/// Runs the pipeline on a standardized split. Uncertainty is scored on the
/// training half unless `cfg.eval_on_heldout` is set; predictions are for
/// the test half.
pub fn mitigate(
    split: &SplitCohort,
    attribute: &str,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<MitigationOutcome> {
    let run = train_mtl_with_checkpoints(&split.train, attribute, cfg, checkpoint_dir)?;
    let eval = if cfg.eval_on_heldout { &split.test } else { &split.train };
    let records = evaluate_uncertainties(&run.checkpoints, eval, cfg)?;
    let selection = select_checkpoint(&records)?;
    let selected = run
        .checkpoints
        .iter()
        .find(|c| c.epoch() == selection.chosen_epoch)
        .cloned()
        .ok_or(MitigationError::NoCheckpoints)?;
    let predictions = final_predict(&selected, &split.test, 0.5)?;
    Ok(MitigationOutcome { run, records, selection, selected, predictions })
}
