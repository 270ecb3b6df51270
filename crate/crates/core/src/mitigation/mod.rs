//! Multi-task training with periodic checkpoints, Monte-Carlo dropout
//! uncertainty scoring per head, and checkpoint selection by the
//! protected-minus-anxiety uncertainty gap. Also hosts the single-task and
//! reweighted baselines.

mod compare;
mod select;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Cohort, DatasetError, STEPS};
use crate::exec::Exec;
use crate::fairness::FairnessError;
use crate::hrv::N_FEATURES;
use crate::nnet::{
    self, adam_step, backward, bce, forward, sample_mask, AdamState, Architecture, Gradients, ModelParams, NnError,
    Tensor,
};
use crate::rng;

pub use compare::{compare_models, evaluate_model, ComparisonTable, ModelScores};
pub use select::{
    evaluate_uncertainties, final_predict, mitigate, select_checkpoint, MitigationOutcome, Predictions,
    SelectionResult, UncertaintyRecord,
};

#[derive(Debug, Error)]
pub enum MitigationError {
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {loss}")]
    NonFinite { epoch: u32, batch: usize, loss: f64 },
    #[error("no checkpoints to select from")]
    NoCheckpoints,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("cohort is empty")]
    EmptyCohort,
    #[error("{0} weights for {1} samples")]
    WeightCount(usize, usize),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Fairness(#[from] FairnessError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, MitigationError>;

/// Hyperparameters for every training routine in this module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: u32,
    pub checkpoint_every: u32,
    /// Loss weights of the anxiety and protected heads.
    pub task_weights: [f64; 2],
    pub mc_passes: usize,
    pub keep_rate: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub lstm_hidden: usize,
    pub dense_hidden: usize,
    /// Score checkpoint uncertainty on the held-out half instead of the
    /// training half.
    pub eval_on_heldout: bool,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            checkpoint_every: 5,
            task_weights: [4.5, 0.5],
            mc_passes: 50,
            keep_rate: 0.8,
            lr: 1e-3,
            batch_size: 32,
            seed: 0,
            lstm_hidden: 32,
            dense_hidden: 16,
            eval_on_heldout: false,
            exec: Exec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MitigationError::InvalidConfig(m));
        if self.checkpoint_every == 0 || self.epochs % self.checkpoint_every != 0 {
            return bad(format!("epochs {} not a multiple of checkpoint_every {}", self.epochs, self.checkpoint_every));
        }
        if self.task_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad(format!("task weights {:?} must be finite and non-negative", self.task_weights));
        }
        if self.mc_passes < 2 {
            return bad(format!("mc_passes {} < 2", self.mc_passes));
        }
        if !(self.keep_rate > 0.0 && self.keep_rate <= 1.0) {
            return bad(format!("keep_rate {} outside (0, 1]", self.keep_rate));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("learning rate {}", self.lr));
        }
        if self.batch_size == 0 || self.lstm_hidden == 0 || self.dense_hidden == 0 {
            return bad("batch size and layer widths must be positive".into());
        }
        Ok(())
    }

    pub fn architecture(&self, heads: usize) -> Architecture {
        Architecture::lstm(STEPS, N_FEATURES, self.lstm_hidden, self.dense_hidden, heads)
    }

    pub fn checkpoint_count(&self) -> usize {
        (self.epochs / self.checkpoint_every.max(1)) as usize
    }
}

/// Mean training loss over one epoch: the weighted total and each head's
/// unweighted binary cross-entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: u32,
    pub total: f64,
    pub per_head: Vec<f64>,
}

/// Everything a training run produces.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub params: ModelParams,
    pub history: Vec<EpochLoss>,
    pub checkpoints: Vec<ModelParams>,
}

pub(crate) fn inputs(cohort: &Cohort) -> Vec<Tensor> {
    cohort.windows().iter().map(|w| w.input_tensor()).collect()
}

fn targets(cohort: &Cohort, attribute: Option<&str>) -> Result<Vec<Vec<f64>>> {
    let labels = cohort.labels();
    match attribute {
        None => Ok(labels.iter().map(|y| vec![*y as f64]).collect()),
        Some(a) => {
            let g = cohort.groups(a)?;
            Ok(labels.iter().zip(&g).map(|(y, g)| vec![*y as f64, *g as f64]).collect())
        }
    }
}

/// Weighted-mean loss of one mini-batch and its gradient.
///
/// Each sample contributes `w_i * L_i / sum(w)`, so a zero weight removes
/// the sample entirely and a uniform rescaling of the weights is a no-op.
pub fn batch_gradient(
    params: &ModelParams,
    inputs: &[&Tensor],
    targets: &[&[f64]],
    weights: &[f64],
    masks: &[nnet::DropoutMask],
    task_weights: &[f64],
    exec: Exec,
) -> Result<(f64, Vec<f64>, Gradients)> {
    let heads = params.architecture().heads;
    let per_sample = exec.map_range(inputs.len(), |i| -> Result<(f64, Vec<f64>, Gradients)> {
        let (out, trace) = forward(params, inputs[i], Some(&masks[i]))?;
        let parts: Vec<f64> = out.iter().zip(targets[i]).map(|(p, y)| bce(*p, *y)).collect();
        let loss = nnet::mtl_loss(&out, targets[i], task_weights);
        Ok((loss, parts, backward(params, &trace, targets[i], task_weights)?))
    });
    let total_w: f64 = weights.iter().sum();
    let mut grads = Gradients::zeros_like(params);
    let mut loss = 0.0;
    let mut parts = vec![0.0; heads];
    if total_w <= 0.0 {
        return Ok((loss, parts, grads));
    }
    for (r, w) in per_sample.into_iter().zip(weights) {
        let (l, p, g) = r?;
        if *w == 0.0 {
            continue;
        }
        let k = w / total_w;
        loss += k * l;
        parts.iter_mut().zip(&p).for_each(|(a, b)| *a += k * b);
        grads.add_scaled(&g, k);
    }
    Ok((loss, parts, grads))
}

/// Shared mini-batch Adam loop. `on_epoch` sees the parameters after every
/// completed epoch.
fn train_loop(
    mut params: ModelParams,
    cohort: &Cohort,
    targets: &[Vec<f64>],
    weights: &[f64],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&ModelParams) -> Result<()>,
) -> Result<(ModelParams, Vec<EpochLoss>)> {
    if cohort.is_empty() {
        return Err(MitigationError::EmptyCohort);
    }
    let xs = inputs(cohort);
    let arch = params.architecture();
    let task_weights = &cfg.task_weights[..arch.heads];
    let mut adam = AdamState::new(&params);
    let mut history = Vec::with_capacity(cfg.epochs as usize);
    let mut order: Vec<usize> = (0..cohort.len()).collect();
    for epoch in 1..=cfg.epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng::stream(cfg.seed, "shuffle", epoch as u64));
        let mut mask_rng = rng::stream(cfg.seed, "dropout", epoch as u64);
        let (mut sum_total, mut sum_parts, mut sum_w) = (0.0, vec![0.0; arch.heads], 0.0);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let masks: Vec<_> = batch.iter().map(|_| sample_mask(&arch, cfg.keep_rate, &mut mask_rng)).collect();
            let xb: Vec<&Tensor> = batch.iter().map(|&i| &xs[i]).collect();
            let yb: Vec<&[f64]> = batch.iter().map(|&i| targets[i].as_slice()).collect();
            let wb: Vec<f64> = batch.iter().map(|&i| weights[i]).collect();
            let (loss, parts, grads) = batch_gradient(&params, &xb, &yb, &wb, &masks, task_weights, cfg.exec)?;
            if !loss.is_finite() || grads.slots.iter().flatten().any(|g| !g.is_finite()) {
                return Err(MitigationError::NonFinite { epoch, batch: b, loss });
            }
            let bw: f64 = wb.iter().sum();
            sum_total += bw * loss;
            sum_parts.iter_mut().zip(&parts).for_each(|(a, p)| *a += bw * p);
            sum_w += bw;
            adam_step(&mut params, &grads, &mut adam, cfg.lr);
        }
        params.set_epoch(epoch);
        let norm = if sum_w > 0.0 { sum_w } else { 1.0 };
        history.push(EpochLoss {
            epoch,
            total: sum_total / norm,
            per_head: sum_parts.iter().map(|p| p / norm).collect(),
        });
        log::debug!("epoch {epoch}: loss {:.5}", sum_total / norm);
        on_epoch(&params)?;
    }
    Ok((params, history))
}

/// Single-head anxiety model.
pub fn train_baseline(train: &Cohort, cfg: &TrainConfig) -> Result<TrainRun> {
    train_reweighted(train, cfg, &vec![1.0; train.len()])
}

/// Single-head anxiety model with each sample's loss scaled by its weight.
pub fn train_reweighted(train: &Cohort, cfg: &TrainConfig, weights: &[f64]) -> Result<TrainRun> {
    cfg.validate()?;
    if weights.len() != train.len() {
        return Err(MitigationError::WeightCount(weights.len(), train.len()));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(MitigationError::InvalidConfig(format!("sample weight {w}")));
    }
    let init = ModelParams::init(cfg.architecture(1), cfg.seed);
    let t = targets(train, None)?;
    let (params, history) = train_loop(init, train, &t, weights, cfg, |_| Ok(()))?;
    Ok(TrainRun { params, history, checkpoints: Vec::new() })
}

pub fn checkpoint_file_name(epoch: u32) -> String {
    format!("ckpt_epoch_{epoch}.bin")
}

/// Two-head model trained on anxiety and the protected attribute; a copy of
/// the weights is kept every `checkpoint_every` epochs and, when `dir` is
/// given, written there as `ckpt_epoch_{N}.bin`.
pub fn train_mtl_with_checkpoints(
    train: &Cohort,
    attribute: &str,
    cfg: &TrainConfig,
    dir: Option<&Path>,
) -> Result<TrainRun> {
    cfg.validate()?;
    let t = targets(train, Some(attribute))?;
    if let Some(d) = dir {
        std::fs::create_dir_all(d).map_err(|e| MitigationError::Io { path: d.display().to_string(), source: e })?;
    }
    let init = ModelParams::init(cfg.architecture(2), cfg.seed);
    let mut checkpoints = Vec::with_capacity(cfg.checkpoint_count());
    let (params, history) = train_loop(init, train, &t, &vec![1.0; train.len()], cfg, |p| {
        if p.epoch() % cfg.checkpoint_every == 0 {
            if let Some(d) = dir {
                nnet::save_checkpoint(p, &d.join(checkpoint_file_name(p.epoch())))?;
            }
            checkpoints.push(p.clone());
        }
        Ok(())
    })?;
    Ok(TrainRun { params, history, checkpoints })
}
