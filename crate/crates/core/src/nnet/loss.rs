/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside the log.
pub const PROB_CLAMP: f64 = 1e-12;

pub fn bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Weighted sum of per-head binary cross-entropies.
pub fn mtl_loss(outputs: &[f64], targets: &[f64], task_weights: &[f64]) -> f64 {
    outputs
        .iter()
        .zip(targets)
        .zip(task_weights)
        .map(|((p, y), w)| w * bce(*p, *y))
        .sum()
}

/// d(mtl_loss)/d(logit) per head for sigmoid outputs. Zero where the clamp
/// is active, since the clamped loss is flat there.
pub fn mtl_loss_logit_grads(outputs: &[f64], targets: &[f64], task_weights: &[f64]) -> Vec<f64> {
    outputs
        .iter()
        .zip(targets)
        .zip(task_weights)
        .map(|((p, y), w)| {
            if *p < PROB_CLAMP || *p > 1.0 - PROB_CLAMP {
                0.0
            } else {
                w * (p - y)
            }
        })
        .collect()
}
