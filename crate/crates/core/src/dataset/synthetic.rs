//! Synthetic cohort with a planted protected-attribute bias.
//!
//! Each window is drawn in a latent standard-normal space and mapped to
//! plausible HRV units. The anxiety label shifts a set of heart-rate and
//! vagal features; the protected group shifts `nni_20`, `pnni_20` and `sdsd`
//! and, through `bias_strength`, the group-conditional positive rate. At
//! strength 0 the attribute is independent of both labels and features.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{encode_protected, Cohort, DatasetError, LabeledWindow, Result, STEPS};
use crate::hrv::{feature_index, N_FEATURES};
use crate::rng;

pub const SYNTH_ATTRIBUTE: &str = "group";
pub const SYNTH_PROTECTED_FEATURES: [&str; 3] = ["nni_20", "pnni_20", "sdsd"];

/// Anxiety-linked features and the sign of their shift for label 1.
const ANXIETY_FEATURES: [(&str, f64); 6] = [
    ("mean_hr", 1.0),
    ("max_hr", 1.0),
    ("rmssd", -1.0),
    ("hf", -1.0),
    ("lf_hf_ratio", 1.0),
    ("hfnu", -1.0),
];

/// Location and scale of each feature in `FEATURE_NAMES` order.
const UNITS: [(f64, f64); N_FEATURES] = [
    (800.0, 80.0),
    (50.0, 15.0),
    (35.0, 12.0),
    (5.0, 3.0),
    (15.0, 8.0),
    (15.0, 5.0),
    (40.0, 12.0),
    (35.0, 12.0),
    (800.0, 80.0),
    (150.0, 40.0),
    (0.045, 0.015),
    (0.06, 0.02),
    (75.0, 8.0),
    (90.0, 10.0),
    (65.0, 7.0),
    (5.0, 2.0),
    (800.0, 300.0),
    (400.0, 150.0),
    (2.0, 0.8),
    (65.0, 10.0),
    (35.0, 10.0),
    (1500.0, 500.0),
    (300.0, 100.0),
    (2.0, 0.6),
    (4.0, 0.3),
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n: usize,
    pub bias_strength: f64,
    pub seed: u64,
    pub windows_per_participant: usize,
    /// Share of participants in the privileged (majority) group.
    pub privileged_share: f64,
    /// Latent shift of anxiety-linked features between labels 0 and 1 (half
    /// of it each way).
    pub label_signal: f64,
    /// Latent shift of the protected-linked features at full strength.
    pub group_shift: f64,
    /// Rate of the latent anxiety state, equal in both groups.
    pub latent_positive_rate: f64,
    /// Observed positive rate of the privileged group at full strength.
    pub privileged_positive_rate: f64,
    /// Positive rate of the unprivileged group at full strength.
    pub unprivileged_positive_rate: f64,
    pub participant_sd: f64,
    pub window_sd: f64,
    pub step_sd: f64,
}

impl SyntheticConfig {
    pub fn new(n: usize, bias_strength: f64, seed: u64) -> Self {
        SyntheticConfig {
            n,
            bias_strength,
            seed,
            windows_per_participant: 20,
            privileged_share: 0.6,
            label_signal: 0.8,
            group_shift: 1.2,
            latent_positive_rate: 0.5,
            privileged_positive_rate: 0.6,
            unprivileged_positive_rate: 0.3,
            participant_sd: 0.3,
            window_sd: 0.5,
            step_sd: 1.0,
        }
    }

    fn positive_rate(&self, privileged: bool) -> f64 {
        let full = if privileged { self.privileged_positive_rate } else { self.unprivileged_positive_rate };
        let r = self.latent_positive_rate;
        r + self.bias_strength * (full - r)
    }
}

pub fn generate_synthetic(n: usize, bias_strength: f64, seed: u64) -> Result<Cohort> {
    generate_synthetic_with(&SyntheticConfig::new(n, bias_strength, seed))
}

pub fn generate_synthetic_with(cfg: &SyntheticConfig) -> Result<Cohort> {
    if !(0.0..=1.0).contains(&cfg.bias_strength) {
        return Err(DatasetError::BadStrength(cfg.bias_strength));
    }
    if cfg.n < 40 {
        return Err(DatasetError::TooFewSynthetic(cfg.n));
    }
    let b = cfg.bias_strength;
    let n_participants = (cfg.n / cfg.windows_per_participant.max(1)).max(4);
    let n_priv = ((cfg.privileged_share * n_participants as f64).round() as usize).clamp(1, n_participants - 1);

    // Group membership: exactly n_priv privileged participants.
    let mut rng = rng::stream(cfg.seed, "synth-groups", 0);
    let mut is_priv: Vec<bool> = (0..n_participants).map(|p| p < n_priv).collect();
    is_priv.shuffle(&mut rng);
    let raw: BTreeMap<String, String> = (0..n_participants)
        .map(|p| (participant_id(p), if is_priv[p] { "A" } else { "B" }.to_string()))
        .collect();
    let (codes, encoding) = encode_protected(&raw, SYNTH_ATTRIBUTE)?;

    // Latent anxiety state with the same rate in both groups drives the
    // features. Observed labels are the latent state with exact numbers of
    // flips per group, towards the biased group-conditional rates.
    let window_group: Vec<bool> = (0..cfg.n).map(|i| is_priv[i % n_participants]).collect();
    let mut latent = vec![0u8; cfg.n];
    let mut labels = vec![0u8; cfg.n];
    let mut rng = rng::stream(cfg.seed, "synth-labels", 0);
    for privileged in [true, false] {
        let mut members: Vec<usize> = (0..cfg.n).filter(|&i| window_group[i] == privileged).collect();
        members.shuffle(&mut rng);
        let m = members.len() as f64;
        let latent_pos = (cfg.latent_positive_rate * m).round() as usize;
        let observed_pos = (cfg.positive_rate(privileged) * m).round() as usize;
        for &i in &members[..latent_pos] {
            latent[i] = 1;
        }
        // Members are in random order, so a prefix of either class is a
        // random subset of it.
        let (pos, neg) = members.split_at(latent_pos);
        let observed: Vec<usize> = if observed_pos <= latent_pos {
            pos[..observed_pos].to_vec()
        } else {
            pos.iter().chain(&neg[..observed_pos - latent_pos]).copied().collect()
        };
        for i in observed {
            labels[i] = 1;
        }
    }

    let anxiety_cols: Vec<(usize, f64)> =
        ANXIETY_FEATURES.iter().map(|(n, s)| (feature_index(n).unwrap(), *s)).collect();
    let protected_cols: Vec<usize> = SYNTH_PROTECTED_FEATURES.iter().map(|n| feature_index(n).unwrap()).collect();

    let mut rng = rng::stream(cfg.seed, "synth-participants", 0);
    let participant_offsets: Vec<Vec<f64>> = (0..n_participants)
        .map(|_| (0..N_FEATURES).map(|_| cfg.participant_sd * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();

    let mut rng = rng::stream(cfg.seed, "synth-features", 0);
    let mut windows = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let p = i % n_participants;
        let state = latent[i];
        let mut shift = participant_offsets[p].clone();
        for f in shift.iter_mut() {
            *f += cfg.window_sd * rng.sample::<f64, _>(StandardNormal);
        }
        let label_sign = if state == 1 { 0.5 } else { -0.5 };
        for &(f, s) in &anxiety_cols {
            shift[f] += cfg.label_signal * label_sign * s;
        }
        let group_sign = if is_priv[p] { 0.5 } else { -0.5 };
        for &f in &protected_cols {
            shift[f] += cfg.group_shift * b * group_sign;
        }
        let mut features = Vec::with_capacity(STEPS * N_FEATURES);
        for _ in 0..STEPS {
            for (f, (loc, scale)) in UNITS.iter().enumerate() {
                let z = shift[f] + cfg.step_sd * rng.sample::<f64, _>(StandardNormal);
                features.push(loc + scale * z);
            }
        }
        let pid = participant_id(p);
        let protected = [(SYNTH_ATTRIBUTE.to_string(), codes[&pid])].into_iter().collect();
        windows.push(LabeledWindow::new(format!("w{i:05}"), pid, features, labels[i], protected)?);
    }
    Cohort::new(windows, [(SYNTH_ATTRIBUTE.to_string(), encoding)].into_iter().collect())
}

fn participant_id(p: usize) -> String {
    format!("p{p:04}")
}
