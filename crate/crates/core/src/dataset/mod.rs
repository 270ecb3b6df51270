//! Labelled 24-step windows of HRV features, protected-attribute encoding,
//! train/test splitting and standardization.

mod io;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hrv::N_FEATURES;
use crate::nnet::Tensor;
use crate::rng;

pub use io::{read_cohort, write_cohort, CohortPaths};
pub use synthetic::{generate_synthetic, generate_synthetic_with, SyntheticConfig, SYNTH_ATTRIBUTE, SYNTH_PROTECTED_FEATURES};

/// Time steps per window (24 five-minute steps).
pub const STEPS: usize = 24;
pub const WINDOW_LEN: usize = STEPS * N_FEATURES;
pub const TRAIN_FRACTION: f64 = 0.75;
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("window {0}: {1}")]
    InvalidWindow(String, String),
    #[error("attribute {0} has a single category")]
    DegenerateGroup(String),
    #[error("attribute {0} has {1} categories; coarsen to two first")]
    NotBinary(String, usize),
    #[error("cohort of {0} windows is too small to split (need at least 4)")]
    TooSmall(usize),
    #[error("bias strength {0} outside [0, 1]")]
    BadStrength(f64),
    #[error("synthetic cohort needs at least 40 windows, got {0}")]
    TooFewSynthetic(usize),
    #[error("inconsistent cohort: {0}")]
    Inconsistent(String),
    #[error("missing protected attribute {0}")]
    MissingAttribute(String),
    #[error("{path}: {message}")]
    Input { path: String, message: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

/// One model sample: a 24 x 25 feature matrix with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindow {
    pub sample_id: String,
    pub participant_id: String,
    features: Vec<f64>,
    pub anxiety: u8,
    pub protected: BTreeMap<String, u8>,
}

impl LabeledWindow {
    pub fn new(
        sample_id: impl Into<String>,
        participant_id: impl Into<String>,
        features: Vec<f64>,
        anxiety: u8,
        protected: BTreeMap<String, u8>,
    ) -> Result<Self> {
        let sample_id = sample_id.into();
        if features.len() != WINDOW_LEN {
            return Err(DatasetError::InvalidWindow(
                sample_id,
                format!("expected {STEPS}x{N_FEATURES} values, got {}", features.len()),
            ));
        }
        if anxiety > 1 {
            return Err(DatasetError::InvalidWindow(sample_id, format!("anxiety label {anxiety}")));
        }
        if let Some((k, v)) = protected.iter().find(|(_, v)| **v > 1) {
            return Err(DatasetError::InvalidWindow(sample_id, format!("attribute {k} = {v}")));
        }
        Ok(LabeledWindow { sample_id, participant_id: participant_id.into(), features, anxiety, protected })
    }

    /// Row-major `[step][feature]` values.
    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn value(&self, step: usize, feature: usize) -> f64 {
        self.features[step * N_FEATURES + feature]
    }

    pub fn input_tensor(&self) -> Tensor {
        Tensor::new(vec![STEPS, N_FEATURES], self.features.clone()).expect("window shape checked at construction")
    }

    pub fn attribute(&self, name: &str) -> Result<u8> {
        self.protected.get(name).copied().ok_or_else(|| DatasetError::MissingAttribute(name.into()))
    }
}

/// Raw-category to code mapping for one protected attribute. The majority
/// category (by participant count) is privileged and coded 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeEncoding {
    #[serde(flatten)]
    pub codes: BTreeMap<String, u8>,
    pub counts: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub tie: bool,
}

impl AttributeEncoding {
    pub fn privileged(&self) -> &str {
        self.codes.iter().find(|(_, c)| **c == 1).map(|(k, _)| k.as_str()).unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    windows: Vec<LabeledWindow>,
    catalog: BTreeMap<String, AttributeEncoding>,
}

impl Cohort {
    pub fn new(windows: Vec<LabeledWindow>, catalog: BTreeMap<String, AttributeEncoding>) -> Result<Self> {
        if let Some(first) = windows.first() {
            let keys: BTreeSet<&String> = first.protected.keys().collect();
            if let Some(w) = windows.iter().find(|w| w.protected.keys().collect::<BTreeSet<_>>() != keys) {
                return Err(DatasetError::Inconsistent(format!(
                    "window {} has a different protected-attribute set",
                    w.sample_id
                )));
            }
        }
        for (name, enc) in &catalog {
            let count = |code: u8| -> usize {
                enc.codes.iter().filter(|(_, c)| **c == code).map(|(k, _)| enc.counts.get(k).copied().unwrap_or(0)).sum()
            };
            if count(1) < count(0) {
                return Err(DatasetError::Inconsistent(format!("attribute {name}: privileged group is the minority")));
            }
        }
        Ok(Cohort { windows, catalog })
    }

    pub fn windows(&self) -> &[LabeledWindow] {
        &self.windows
    }

    pub fn catalog(&self) -> &BTreeMap<String, AttributeEncoding> {
        &self.catalog
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.windows.iter().map(|w| w.anxiety).collect()
    }

    pub fn groups(&self, attribute: &str) -> Result<Vec<u8>> {
        self.windows.iter().map(|w| w.attribute(attribute)).collect()
    }

    pub fn attribute_names(&self) -> Vec<String> {
        self.windows.first().map(|w| w.protected.keys().cloned().collect()).unwrap_or_default()
    }

    fn subset(&self, idx: &[usize]) -> Cohort {
        Cohort { windows: idx.iter().map(|&i| self.windows[i].clone()).collect(), catalog: self.catalog.clone() }
    }
}

/// Per-participant labels from raw scores: 1 strictly above the participant's
/// mean, 0 otherwise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinarizedLabels {
    pub labels: BTreeMap<String, Vec<u8>>,
    /// Participants whose scores have zero variance (all labelled 0).
    pub degenerate: BTreeSet<String>,
}

pub fn binarize_anxiety(scores: &BTreeMap<String, Vec<f64>>) -> BinarizedLabels {
    let mut labels = BTreeMap::new();
    let mut degenerate = BTreeSet::new();
    for (pid, s) in scores {
        if s.is_empty() {
            continue;
        }
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        if s.iter().all(|v| *v == s[0]) {
            degenerate.insert(pid.clone());
        }
        labels.insert(pid.clone(), s.iter().map(|v| u8::from(*v > mean)).collect());
    }
    BinarizedLabels { labels, degenerate }
}

/// Encodes a two-category attribute: majority participant count -> 1.
/// Ties go to the lexicographically smaller category, with a warning.
pub fn encode_protected(raw: &BTreeMap<String, String>, attribute: &str) -> Result<(BTreeMap<String, u8>, AttributeEncoding)> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for cat in raw.values() {
        *counts.entry(cat.clone()).or_default() += 1;
    }
    match counts.len() {
        0 | 1 => return Err(DatasetError::DegenerateGroup(attribute.into())),
        2 => {}
        k => return Err(DatasetError::NotBinary(attribute.into(), k)),
    }
    let mut cats: Vec<(&String, &usize)> = counts.iter().collect();
    // BTreeMap order is lexicographic; stable sort keeps it on equal counts.
    cats.sort_by(|a, b| b.1.cmp(a.1));
    let tie = cats[0].1 == cats[1].1;
    if tie {
        log::warn!("attribute {attribute}: tied group sizes, '{}' taken as privileged", cats[0].0);
    }
    let codes: BTreeMap<String, u8> = [(cats[0].0.clone(), 1), (cats[1].0.clone(), 0)].into_iter().collect();
    let mapping = raw.iter().map(|(pid, cat)| (pid.clone(), codes[cat])).collect();
    Ok((mapping, AttributeEncoding { codes, counts, tie }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitCohort {
    pub train: Cohort,
    pub test: Cohort,
    pub seed: u64,
}

fn train_size(n: usize) -> usize {
    (TRAIN_FRACTION * n as f64).round() as usize
}

/// Shuffled 75/25 split by window.
pub fn split_cohort(cohort: &Cohort, seed: u64) -> Result<SplitCohort> {
    let n = cohort.len();
    if n < 4 {
        return Err(DatasetError::TooSmall(n));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, "split", 0));
    let k = train_size(n);
    Ok(SplitCohort { train: cohort.subset(&idx[..k]), test: cohort.subset(&idx[k..]), seed })
}

/// Shuffled 75/25 split of participants; every window follows its
/// participant.
pub fn split_cohort_by_participant(cohort: &Cohort, seed: u64) -> Result<SplitCohort> {
    let n = cohort.len();
    let mut participants: Vec<&str> = Vec::new();
    for w in cohort.windows() {
        if !participants.contains(&w.participant_id.as_str()) {
            participants.push(&w.participant_id);
        }
    }
    if n < 4 || participants.len() < 2 {
        return Err(DatasetError::TooSmall(n));
    }
    participants.shuffle(&mut rng::stream(seed, "split-participant", 0));
    let k = train_size(participants.len()).clamp(1, participants.len() - 1);
    let train_ids: BTreeSet<&str> = participants[..k].iter().copied().collect();
    let (train, test): (Vec<usize>, Vec<usize>) =
        (0..n).partition(|&i| train_ids.contains(cohort.windows[i].participant_id.as_str()));
    Ok(SplitCohort { train: cohort.subset(&train), test: cohort.subset(&test), seed })
}

/// Per-feature affine map fitted on training windows, pooling all steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(cohort: &Cohort) -> Standardizer {
        let count = (cohort.len() * STEPS) as f64;
        let mut mean = vec![0.0; N_FEATURES];
        for w in cohort.windows() {
            for (i, v) in w.features.iter().enumerate() {
                mean[i % N_FEATURES] += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; N_FEATURES];
        for w in cohort.windows() {
            for (i, v) in w.features.iter().enumerate() {
                let f = i % N_FEATURES;
                var[f] += (v - mean[f]) * (v - mean[f]);
            }
        }
        let std = var.iter().map(|s| (s / count).sqrt()).collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, cohort: &Cohort) -> Cohort {
        let windows = cohort
            .windows()
            .iter()
            .map(|w| {
                let mut w = w.clone();
                for (i, v) in w.features.iter_mut().enumerate() {
                    let f = i % N_FEATURES;
                    *v = (*v - self.mean[f]) / self.std[f].max(STD_FLOOR);
                }
                w
            })
            .collect();
        Cohort { windows, catalog: cohort.catalog.clone() }
    }
}

/// Standardizes both halves with statistics of the training half.
pub fn standardize(split: &SplitCohort) -> (SplitCohort, Standardizer) {
    let s = Standardizer::fit(&split.train);
    (SplitCohort { train: s.apply(&split.train), test: s.apply(&split.test), seed: split.seed }, s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn window(id: usize, value: f64, group: u8) -> LabeledWindow {
        LabeledWindow::new(
            format!("s{id}"),
            format!("p{}", id % 3),
            vec![value; WINDOW_LEN],
            (id % 2) as u8,
            [("g".to_string(), group)].into_iter().collect(),
        )
        .unwrap()
    }

    fn cohort(n: usize) -> Cohort {
        Cohort::new((0..n).map(|i| window(i, i as f64, (i % 2) as u8)).collect(), BTreeMap::new()).unwrap()
    }

    fn scores(v: &[f64]) -> BTreeMap<String, Vec<f64>> {
        [("p".to_string(), v.to_vec())].into_iter().collect()
    }

    #[test]
    fn binarize_examples() {
        assert_eq!(binarize_anxiety(&scores(&[1.0, 2.0, 3.0, 4.0, 5.0])).labels["p"], vec![0, 0, 0, 1, 1]);
        let flat = binarize_anxiety(&scores(&[3.0, 3.0, 3.0]));
        assert_eq!(flat.labels["p"], vec![0, 0, 0]);
        assert!(flat.degenerate.contains("p"));
        assert_eq!(binarize_anxiety(&scores(&[20.0, 80.0])).labels["p"], vec![0, 1]);
    }

    proptest! {
        #[test]
        fn binarize_is_shift_invariant(v in prop::collection::vec(-1000i32..1000, 1..30), c in -1000i32..1000) {
            let a: Vec<f64> = v.iter().map(|x| *x as f64).collect();
            let b: Vec<f64> = v.iter().map(|x| (*x + c) as f64).collect();
            prop_assert_eq!(binarize_anxiety(&scores(&a)).labels, binarize_anxiety(&scores(&b)).labels);
        }

        #[test]
        fn encode_assigns_one_to_majority(n_a in 1usize..50, n_b in 1usize..50) {
            let mut raw = BTreeMap::new();
            for i in 0..n_a { raw.insert(format!("a{i}"), "A".to_string()); }
            for i in 0..n_b { raw.insert(format!("b{i}"), "B".to_string()); }
            let (_, enc) = encode_protected(&raw, "x").unwrap();
            let majority = if n_a >= n_b { "A" } else { "B" };
            prop_assert_eq!(enc.codes[majority], 1);
            prop_assert_eq!(enc.tie, n_a == n_b);
        }

        #[test]
        fn split_preserves_every_window(n in 4usize..60, seed in any::<u64>()) {
            let c = cohort(n);
            let s = split_cohort(&c, seed).unwrap();
            prop_assert_eq!(s.train.len(), (0.75 * n as f64).round() as usize);
            let mut ids: Vec<String> = s.train.windows().iter().chain(s.test.windows()).map(|w| w.sample_id.clone()).collect();
            ids.sort();
            let mut want: Vec<String> = c.windows().iter().map(|w| w.sample_id.clone()).collect();
            want.sort();
            prop_assert_eq!(ids, want);
        }
    }

    #[test]
    fn encode_examples() {
        let mut raw = BTreeMap::new();
        for i in 0..120 {
            raw.insert(format!("a{i}"), "A".to_string());
        }
        for i in 0..80 {
            raw.insert(format!("b{i}"), "B".to_string());
        }
        let (map, enc) = encode_protected(&raw, "age").unwrap();
        assert_eq!(enc.codes["A"], 1);
        assert_eq!(enc.codes["B"], 0);
        assert_eq!(enc.counts["A"], 120);
        assert_eq!(map["b3"], 0);

        let tie: BTreeMap<_, _> = (0..200).map(|i| (format!("p{i}"), if i < 100 { "B" } else { "A" }.to_string())).collect();
        let (_, enc) = encode_protected(&tie, "age").unwrap();
        assert!(enc.tie);
        assert_eq!(enc.codes["A"], 1);

        let one: BTreeMap<_, _> = (0..200).map(|i| (format!("p{i}"), "A".to_string())).collect();
        assert!(matches!(encode_protected(&one, "age"), Err(DatasetError::DegenerateGroup(_))));
        let three: BTreeMap<_, _> = (0..3).map(|i| (format!("p{i}"), format!("c{i}"))).collect();
        assert!(matches!(encode_protected(&three, "age"), Err(DatasetError::NotBinary(_, 3))));
    }

    #[test]
    fn catalog_serializes_flat() {
        let enc = AttributeEncoding {
            codes: [("A".to_string(), 1), ("B".to_string(), 0)].into_iter().collect(),
            counts: [("A".to_string(), 3), ("B".to_string(), 2)].into_iter().collect(),
            tie: false,
        };
        let json = serde_json::to_string(&enc).unwrap();
        assert_eq!(json, r#"{"A":1,"B":0,"counts":{"A":3,"B":2}}"#);
        assert_eq!(serde_json::from_str::<AttributeEncoding>(&json).unwrap(), enc);
    }

    #[test]
    fn split_sizes_and_determinism() {
        assert!(matches!(split_cohort(&cohort(3), 1), Err(DatasetError::TooSmall(3))));
        let s = split_cohort(&cohort(4), 1).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (3, 1));
        let c = cohort(920);
        let a = split_cohort(&c, 42).unwrap();
        assert_eq!((a.train.len(), a.test.len()), (690, 230));
        assert_eq!(a, split_cohort(&c, 42).unwrap());
        assert_ne!(a.train, split_cohort(&c, 43).unwrap().train);
    }

    #[test]
    fn participant_split_keeps_participants_together() {
        let c = cohort(30);
        let s = split_cohort_by_participant(&c, 7).unwrap();
        let train: BTreeSet<_> = s.train.windows().iter().map(|w| &w.participant_id).collect();
        assert!(s.test.windows().iter().all(|w| !train.contains(&w.participant_id)));
        assert_eq!(s.train.len() + s.test.len(), 30);
    }

    #[test]
    fn standardize_examples() {
        let train = Cohort::new(vec![window(0, 1.0, 0), window(1, 3.0, 1)], BTreeMap::new()).unwrap();
        let test = Cohort::new(vec![window(2, 2.0, 0)], BTreeMap::new()).unwrap();
        let (s, st) = standardize(&SplitCohort { train, test, seed: 0 });
        assert!(s.train.windows()[0].features().iter().all(|&v| v == -1.0));
        assert!(s.train.windows()[1].features().iter().all(|&v| v == 1.0));
        assert!(s.test.windows()[0].features().iter().all(|&v| v == 0.0));
        assert_eq!(st.std[0], 1.0);

        let constant = Cohort::new(vec![window(0, 5.0, 0), window(1, 5.0, 1)], BTreeMap::new()).unwrap();
        let (s, _) = standardize(&SplitCohort { train: constant.clone(), test: constant, seed: 0 });
        assert!(s.train.windows().iter().all(|w| w.features().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn standardized_train_has_unit_moments() {
        let c = generate_synthetic(60, 0.5, 3).unwrap();
        let split = split_cohort(&c, 3).unwrap();
        let (s, _) = standardize(&split);
        let refit = Standardizer::fit(&s.train);
        for f in 0..N_FEATURES {
            assert!(refit.mean[f].abs() < 1e-9);
            assert!((refit.std[f] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn window_invariants() {
        assert!(LabeledWindow::new("s", "p", vec![0.0; 10], 0, BTreeMap::new()).is_err());
        assert!(LabeledWindow::new("s", "p", vec![0.0; WINDOW_LEN], 2, BTreeMap::new()).is_err());
        let bad: BTreeMap<String, u8> = [("g".to_string(), 3)].into_iter().collect();
        assert!(LabeledWindow::new("s", "p", vec![0.0; WINDOW_LEN], 0, bad).is_err());
    }
}
