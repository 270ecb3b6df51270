//! Heart-rate-variability features from ECG strips or NN-interval series.
//!
//! Produces the 25 features used as per-step model inputs: 16 time-domain
//! statistics, 7 spectral band powers and ratios, and the two Lorenz-plot
//! indices (cardiac sympathetic / vagal index).

mod peaks;
pub mod spectral;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use peaks::{detect_peak_indices, detect_r_peaks};

pub const N_FEATURES: usize = 25;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "mean_nni",
    "sdnn",
    "sdsd",
    "nni_50",
    "pnni_50",
    "nni_20",
    "pnni_20",
    "rmssd",
    "median_nni",
    "range_nni",
    "cvsd",
    "cvnni",
    "mean_hr",
    "max_hr",
    "min_hr",
    "std_hr",
    "lf",
    "hf",
    "lf_hf_ratio",
    "lfnu",
    "hfnu",
    "total_power",
    "vlf",
    "csi",
    "cvi",
];

/// Column index of a feature by name.
pub fn feature_index(name: &str) -> Option<usize> {
    FEATURE_NAMES.iter().position(|n| *n == name)
}

#[derive(Debug, Error)]
pub enum HrvError {
    #[error("invalid ECG signal: {0}")]
    InvalidSignal(String),
    #[error("invalid NN interval series: {0}")]
    InvalidIntervals(String),
    #[error("fewer than two R peaks detected")]
    NoPeaks,
    #[error("need at least 2 NN intervals, got {0}")]
    TooFewIntervals(usize),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct EcgSignal {
    samples: Vec<f64>,
    sample_rate: f64,
}

impl EcgSignal {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self, HrvError> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(HrvError::InvalidSignal(format!("sample rate {sample_rate}")));
        }
        if (samples.len() as f64) < 2.0 * sample_rate {
            return Err(HrvError::InvalidSignal(format!(
                "{} samples is shorter than 2 s at {sample_rate} Hz",
                samples.len()
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(HrvError::InvalidSignal("non-finite sample".into()));
        }
        Ok(EcgSignal { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    /// Reads a `t_seconds,voltage` CSV. The sample rate is taken from the
    /// average spacing of the time column.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, HrvError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut t = Vec::new();
        let mut v = Vec::new();
        for rec in rdr.deserialize::<(f64, f64)>() {
            let (ti, vi) = rec?;
            t.push(ti);
            v.push(vi);
        }
        if t.len() < 2 {
            return Err(HrvError::InvalidSignal("fewer than two samples".into()));
        }
        let span = t[t.len() - 1] - t[0];
        if span <= 0.0 {
            return Err(HrvError::InvalidSignal("time column is not increasing".into()));
        }
        let fs = (t.len() - 1) as f64 / span;
        EcgSignal::new(v, fs)
    }
}

/// Normal-to-normal interbeat intervals in milliseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct NnIntervals(Vec<f64>);

impl NnIntervals {
    pub fn new(intervals_ms: Vec<f64>) -> Result<Self, HrvError> {
        if let Some(bad) = intervals_ms.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(HrvError::InvalidIntervals(format!("interval {bad} ms")));
        }
        Ok(NnIntervals(intervals_ms))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Reads a single-column `interval_ms` CSV.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, HrvError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut out = Vec::new();
        for rec in rdr.deserialize::<(f64,)>() {
            out.push(rec?.0);
        }
        NnIntervals::new(out)
    }
}

/// Conditions under which some features were emitted as placeholders or are
/// physically unreliable.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureFlags {
    /// Record shorter than one period of the lowest VLF frequency.
    pub vlf_unresolved: bool,
    /// Too few resampled points for any spectrum; spectral features are 0.
    pub spectrum_undefined: bool,
    /// Zero transverse Poincaré spread; csi and/or cvi emitted as 0.
    pub poincare_degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub mean_nni: f64,
    pub sdnn: f64,
    pub sdsd: f64,
    pub nni_50: f64,
    pub pnni_50: f64,
    pub nni_20: f64,
    pub pnni_20: f64,
    pub rmssd: f64,
    pub median_nni: f64,
    pub range_nni: f64,
    pub cvsd: f64,
    pub cvnni: f64,
    pub mean_hr: f64,
    pub max_hr: f64,
    pub min_hr: f64,
    pub std_hr: f64,
    pub lf: f64,
    pub hf: f64,
    pub lf_hf_ratio: f64,
    pub lfnu: f64,
    pub hfnu: f64,
    pub total_power: f64,
    pub vlf: f64,
    pub csi: f64,
    pub cvi: f64,
    #[serde(skip)]
    pub flags: FeatureFlags,
}

impl FeatureVector {
    /// Values in `FEATURE_NAMES` order.
    pub fn to_array(&self) -> [f64; N_FEATURES] {
        [
            self.mean_nni,
            self.sdnn,
            self.sdsd,
            self.nni_50,
            self.pnni_50,
            self.nni_20,
            self.pnni_20,
            self.rmssd,
            self.median_nni,
            self.range_nni,
            self.cvsd,
            self.cvnni,
            self.mean_hr,
            self.max_hr,
            self.min_hr,
            self.std_hr,
            self.lf,
            self.hf,
            self.lf_hf_ratio,
            self.lfnu,
            self.hfnu,
            self.total_power,
            self.vlf,
            self.csi,
            self.cvi,
        ]
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation; 0 for fewer than two values.
fn sample_std(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

fn median(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

struct Spectral {
    vlf: f64,
    lf: f64,
    hf: f64,
}

fn spectral_powers(nni: &[f64]) -> Option<Spectral> {
    let grid = spectral::resample_tachogram(nni, spectral::RESAMPLE_HZ);
    let psd = spectral::welch(&grid, spectral::RESAMPLE_HZ)?;
    Some(Spectral {
        vlf: psd.band_power(spectral::VLF_BAND),
        lf: psd.band_power(spectral::LF_BAND),
        hf: psd.band_power(spectral::HF_BAND),
    })
}

pub fn extract_features(nni: &NnIntervals) -> Result<FeatureVector, HrvError> {
    let x = nni.as_slice();
    let n = x.len();
    if n < 2 {
        return Err(HrvError::TooFewIntervals(n));
    }
    let mut flags = FeatureFlags::default();
    let diffs: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let n_diffs = diffs.len() as f64;

    let mean_nni = mean(x);
    let sdnn = sample_std(x);
    let sdsd = sample_std(&diffs);
    let nni_50 = diffs.iter().filter(|d| d.abs() > 50.0).count() as f64;
    let nni_20 = diffs.iter().filter(|d| d.abs() > 20.0).count() as f64;
    let rmssd = (diffs.iter().map(|d| d * d).sum::<f64>() / n_diffs).sqrt();
    let max_nni = x.iter().cloned().fold(f64::MIN, f64::max);
    let min_nni = x.iter().cloned().fold(f64::MAX, f64::min);

    let hr: Vec<f64> = x.iter().map(|v| 60_000.0 / v).collect();

    let duration_s = x[1..].iter().sum::<f64>() / 1000.0;
    flags.vlf_unresolved = duration_s < 1.0 / spectral::VLF_BAND.0;
    let Spectral { vlf, lf, hf } = spectral_powers(x).unwrap_or_else(|| {
        flags.spectrum_undefined = true;
        Spectral { vlf: 0.0, lf: 0.0, hf: 0.0 }
    });
    let lf_hf = lf + hf;

    let sd1 = sdsd / std::f64::consts::SQRT_2;
    let sd2 = (2.0 * sdnn * sdnn - 0.5 * sdsd * sdsd).max(0.0).sqrt();
    let (long_axis, transverse) = (4.0 * sd2, 4.0 * sd1);
    let csi = if transverse > 0.0 {
        long_axis / transverse
    } else {
        flags.poincare_degenerate = true;
        0.0
    };
    let area = long_axis * transverse;
    let cvi = if area > 0.0 {
        area.log10()
    } else {
        flags.poincare_degenerate = true;
        0.0
    };

    Ok(FeatureVector {
        mean_nni,
        sdnn,
        sdsd,
        nni_50,
        pnni_50: 100.0 * nni_50 / n_diffs,
        nni_20,
        pnni_20: 100.0 * nni_20 / n_diffs,
        rmssd,
        median_nni: median(x),
        range_nni: max_nni - min_nni,
        cvsd: rmssd / mean_nni,
        cvnni: sdnn / mean_nni,
        mean_hr: mean(&hr),
        max_hr: hr.iter().cloned().fold(f64::MIN, f64::max),
        min_hr: hr.iter().cloned().fold(f64::MAX, f64::min),
        std_hr: sample_std(&hr),
        lf,
        hf,
        lf_hf_ratio: if hf > 0.0 { lf / hf } else { 0.0 },
        lfnu: if lf_hf > 0.0 { 100.0 * lf / lf_hf } else { 0.0 },
        hfnu: if lf_hf > 0.0 { 100.0 * hf / lf_hf } else { 0.0 },
        total_power: vlf + lf + hf,
        vlf,
        csi,
        cvi,
        flags,
    })
}

/// ECG strip to features in one step.
pub fn features_from_ecg(signal: &EcgSignal) -> Result<FeatureVector, HrvError> {
    extract_features(&detect_r_peaks(signal)?)
}

/// Writes one row per feature vector under the 25 feature-name headers.
pub fn write_features_csv<W: Write>(writer: W, rows: &[FeatureVector]) -> Result<(), HrvError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(FEATURE_NAMES)?;
    for row in rows {
        w.write_record(row.to_array().iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
