//! Frequency-domain HRV: tachogram resampling and Welch power spectrum.

use rustfft::{num_complex::Complex, FftPlanner};

pub const RESAMPLE_HZ: f64 = 4.0;
pub const SEGMENT_LEN: usize = 256;
pub const VLF_BAND: (f64, f64) = (0.003, 0.04);
pub const LF_BAND: (f64, f64) = (0.04, 0.15);
pub const HF_BAND: (f64, f64) = (0.15, 0.40);

/// Shortest resampled series for which a spectrum is computed at all.
const MIN_GRID_POINTS: usize = 8;

/// Natural cubic spline through strictly increasing knots.
pub struct CubicSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    second: Vec<f64>,
}

impl CubicSpline {
    pub fn new(xs: &[f64], ys: &[f64]) -> Self {
        assert_eq!(xs.len(), ys.len());
        assert!(xs.len() >= 2);
        let n = xs.len();
        let mut second = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the interior equations; natural ends.
            let m = n - 2;
            let mut diag = vec![0.0; m];
            let mut upper = vec![0.0; m];
            let mut rhs = vec![0.0; m];
            for k in 0..m {
                let i = k + 1;
                let h0 = xs[i] - xs[i - 1];
                let h1 = xs[i + 1] - xs[i];
                diag[k] = 2.0 * (h0 + h1);
                upper[k] = h1;
                rhs[k] = 6.0 * ((ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0);
            }
            for k in 1..m {
                let lower = xs[k + 1] - xs[k];
                let w = lower / diag[k - 1];
                diag[k] -= w * upper[k - 1];
                rhs[k] -= w * rhs[k - 1];
            }
            second[m] = rhs[m - 1] / diag[m - 1];
            for k in (0..m - 1).rev() {
                second[k + 1] = (rhs[k] - upper[k] * second[k + 2]) / diag[k];
            }
        }
        CubicSpline { xs: xs.to_vec(), ys: ys.to_vec(), second }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        let i = match self.xs.partition_point(|&k| k <= x) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        let h = self.xs[i + 1] - self.xs[i];
        let a = (self.xs[i + 1] - x) / h;
        let b = (x - self.xs[i]) / h;
        a * self.ys[i]
            + b * self.ys[i + 1]
            + ((a * a * a - a) * self.second[i] + (b * b * b - b) * self.second[i + 1]) * h * h / 6.0
    }
}

/// Resamples the NN series (ms) onto a uniform grid in seconds starting at the
/// first beat, as deviations from the series mean. Grid points lie strictly
/// before the last beat time. A constant series resamples to exact zeros.
pub fn resample_tachogram(intervals_ms: &[f64], fs: f64) -> Vec<f64> {
    let mut times = Vec::with_capacity(intervals_ms.len());
    let mut acc = 0.0;
    for v in intervals_ms {
        acc += v / 1000.0;
        times.push(acc);
    }
    let t0 = times[0];
    for t in times.iter_mut() {
        *t -= t0;
    }
    let end = *times.last().unwrap();
    let mean = intervals_ms.iter().sum::<f64>() / intervals_ms.len() as f64;
    let centered: Vec<f64> = intervals_ms.iter().map(|v| v - mean).collect();
    let spline = CubicSpline::new(&times, &centered);
    let mut out = Vec::new();
    let mut k = 0usize;
    loop {
        let t = k as f64 / fs;
        if t >= end {
            break;
        }
        out.push(spline.eval(t));
        k += 1;
    }
    out
}

/// One-sided Welch power spectral density estimate.
#[derive(Debug, Clone)]
pub struct Psd {
    pub freqs: Vec<f64>,
    pub power: Vec<f64>,
    pub resolution: f64,
}

impl Psd {
    /// Rectangle-rule power in `[lo, hi)`.
    pub fn band_power(&self, (lo, hi): (f64, f64)) -> f64 {
        self.freqs
            .iter()
            .zip(&self.power)
            .filter(|(f, _)| **f >= lo && **f < hi)
            .map(|(_, p)| p)
            .sum::<f64>()
            * self.resolution
    }
}

fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos())
        .collect()
}

/// Welch estimate with Hann segments of `SEGMENT_LEN` points (or the whole
/// series when shorter), 50% overlap and per-segment mean removal.
pub fn welch(series: &[f64], fs: f64) -> Option<Psd> {
    if series.len() < MIN_GRID_POINTS {
        return None;
    }
    let seg = series.len().min(SEGMENT_LEN);
    let step = seg - seg / 2;
    let window = hann_periodic(seg);
    let window_energy: f64 = window.iter().map(|w| w * w).sum();
    let bins = seg / 2 + 1;

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(seg);
    let mut acc = vec![0.0; bins];
    let mut segments = 0usize;
    let mut buf = vec![Complex::new(0.0, 0.0); seg];
    let mut start = 0;
    while start + seg <= series.len() {
        let chunk = &series[start..start + seg];
        let mean = chunk.iter().sum::<f64>() / seg as f64;
        for ((b, x), w) in buf.iter_mut().zip(chunk).zip(&window) {
            *b = Complex::new((x - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (k, a) in acc.iter_mut().enumerate() {
            *a += buf[k].norm_sqr();
        }
        segments += 1;
        start += step;
    }

    let scale = 1.0 / (fs * window_energy * segments as f64);
    let power = acc
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let one_sided = k != 0 && !(seg % 2 == 0 && k == seg / 2);
            a * scale * if one_sided { 2.0 } else { 1.0 }
        })
        .collect();
    let resolution = fs / seg as f64;
    let freqs = (0..bins).map(|k| k as f64 * resolution).collect();
    Some(Psd { freqs, power, resolution })
}
