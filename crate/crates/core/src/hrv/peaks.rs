//! Minimal QRS detector: band-pass, derivative, squaring, moving-window
//! integration and an adaptive threshold with a refractory period.

use super::{EcgSignal, HrvError, NnIntervals};

const REFRACTORY_S: f64 = 0.250;
const INTEGRATION_S: f64 = 0.150;
const SEARCH_S: f64 = 0.100;
const MIN_INTERVAL_MS: f64 = 250.0;
const MAX_INTERVAL_MS: f64 = 3000.0;

/// Centered moving average with a window of `width` samples, truncated at the
/// edges.
fn moving_average(x: &[f64], width: usize) -> Vec<f64> {
    let n = x.len();
    if width <= 1 || n == 0 {
        return x.to_vec();
    }
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for v in x {
        prefix.push(prefix.last().unwrap() + v);
    }
    let half = width / 2;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + width - half).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

fn samples(seconds: f64, fs: f64) -> usize {
    ((seconds * fs).round() as usize).max(1)
}

/// Band-limited, baseline-free version of the signal (roughly 5 to 15 Hz).
fn band_pass(x: &[f64], fs: f64) -> Vec<f64> {
    let low = moving_average(x, samples(1.0 / 30.0, fs));
    let baseline = moving_average(&low, samples(1.0 / 5.0, fs));
    low.iter().zip(&baseline).map(|(a, b)| a - b).collect()
}

/// Returns the sample indices of detected R peaks.
pub fn detect_peak_indices(signal: &EcgSignal) -> Vec<usize> {
    let fs = signal.sample_rate();
    let x = signal.samples();
    let n = x.len();
    if n < 3 {
        return Vec::new();
    }

    let filtered = band_pass(x, fs);
    let mut energy = vec![0.0; n];
    for i in 1..n - 1 {
        let d = 0.5 * (filtered[i + 1] - filtered[i - 1]);
        energy[i] = d * d;
    }
    let integrated = moving_average(&energy, samples(INTEGRATION_S, fs));

    // Energy at rounding-noise level counts as no signal.
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e3 * f64::EPSILON * scale).powi(2);
    let warmup = samples(2.0, fs).min(n);
    let mut running_peak = integrated[..warmup].iter().cloned().fold(0.0, f64::max);
    if running_peak <= floor {
        return Vec::new();
    }

    let refractory = samples(REFRACTORY_S, fs);
    let mut candidates: Vec<(usize, f64)> = Vec::new();
    for i in 1..n - 1 {
        let v = integrated[i];
        let is_local_max = v > integrated[i - 1] && v >= integrated[i + 1];
        if !is_local_max || v <= floor || v <= 0.5 * running_peak {
            continue;
        }
        match candidates.last_mut() {
            Some(last) if i - last.0 < refractory => {
                if v > last.1 {
                    *last = (i, v);
                }
            }
            _ => candidates.push((i, v)),
        }
        running_peak = 0.875 * running_peak + 0.125 * v;
    }

    // Locate each R peak on the baseline-free raw trace near the energy peak.
    let baseline = moving_average(x, samples(0.2, fs));
    let search = samples(SEARCH_S, fs);
    let mut peaks: Vec<usize> = candidates
        .iter()
        .map(|&(i, _)| {
            let lo = i.saturating_sub(search);
            let hi = (i + search + 1).min(n);
            (lo..hi)
                .max_by(|&a, &b| {
                    (x[a] - baseline[a])
                        .partial_cmp(&(x[b] - baseline[b]))
                        .unwrap()
                        .then(b.cmp(&a))
                })
                .unwrap()
        })
        .collect();
    peaks.dedup();
    peaks
}

pub fn detect_r_peaks(signal: &EcgSignal) -> Result<NnIntervals, HrvError> {
    let peaks = detect_peak_indices(signal);
    if peaks.len() < 2 {
        return Err(HrvError::NoPeaks);
    }
    let ms_per_sample = 1000.0 / signal.sample_rate();
    let intervals: Vec<f64> = peaks
        .windows(2)
        .map(|w| (w[1] - w[0]) as f64 * ms_per_sample)
        .filter(|ms| (MIN_INTERVAL_MS..=MAX_INTERVAL_MS).contains(ms))
        .collect();
    if intervals.is_empty() {
        return Err(HrvError::NoPeaks);
    }
    NnIntervals::new(intervals)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn impulse_train(fs: f64, seconds: f64, period_s: f64) -> EcgSignal {
        let n = (fs * seconds) as usize;
        let mut x = vec![0.0; n];
        let step = (period_s * fs).round() as usize;
        let mut i = step / 2;
        while i < n {
            x[i] = 1.0;
            i += step;
        }
        EcgSignal::new(x, fs).unwrap()
    }

    /// Crude PQRST template: narrow R spike with Q/S dips plus broad P and T waves.
    fn beat(t: f64) -> f64 {
        let g = |mu: f64, sigma: f64, a: f64| a * (-(t - mu).powi(2) / (2.0 * sigma * sigma)).exp();
        g(-0.2, 0.025, 0.12) + g(-0.03, 0.008, -0.15) + g(0.0, 0.010, 1.0) + g(0.03, 0.008, -0.25)
            + g(0.28, 0.05, 0.3)
    }

    #[test]
    fn impulse_train_at_one_hertz_gives_one_second_intervals() {
        let nni = detect_r_peaks(&impulse_train(250.0, 15.0, 1.0)).unwrap();
        assert!(nni.len() >= 13);
        assert!(nni.as_slice().iter().all(|&v| v == 1000.0), "{:?}", nni.as_slice());
    }

    #[test]
    fn flat_signal_has_no_peaks() {
        let sig = EcgSignal::new(vec![0.3; 2500], 250.0).unwrap();
        assert!(matches!(detect_r_peaks(&sig), Err(HrvError::NoPeaks)));
    }

    #[test]
    fn template_beats_recover_planted_spacing() {
        use rand::{Rng, SeedableRng};
        let fs = 250.0;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut r_times = Vec::new();
        let mut t = 0.6;
        while t < 29.0 {
            r_times.push(t);
            t += 0.8 + rng.gen_range(-0.12..0.12);
        }
        let n = (30.0 * fs) as usize;
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let ti = i as f64 / fs;
                let wander = 0.2 * (2.0 * std::f64::consts::PI * 0.3 * ti).sin();
                r_times.iter().map(|&r| beat(ti - r)).sum::<f64>() + wander
            })
            .collect();
        let sig = EcgSignal::new(x, fs).unwrap();
        let nni = detect_r_peaks(&sig).unwrap();
        let planted: Vec<f64> = r_times.windows(2).map(|w| (w[1] - w[0]) * 1000.0).collect();
        assert_eq!(nni.len(), planted.len());
        for (got, want) in nni.as_slice().iter().zip(&planted) {
            assert!((got - want).abs() <= 4.0 + 1e-9, "got {got} want {want}");
        }
    }

    #[test]
    fn implausible_intervals_are_dropped() {
        // Impulses every 4 s: every interval exceeds the 3000 ms ceiling.
        let sig = impulse_train(250.0, 20.0, 4.0);
        assert!(matches!(detect_r_peaks(&sig), Err(HrvError::NoPeaks)));
    }
}
