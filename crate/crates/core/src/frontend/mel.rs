use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

/// Triangular mel filters with unit peak, stored sparsely as
/// `(first_bin, weights)`.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    filters: Vec<(usize, Vec<f64>)>,
    centers_hz: Vec<f64>,
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

impl MelFilterbank {
    pub fn new(mel_bins: usize, n_fft: usize, sample_rate: f64, f_min: f64, f_max: f64) -> Self {
        let n_freqs = n_fft / 2 + 1;
        let (m_lo, m_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
        let points: Vec<f64> = (0..mel_bins + 2)
            .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (mel_bins + 1) as f64))
            .collect();
        let bin_hz = sample_rate / n_fft as f64;
        let filters = (0..mel_bins)
            .map(|m| {
                let (lo, c, hi) = (points[m], points[m + 1], points[m + 2]);
                let first = ((lo / bin_hz).floor() as usize).min(n_freqs - 1);
                let last = ((hi / bin_hz).ceil() as usize).min(n_freqs - 1);
                let weights = (first..=last)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        let up = (f - lo) / (c - lo);
                        let down = (hi - f) / (hi - c);
                        up.min(down).max(0.0)
                    })
                    .collect();
                (first, weights)
            })
            .collect();
        MelFilterbank {
            filters,
            centers_hz: points[1..=mel_bins].to_vec(),
        }
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    pub fn apply(&self, spectrum: &[f64], out: &mut [f64]) {
        for ((first, w), o) in self.filters.iter().zip(out.iter_mut()) {
            *o = w.iter().zip(&spectrum[*first..]).map(|(a, b)| a * b).sum();
        }
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Mirror index into `[0, n)` without repeating the edge sample.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= n as isize {
        j = period - j;
    }
    j as usize
}

pub struct Stft {
    window: Vec<f64>,
    hop: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(window: usize, hop: usize) -> Self {
        Stft {
            window: hann(window),
            hop,
            fft: FftPlanner::new().plan_fft_forward(window),
        }
    }

    /// Number of frames under centered framing: one frame per hop start.
    pub fn frames(&self, samples: usize) -> usize {
        samples.div_ceil(self.hop)
    }

    /// Magnitude spectrogram, frames x (window/2 + 1). Frame `k` is centred on
    /// sample `k * hop` with reflect padding at both ends.
    pub fn magnitude(&self, x: &[f32]) -> Array2<f64> {
        let n_win = self.window.len();
        let half = (n_win / 2) as isize;
        let frames = self.frames(x.len());
        let n_freqs = n_win / 2 + 1;
        let mut out = Array2::zeros((frames, n_freqs));
        let mut buf = vec![Complex::new(0.0, 0.0); n_win];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for k in 0..frames {
            let start = (k * self.hop) as isize - half;
            for (i, b) in buf.iter_mut().enumerate() {
                let idx = reflect(start + i as isize, x.len());
                *b = Complex::new(x[idx] as f64 * self.window[i], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (o, b) in out.row_mut(k).iter_mut().zip(&buf) {
                *o = b.norm();
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_matches_numpy_reflect_mode() {
        // np.pad([0,1,2,3], 3, mode="reflect") -> [3,2,1,0,1,2,3,2,1,0]
        let got: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
    }

    #[test]
    fn mel_scale_round_trips() {
        for hz in [0.0, 100.0, 1000.0, 7999.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
    }

    #[test]
    fn every_filter_has_support() {
        let fb = MelFilterbank::new(128, 2048, 16000.0, 0.0, 8000.0);
        for (first, w) in &fb.filters {
            assert!(w.iter().any(|&v| v > 0.0), "empty filter at bin {first}");
        }
        assert!(fb.centers_hz().windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn hann_is_periodic() {
        let w = hann(8);
        assert_eq!(w[0], 0.0);
        assert!((w[4] - 1.0).abs() < 1e-15);
        assert!((w[1] - w[7]).abs() < 1e-15);
    }
}
