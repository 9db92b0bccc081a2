//! Log-mel features, dataset normalization and spectrogram augmentation.

mod augment;
mod cache;
mod mel;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use augment::{filter_augment, spec_augment, AugmentPolicy, MaskSpec};
pub use cache::FeatureCache;
pub use mel::{hz_to_mel, mel_to_hz, MelFilterbank, Stft};

use crate::audiogen::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

pub const WINDOW: usize = 2048;
pub const HOP: usize = 256;
pub const LOG_FLOOR: f64 = 1e-10;
pub const STD_EPSILON: f64 = 1e-8;

/// Frames x mel-bins log-mel matrix with its framing metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMel {
    pub values: Array2<f32>,
    pub hop: usize,
    pub window: usize,
    pub sample_rate: u32,
}

impl LogMel {
    pub fn new(values: Array2<f32>) -> Self {
        LogMel {
            values,
            hop: HOP,
            window: WINDOW,
            sample_rate: SAMPLE_RATE,
        }
    }

    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn mel_bins(&self) -> usize {
        self.values.ncols()
    }

    /// Seconds between consecutive frames.
    pub fn hop_seconds(&self) -> f64 {
        self.hop as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    Global,
    PerBin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontendConfig {
    pub mel_bins: usize,
    pub norm: NormMode,
    /// Frames every clip is padded or truncated to.
    pub target_frames: usize,
    pub augment: AugmentPolicy,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig {
            mel_bins: 128,
            norm: NormMode::Global,
            target_frames: 625,
            augment: AugmentPolicy::default(),
        }
    }
}

impl FrontendConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mel_bins < 8 {
            return Err(Error::invalid("frontend.mel_bins must be >= 8"));
        }
        if self.target_frames < 1 {
            return Err(Error::invalid("frontend.target_frames must be >= 1"));
        }
        self.augment.validate()
    }

    /// Digest of the settings that change extracted (pre-normalization)
    /// features; used as a cache key.
    pub fn extraction_digest(&self) -> String {
        let key = format!("mel={};win={WINDOW};hop={HOP};sr={SAMPLE_RATE};floor={LOG_FLOOR}", self.mel_bins);
        crate::util::sha256_hex(key.as_bytes())[..16].to_string()
    }
}

/// Log-mel extractor holding the STFT plan and filterbank.
pub struct Frontend {
    stft: Stft,
    filterbank: MelFilterbank,
}

impl Frontend {
    pub fn new(mel_bins: usize) -> Result<Self> {
        if mel_bins < 8 {
            return Err(Error::invalid(format!("mel_bins {mel_bins} < 8")));
        }
        Ok(Frontend {
            stft: Stft::new(WINDOW, HOP),
            filterbank: MelFilterbank::new(mel_bins, WINDOW, SAMPLE_RATE as f64, 0.0, SAMPLE_RATE as f64 / 2.0),
        })
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    pub fn log_mel(&self, w: &Waveform) -> Result<LogMel> {
        if w.samples.is_empty() {
            return Err(Error::invalid("empty waveform"));
        }
        if w.sample_rate != SAMPLE_RATE {
            return Err(Error::invalid(format!(
                "sample rate {} Hz, expected {SAMPLE_RATE} Hz",
                w.sample_rate
            )));
        }
        let mag = self.stft.magnitude(&w.samples);
        let bins = self.filterbank.centers_hz().len();
        let mut values = Array2::zeros((mag.nrows(), bins));
        let mut mel = vec![0.0; bins];
        for (spec, mut row) in mag.outer_iter().zip(values.outer_iter_mut()) {
            self.filterbank.apply(spec.as_slice().expect("contiguous row"), &mut mel);
            for (o, m) in row.iter_mut().zip(&mel) {
                *o = (m + LOG_FLOOR).ln() as f32;
            }
        }
        Ok(LogMel::new(values))
    }
}

/// One-shot log-mel extraction: magnitude STFT (2048-sample periodic Hann,
/// hop 256, centered with reflect padding), 0-8 kHz mel filterbank, natural
/// log with a 1e-10 floor.
pub fn log_mel(w: &Waveform, mel_bins: usize) -> Result<LogMel> {
    Frontend::new(mel_bins)?.log_mel(w)
}

/// Normalization statistics. A single entry means one global scalar; one
/// entry per mel bin means per-bin normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn global(mean: f64, std: f64) -> Self {
        NormStats {
            mean: vec![mean],
            std: vec![std.max(STD_EPSILON)],
        }
    }

    fn at(&self, bin: usize) -> (f64, f64) {
        if self.mean.len() == 1 {
            (self.mean[0], self.std[0])
        } else {
            (self.mean[bin], self.std[bin])
        }
    }
}

/// Mergeable running moments (count, mean, sum of squared deviations).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(self, other: Moments) -> Moments {
        if self.count == 0 {
            return other;
        }
        if other.count == 0 {
            return self;
        }
        let n = (self.count + other.count) as f64;
        let d = other.mean - self.mean;
        Moments {
            count: self.count + other.count,
            mean: self.mean + d * other.count as f64 / n,
            m2: self.m2 + other.m2 + d * d * self.count as f64 * other.count as f64 / n,
        }
    }

    pub fn std(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).sqrt()
        }
    }
}

/// Population mean and standard deviation over every entry of every
/// training matrix (or per mel bin). The std is clamped to 1e-8.
pub fn fit_normalizer(training: &[LogMel], mode: NormMode) -> Result<NormStats> {
    let first = training.first().ok_or_else(|| Error::invalid("no training features to fit"))?;
    let bins = first.mel_bins();
    if training.iter().any(|f| f.mel_bins() != bins) {
        return Err(Error::Shape("training features disagree on mel bins".into()));
    }
    let per_matrix: Vec<Vec<Moments>> = training
        .iter()
        .map(|f| {
            let mut m = vec![Moments::default(); if mode == NormMode::Global { 1 } else { bins }];
            for row in f.values.outer_iter() {
                for (b, &v) in row.iter().enumerate() {
                    let slot = if mode == NormMode::Global { 0 } else { b };
                    m[slot].push(v as f64);
                }
            }
            m
        })
        .collect();
    let total = per_matrix
        .into_iter()
        .reduce(|a, b| a.into_iter().zip(b).map(|(x, y)| x.merge(y)).collect())
        .expect("nonempty");
    Ok(NormStats {
        mean: total.iter().map(|m| m.mean).collect(),
        std: total.iter().map(|m| m.std().max(STD_EPSILON)).collect(),
    })
}

pub fn apply_normalizer(f: &LogMel, s: &NormStats) -> LogMel {
    let mut out = f.clone();
    for mut row in out.values.outer_iter_mut() {
        for (b, v) in row.iter_mut().enumerate() {
            let (m, sd) = s.at(b);
            *v = ((*v as f64 - m) / sd) as f32;
        }
    }
    out
}

/// Zero-pads (normalized-domain zero) or truncates to exactly
/// `target_frames` rows, keeping the prefix.
pub fn pad_or_truncate(f: &LogMel, target_frames: usize) -> LogMel {
    let frames = f.frames().min(target_frames);
    let mut values = Array2::zeros((target_frames, f.mel_bins()));
    values
        .slice_mut(ndarray::s![..frames, ..])
        .assign(&f.values.slice(ndarray::s![..frames, ..]));
    LogMel { values, ..f.clone() }
}

/// Global mean/std of a set of matrices, two-pass. Handy for reports.
pub fn global_moments(features: &[LogMel]) -> (f64, f64) {
    let n: usize = features.iter().map(|f| f.values.len()).sum();
    let mean = features.iter().map(|f| f.values.iter().map(|&v| v as f64).sum::<f64>()).sum::<f64>() / n as f64;
    let var = features
        .iter()
        .map(|f| f.values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>())
        .sum::<f64>()
        / n as f64;
    (mean, var.sqrt())
}
