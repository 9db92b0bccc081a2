use rand::Rng;
use serde::{Deserialize, Serialize};

use super::LogMel;
use crate::error::{Error, Result};
use crate::util::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSpec {
    pub count: usize,
    pub min_width: usize,
    pub max_width: usize,
}

impl MaskSpec {
    pub const NONE: MaskSpec = MaskSpec {
        count: 0,
        min_width: 0,
        max_width: 0,
    };
}

/// SpecAugment masks plus filter augmentation. Zero counts (or a zero gain
/// range) turn each part into an exact identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPolicy {
    pub enabled: bool,
    pub time_mask: MaskSpec,
    pub freq_mask: MaskSpec,
    /// Inclusive range for the number of random frequency bands.
    pub filter_bands: (usize, usize),
    /// Uniform gain range per band, dB.
    pub filter_gain_db: (f64, f64),
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            enabled: true,
            time_mask: MaskSpec {
                count: 1,
                min_width: 0,
                max_width: 20,
            },
            freq_mask: MaskSpec {
                count: 1,
                min_width: 0,
                max_width: 8,
            },
            filter_bands: (2, 5),
            filter_gain_db: (-6.0, 6.0),
        }
    }
}

impl AugmentPolicy {
    pub fn identity() -> Self {
        AugmentPolicy {
            enabled: false,
            time_mask: MaskSpec::NONE,
            freq_mask: MaskSpec::NONE,
            filter_bands: (2, 2),
            filter_gain_db: (0.0, 0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, m) in [("time_mask", self.time_mask), ("freq_mask", self.freq_mask)] {
            if m.min_width > m.max_width {
                return Err(Error::invalid(format!("augment.{name}: min_width > max_width")));
            }
        }
        if self.filter_bands.0 < 1 || self.filter_bands.0 > self.filter_bands.1 {
            return Err(Error::invalid("augment.filter_bands must be a range with lower bound >= 1"));
        }
        if self.filter_gain_db.0 > self.filter_gain_db.1 {
            return Err(Error::invalid("augment.filter_gain_db must be an increasing range"));
        }
        Ok(())
    }

    /// Filter augmentation followed by SpecAugment, seeded per call.
    pub fn apply(&self, f: &LogMel, seed: u64) -> LogMel {
        if !self.enabled {
            return f.clone();
        }
        let filtered = filter_augment(f, self, seed);
        spec_augment(&filtered, self, seed)
    }
}

fn draw_masks(rng: &mut impl Rng, spec: MaskSpec, len: usize) -> Vec<(usize, usize)> {
    (0..spec.count)
        .map(|_| {
            let width = rng.gen_range(spec.min_width..=spec.max_width).min(len);
            let start = rng.gen_range(0..=len - width);
            (start, width)
        })
        .collect()
}

/// Zeroes random blocks of consecutive frames and mel bins.
pub fn spec_augment(f: &LogMel, p: &AugmentPolicy, seed: u64) -> LogMel {
    let mut rng = rng_for(seed, &[0x5BEC]);
    let (frames, bins) = f.values.dim();
    let time = draw_masks(&mut rng, p.time_mask, frames);
    let freq = draw_masks(&mut rng, p.freq_mask, bins);
    let mut out = f.clone();
    for (start, width) in time {
        out.values.slice_mut(ndarray::s![start..start + width, ..]).fill(0.0);
    }
    for (start, width) in freq {
        out.values.slice_mut(ndarray::s![.., start..start + width]).fill(0.0);
    }
    out
}

/// Per-bin log-domain gain curve: random contiguous bands, each with a
/// uniform dB gain, linearly interpolated between neighbouring band centres.
pub(crate) fn filter_gains(bins: usize, p: &AugmentPolicy, seed: u64) -> Vec<f64> {
    let mut rng = rng_for(seed, &[0xF17E]);
    let n = rng.gen_range(p.filter_bands.0..=p.filter_bands.1).clamp(1, bins);
    let mut cuts: Vec<usize> = Vec::with_capacity(n + 1);
    cuts.push(0);
    let mut interior: Vec<usize> = Vec::new();
    while interior.len() < n - 1 {
        let c = rng.gen_range(1..bins);
        if !interior.contains(&c) {
            interior.push(c);
        }
    }
    interior.sort_unstable();
    cuts.extend(interior);
    cuts.push(bins);
    let (lo, hi) = p.filter_gain_db;
    let gains: Vec<f64> = (0..n)
        .map(|_| {
            let db = if lo == hi { lo } else { rng.gen_range(lo..hi) };
            db * std::f64::consts::LN_10 / 20.0
        })
        .collect();
    let centers: Vec<f64> = cuts.windows(2).map(|w| (w[0] + w[1]) as f64 / 2.0).collect();
    (0..bins)
        .map(|b| {
            let x = b as f64 + 0.5;
            if x <= centers[0] {
                return gains[0];
            }
            if x >= centers[n - 1] {
                return gains[n - 1];
            }
            let i = centers.iter().rposition(|&c| c <= x).expect("x above first centre");
            let t = (x - centers[i]) / (centers[i + 1] - centers[i]);
            gains[i] + t * (gains[i + 1] - gains[i])
        })
        .collect()
}

pub fn filter_augment(f: &LogMel, p: &AugmentPolicy, seed: u64) -> LogMel {
    let gains = filter_gains(f.mel_bins(), p, seed);
    let mut out = f.clone();
    for mut row in out.values.outer_iter_mut() {
        for (v, g) in row.iter_mut().zip(&gains) {
            *v = (*v as f64 + g) as f32;
        }
    }
    out
}
