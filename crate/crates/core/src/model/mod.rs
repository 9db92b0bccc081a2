//! Two-branch FDY-CRNN: a shared convolutional block feeding an SED branch
//! and an auxiliary ACC branch, with hand-written backward passes.

mod checkpoint;
mod gradcheck;
mod graph;
pub mod layers;
mod params;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use ndarray::{Array1, Array2, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint};
pub use gradcheck::{grad_check, grad_check_params, GradCheckReport};
pub use graph::{BranchGrads, ModelGraph, OutputGrads, Tape};
pub use layers::{fdy_conv, fdy_conv_backward, FdyGradients, FdyOutput, FdyParams};
pub use params::{ParamSpec, ParamStore};

use crate::error::{Error, Result};
use crate::taxonomy::EventClass;

/// Floating-point element type of a model. `f32` for training, `f64` for
/// gradient checking.
pub trait Real:
    Float + FromPrimitive + LinalgScalar + ScalarOperand + AddAssign + SubAssign + MulAssign + Sum + Debug + Display + Send + Sync + 'static
{
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Average-pooling factors along time and frequency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pool {
    pub time: usize,
    pub freq: usize,
}

impl Pool {
    pub const fn new(time: usize, freq: usize) -> Self {
        Pool { time, freq }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvBlockSpec {
    pub channels: usize,
    pub kernel: usize,
    pub pool: Pool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FdyBlockSpec {
    pub channels: usize,
    pub kernel: usize,
    pub pool: Pool,
    /// Number of basis kernels mixed by the frequency attention.
    pub basis: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub mel_bins: usize,
    pub shared_block: ConvBlockSpec,
    pub branch_blocks: Vec<FdyBlockSpec>,
    /// GRU units per direction.
    pub recurrent_hidden: usize,
    pub sed_classes: usize,
    /// Width of the ACC head; 0 builds the single-branch model.
    pub acc_classes: usize,
    pub attention_temperature: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::desk()
    }
}

fn fdy(channels: usize, time: usize, freq: usize, basis: usize) -> FdyBlockSpec {
    FdyBlockSpec {
        channels,
        kernel: 3,
        pool: Pool::new(time, freq),
        basis,
    }
}

impl ModelConfig {
    /// Default desk-scale network: 16-channel shared block, FDY blocks of
    /// 16/32/32 channels with four basis kernels, 32 GRU units per direction.
    pub fn desk() -> Self {
        ModelConfig {
            mel_bins: 128,
            shared_block: ConvBlockSpec {
                channels: 16,
                kernel: 3,
                pool: Pool::new(2, 2),
            },
            branch_blocks: vec![fdy(16, 2, 2, 4), fdy(32, 1, 2, 4), fdy(32, 1, 2, 4)],
            recurrent_hidden: 32,
            sed_classes: EventClass::COUNT,
            acc_classes: 4,
            attention_temperature: 1.0,
        }
    }

    /// Small enough for multi-seed sweeps and overfitting checks on one core.
    pub fn tiny(mel_bins: usize) -> Self {
        ModelConfig {
            mel_bins,
            shared_block: ConvBlockSpec {
                channels: 4,
                kernel: 3,
                pool: Pool::new(2, 2),
            },
            branch_blocks: vec![fdy(8, 2, 2, 2), fdy(8, 1, 2, 2)],
            recurrent_hidden: 12,
            sed_classes: EventClass::COUNT,
            acc_classes: 4,
            attention_temperature: 1.0,
        }
    }

    /// Single-branch tagger encoder: wider channels, one basis kernel per block.
    pub fn tagger(mel_bins: usize) -> Self {
        ModelConfig {
            mel_bins,
            shared_block: ConvBlockSpec {
                channels: 8,
                kernel: 3,
                pool: Pool::new(2, 2),
            },
            branch_blocks: vec![fdy(16, 2, 2, 1), fdy(16, 1, 2, 1)],
            recurrent_hidden: 16,
            sed_classes: EventClass::COUNT,
            acc_classes: 0,
            attention_temperature: 1.0,
        }
    }

    /// Closer to full-size widths; far too slow for desk experiments.
    pub fn paper_scale() -> Self {
        ModelConfig {
            mel_bins: 128,
            shared_block: ConvBlockSpec {
                channels: 32,
                kernel: 3,
                pool: Pool::new(2, 2),
            },
            branch_blocks: vec![
                fdy(64, 2, 2, 4),
                fdy(128, 1, 2, 4),
                fdy(256, 1, 2, 4),
                fdy(256, 1, 2, 4),
            ],
            recurrent_hidden: 128,
            sed_classes: EventClass::COUNT,
            acc_classes: 4,
            attention_temperature: 1.0,
        }
    }

    pub fn preset(name: &str, mel_bins: usize) -> Result<Self> {
        let mut c = match name {
            "desk" => ModelConfig::desk(),
            "tiny" => ModelConfig::tiny(mel_bins),
            "tagger" => ModelConfig::tagger(mel_bins),
            "paper" => ModelConfig::paper_scale(),
            other => return Err(Error::invalid(format!("unknown model preset {other:?}"))),
        };
        c.mel_bins = mel_bins;
        Ok(c)
    }

    pub fn single_branch(&self) -> Self {
        ModelConfig {
            acc_classes: 0,
            ..self.clone()
        }
    }

    pub fn has_acc(&self) -> bool {
        self.acc_classes > 0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.mel_bins < 1 {
            return bad("model.mel_bins must be >= 1".into());
        }
        if self.sed_classes < 1 {
            return bad("model.sed_classes must be >= 1".into());
        }
        if self.recurrent_hidden < 1 {
            return bad("model.recurrent_hidden must be >= 1".into());
        }
        if !(self.attention_temperature.is_finite() && self.attention_temperature > 0.0) {
            return bad("model.attention_temperature must be finite and > 0".into());
        }
        let mut freq = self.mel_bins;
        let blocks = std::iter::once((self.shared_block.channels, self.shared_block.kernel, self.shared_block.pool, 1))
            .chain(self.branch_blocks.iter().map(|b| (b.channels, b.kernel, b.pool, b.basis)));
        for (i, (channels, kernel, pool, basis)) in blocks.enumerate() {
            if channels < 1 {
                return bad(format!("model block {i}: channels must be >= 1"));
            }
            if kernel % 2 == 0 {
                return bad(format!("model block {i}: kernel must be odd"));
            }
            if basis < 1 {
                return bad(format!("model block {i}: basis count K must be >= 1"));
            }
            if pool.time < 1 || pool.freq < 1 {
                return bad(format!("model block {i}: pooling factors must be >= 1"));
            }
            if pool.freq > freq {
                return bad(format!(
                    "model block {i}: pooling underflow, frequency pool {} exceeds {freq} remaining bins",
                    pool.freq
                ));
            }
            freq = freq.div_ceil(pool.freq);
        }
        Ok(())
    }

    /// Frequency bins left after all pooling.
    pub fn output_freq(&self) -> usize {
        self.pools().fold(self.mel_bins, |f, p| f.div_ceil(p.freq))
    }

    /// Frame count of the posteriors for an input of `frames` frames.
    pub fn output_frames(&self, frames: usize) -> usize {
        self.pools().fold(frames, |t, p| t.div_ceil(p.time))
    }

    pub fn time_pool_factor(&self) -> usize {
        self.pools().map(|p| p.time).product()
    }

    fn pools(&self) -> impl Iterator<Item = Pool> + '_ {
        std::iter::once(self.shared_block.pool).chain(self.branch_blocks.iter().map(|b| b.pool))
    }

    /// Stable identifier of the architecture, stored in checkpoints.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        crate::util::sha256_hex(json.as_bytes())[..16].to_string()
    }
}

/// Frame- and clip-level class probabilities for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Posteriors {
    pub sed_frame: Array2<f64>,
    pub sed_clip: Array1<f64>,
    pub acc_frame: Option<Array2<f64>>,
    pub acc_clip: Option<Array1<f64>>,
}

impl Posteriors {
    pub fn frames(&self) -> usize {
        self.sed_frame.nrows()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for c in [ModelConfig::desk(), ModelConfig::tiny(32), ModelConfig::tagger(64), ModelConfig::paper_scale()] {
            c.validate().unwrap();
        }
    }

    #[test]
    fn desk_pooling_arithmetic() {
        let c = ModelConfig::desk();
        assert_eq!(c.time_pool_factor(), 4);
        assert_eq!(c.output_frames(625), 157);
        assert_eq!(c.output_freq(), 8);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = ModelConfig::tiny(16);
        c.branch_blocks[0].basis = 0;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::tiny(16);
        c.branch_blocks[1].pool.freq = 64;
        assert!(c.validate().unwrap_err().to_string().contains("underflow"));
        let mut c = ModelConfig::tiny(16);
        c.shared_block.kernel = 4;
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let c = ModelConfig::desk();
        let s = toml::to_string(&c).unwrap();
        let back: ModelConfig = toml::from_str(&s).unwrap();
        assert_eq!(back, c);
        assert!(toml::from_str::<ModelConfig>("bogus = 1").is_err());
    }
}
