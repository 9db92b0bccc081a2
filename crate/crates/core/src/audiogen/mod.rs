//! Deterministic synthetic soundscapes.
//!
//! Ten-second clips are a pink-noise background plus up to a few events
//! rendered from per-class archetypes ([`archetype`]). Everything is a pure
//! function of the seed, so a dataset can be regenerated instead of stored.

mod archetype;
mod dataset;
mod manifest;

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use archetype::{archetype, ArchetypeSpec, Family, LONG_DURATION, SHORT_DURATION};
pub use dataset::{generate_dataset, AudiogenConfig, ClipSpec, GeneratedDataset};
pub use manifest::{DatasetManifest, ManifestRow, SplitKind};

use crate::error::{Error, Result};
use crate::taxonomy::{EventClass, EventLabel};
use crate::util::rng_for;

pub const SAMPLE_RATE: u32 = 16_000;
pub const CLIP_SECONDS: f64 = 10.0;
pub const CLIP_SAMPLES: usize = 160_000;

const STREAM_EVENT: u64 = 1;
const STREAM_BACKGROUND: u64 = 2;
const STREAM_DURATION: u64 = 3;
const STREAM_LEVEL: u64 = 4;

/// Mono audio, samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        Waveform { samples, sample_rate }
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn write_wav(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut writer = hound::WavWriter::create(path, spec)?;
        for &s in &self.samples {
            writer.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
        }
        writer.finalize()?;
        Ok(())
    }

    pub fn read_wav(path: &Path) -> Result<Waveform> {
        let mut reader = hound::WavReader::open(path)?;
        let spec = reader.spec();
        if spec.channels != 1 || spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
            return Err(Error::Format(format!(
                "{}: expected 16-bit PCM mono",
                path.display()
            )));
        }
        let samples = reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32767.0))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Waveform::new(samples, spec.sample_rate))
    }
}

/// One event placed inside a clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub klass: EventClass,
    pub onset: f64,
    pub duration: f64,
    /// Event RMS level in dBFS.
    pub level_db: f64,
}

fn check_duration(duration: f64) -> Result<()> {
    if !(0.25..=10.0).contains(&duration) {
        return Err(Error::invalid(format!("event duration {duration} s outside [0.25, 10]")));
    }
    Ok(())
}

fn samples_for(seconds: f64) -> usize {
    (seconds * SAMPLE_RATE as f64).round() as usize
}

fn db_to_gain(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// Renders a single isolated event at −20 dBFS RMS.
pub fn synth_event(klass: EventClass, duration: f64, seed: u64) -> Result<Waveform> {
    check_duration(duration)?;
    let raw = render_event(klass, duration, seed, 0);
    let g = db_to_gain(-20.0);
    Ok(Waveform::new(
        raw.iter().map(|v| (v * g).clamp(-1.0, 1.0) as f32).collect(),
        SAMPLE_RATE,
    ))
}

fn render_event(klass: EventClass, duration: f64, seed: u64, index: u64) -> Vec<f64> {
    let mut rng = rng_for(seed, &[STREAM_EVENT, index]);
    archetype::render(&archetype(klass), samples_for(duration), SAMPLE_RATE as f64, &mut rng)
}

/// Unnormalized components of a clip mix, each spanning the full clip.
#[derive(Debug, Clone)]
pub struct Mix {
    pub background: Vec<f64>,
    pub events: Vec<Vec<f64>>,
}

impl Mix {
    pub fn sum(&self) -> Vec<f64> {
        let mut out = self.background.clone();
        for e in &self.events {
            out.iter_mut().zip(e).for_each(|(o, v)| *o += v);
        }
        out
    }
}

/// Builds the pre-normalization mix of background and placed events.
pub fn render_mix(placements: &[Placement], background_db: f64, seed: u64) -> Result<Mix> {
    for p in placements {
        check_duration(p.duration)?;
        if p.onset < 0.0 || p.onset + p.duration > CLIP_SECONDS + 1e-9 {
            return Err(Error::invalid(format!(
                "{} at {:.3}+{:.3} s extends past the {CLIP_SECONDS} s clip",
                p.klass, p.onset, p.duration
            )));
        }
    }
    let mut bg_rng = rng_for(seed, &[STREAM_BACKGROUND]);
    let g = db_to_gain(background_db);
    let background: Vec<f64> = archetype::pink_noise(CLIP_SAMPLES, &mut bg_rng)
        .into_iter()
        .map(|v| v * g)
        .collect();
    let events = placements
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let raw = render_event(p.klass, p.duration, seed, i as u64);
            let g = db_to_gain(p.level_db);
            let start = samples_for(p.onset);
            let mut full = vec![0.0; CLIP_SAMPLES];
            for (dst, v) in full[start..].iter_mut().zip(raw) {
                *dst = v * g;
            }
            full
        })
        .collect();
    Ok(Mix { background, events })
}

/// Peak ceiling applied after mixing.
const PEAK_CEILING: f64 = 0.95;

fn finalize(mix: Vec<f64>) -> Waveform {
    let peak = mix.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let g = if peak > PEAK_CEILING { PEAK_CEILING / peak } else { 1.0 };
    Waveform::new(
        mix.into_iter().map(|v| (v * g).clamp(-1.0, 1.0) as f32).collect(),
        SAMPLE_RATE,
    )
}

/// Renders a clip with explicit placements. Labels mirror the placements.
pub fn synth_clip_placed(
    clip_id: &str,
    placements: &[Placement],
    background_db: f64,
    seed: u64,
) -> Result<(Waveform, Vec<EventLabel>)> {
    let mix = render_mix(placements, background_db, seed)?;
    let labels = placements
        .iter()
        .map(|p| EventLabel::new(clip_id, p.klass, p.onset, p.onset + p.duration))
        .collect::<Result<Vec<_>>>()?;
    Ok((finalize(mix.sum()), labels))
}

/// Quantizes to whole milliseconds so TSV manifests round-trip exactly.
pub(crate) fn quantize_ms(seconds: f64) -> f64 {
    (seconds * 1000.0).round() / 1000.0
}

/// Samples a duration for `klass` from its archetype range.
pub(crate) fn sample_duration(klass: EventClass, rng: &mut impl Rng) -> f64 {
    let (lo, hi) = archetype(klass).duration;
    quantize_ms(rng.gen_range(lo..hi))
}

/// Renders a clip with events at the given onsets; durations and levels are
/// drawn from the seed.
pub fn synth_clip(
    clip_id: &str,
    events: &[(EventClass, f64)],
    background_db: f64,
    seed: u64,
) -> Result<(Waveform, Vec<EventLabel>)> {
    let placements: Vec<Placement> = events
        .iter()
        .enumerate()
        .map(|(i, &(klass, onset))| {
            let duration = sample_duration(klass, &mut rng_for(seed, &[STREAM_DURATION, i as u64]));
            let level_db = rng_for(seed, &[STREAM_LEVEL, i as u64]).gen_range(-22.0..-10.0);
            Placement {
                klass,
                onset,
                duration,
                level_db,
            }
        })
        .collect();
    synth_clip_placed(clip_id, &placements, background_db, seed)
}
