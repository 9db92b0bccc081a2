use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, ManifestRow, SplitKind};
use super::{quantize_ms, sample_duration, synth_clip_placed, Placement, Waveform, CLIP_SECONDS};
use crate::error::{Error, Result};
use crate::taxonomy::{EventClass, EventLabel};
use crate::util::{derive_seed, rng_for, write_file};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AudiogenConfig {
    pub strong: usize,
    pub weak: usize,
    pub unlabeled: usize,
    pub validation: usize,
    /// Maximum number of events per clip (and so maximum polyphony).
    pub max_events: usize,
    pub background_db: f64,
    /// Event RMS level range in dBFS.
    pub event_level_db: (f64, f64),
}

impl Default for AudiogenConfig {
    fn default() -> Self {
        AudiogenConfig {
            strong: 200,
            weak: 50,
            unlabeled: 300,
            validation: 80,
            max_events: 3,
            background_db: -30.0,
            event_level_db: (-22.0, -10.0),
        }
    }
}

impl AudiogenConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, n) in [
            ("strong", self.strong),
            ("weak", self.weak),
            ("unlabeled", self.unlabeled),
            ("validation", self.validation),
        ] {
            if n < 1 {
                return Err(Error::invalid(format!("audiogen.{name} clip count must be >= 1")));
            }
        }
        if self.max_events < 1 {
            return Err(Error::invalid("audiogen.max_events must be >= 1"));
        }
        if !(self.event_level_db.0 < self.event_level_db.1) {
            return Err(Error::invalid("audiogen.event_level_db must be an increasing range"));
        }
        Ok(())
    }
}

/// Recipe for one clip; rendering is deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub clip_id: String,
    pub seed: u64,
    pub background_db: f64,
    pub placements: Vec<Placement>,
}

impl ClipSpec {
    pub fn render(&self) -> Waveform {
        synth_clip_placed(&self.clip_id, &self.placements, self.background_db, self.seed)
            .expect("generated placements fit the clip")
            .0
    }

    pub fn labels(&self) -> Vec<EventLabel> {
        self.placements
            .iter()
            .map(|p| EventLabel {
                clip_id: self.clip_id.clone(),
                klass: p.klass,
                onset: p.onset,
                offset: quantize_ms(p.onset + p.duration),
            })
            .collect()
    }

    pub fn classes(&self) -> Vec<EventClass> {
        let mut c: Vec<EventClass> = self.placements.iter().map(|p| p.klass).collect();
        c.sort();
        c.dedup();
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDataset {
    pub seed: u64,
    pub config: AudiogenConfig,
    pub strong: Vec<ClipSpec>,
    pub weak: Vec<ClipSpec>,
    pub unlabeled: Vec<ClipSpec>,
    pub validation: Vec<ClipSpec>,
}

const SPLITS: [(&str, u64); 4] = [("strong", 11), ("weak", 12), ("unlabeled", 13), ("validation", 14)];

fn make_clip(config: &AudiogenConfig, seed: u64, split: &str, split_id: u64, index: usize) -> ClipSpec {
    let clip_seed = derive_seed(seed, &[split_id, index as u64]);
    let mut rng = rng_for(clip_seed, &[0]);
    let count = rng.gen_range(1..=config.max_events);
    let placements = (0..count)
        .map(|k| {
            // the first event cycles through classes so every split covers all ten
            let klass = if k == 0 {
                EventClass::ALL[(index + split_id as usize) % EventClass::COUNT]
            } else {
                EventClass::ALL[rng.gen_range(0..EventClass::COUNT)]
            };
            let duration = sample_duration(klass, &mut rng);
            let onset = ((CLIP_SECONDS - duration) * rng.gen::<f64>() * 1000.0).floor() / 1000.0;
            let (lo, hi) = config.event_level_db;
            let level_db = (rng.gen_range(lo..hi) * 10.0).round() / 10.0;
            Placement {
                klass,
                onset,
                duration,
                level_db,
            }
        })
        .collect();
    ClipSpec {
        clip_id: format!("{split}_{index:04}"),
        seed: clip_seed,
        background_db: config.background_db,
        placements,
    }
}

/// Builds the four splits. Output is a pure function of `(config, seed)`.
pub fn generate_dataset(config: &AudiogenConfig, seed: u64) -> Result<GeneratedDataset> {
    config.validate()?;
    let counts = [config.strong, config.weak, config.unlabeled, config.validation];
    let mut splits = SPLITS.iter().zip(counts).map(|(&(name, id), n)| {
        (0..n).map(|i| make_clip(config, seed, name, id, i)).collect::<Vec<_>>()
    });
    Ok(GeneratedDataset {
        seed,
        config: config.clone(),
        strong: splits.next().expect("4 splits"),
        weak: splits.next().expect("4 splits"),
        unlabeled: splits.next().expect("4 splits"),
        validation: splits.next().expect("4 splits"),
    })
}

impl GeneratedDataset {
    pub fn strong_manifest(&self) -> DatasetManifest {
        strong_manifest("strong", &self.strong)
    }

    pub fn weak_manifest(&self) -> DatasetManifest {
        DatasetManifest::new(
            "weak",
            SplitKind::Weak,
            self.weak.iter().map(|c| ManifestRow::weak(c.clip_id.clone(), c.classes())).collect(),
        )
    }

    pub fn unlabeled_manifest(&self) -> DatasetManifest {
        DatasetManifest::new(
            "unlabeled",
            SplitKind::Unlabeled,
            self.unlabeled.iter().map(|c| ManifestRow::unlabeled(c.clip_id.clone())).collect(),
        )
    }

    pub fn validation_manifest(&self) -> DatasetManifest {
        strong_manifest("validation", &self.validation)
    }

    /// Hidden ground truth of the unlabeled split, for diagnostics only.
    pub fn unlabeled_truth(&self) -> DatasetManifest {
        strong_manifest("unlabeled_truth", &self.unlabeled)
    }

    pub fn manifests(&self) -> [DatasetManifest; 4] {
        [
            self.strong_manifest(),
            self.weak_manifest(),
            self.unlabeled_manifest(),
            self.validation_manifest(),
        ]
    }

    pub fn splits(&self) -> [(&'static str, &[ClipSpec]); 4] {
        [
            ("strong", &self.strong),
            ("weak", &self.weak),
            ("unlabeled", &self.unlabeled),
            ("validation", &self.validation),
        ]
    }

    pub fn clip(&self, clip_id: &str) -> Option<&ClipSpec> {
        self.splits()
            .into_iter()
            .flat_map(|(_, clips)| clips.iter())
            .find(|c| c.clip_id == clip_id)
    }

    /// Writes `audio/<split>/<clip>.wav`, `metadata/<split>.tsv`,
    /// `metadata/unlabeled_truth.tsv` and `metadata/dataset.json` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for (split, clips) in self.splits() {
            for clip in clips {
                clip.render()
                    .write_wav(&dir.join("audio").join(split).join(format!("{}.wav", clip.clip_id)))?;
            }
        }
        let meta = dir.join("metadata");
        for m in self.manifests() {
            m.write(&meta.join(format!("{}.tsv", m.split)))?;
        }
        self.unlabeled_truth().write(&meta.join("unlabeled_truth.tsv"))?;
        let info = serde_json::json!({ "seed": self.seed, "config": self.config });
        write_file(&meta.join("dataset.json"), serde_json::to_string_pretty(&info)?.as_bytes())
    }
}

fn strong_manifest(split: &str, clips: &[ClipSpec]) -> DatasetManifest {
    DatasetManifest::new(
        split,
        SplitKind::Strong,
        clips.iter().map(|c| ManifestRow::strong(c.clip_id.clone(), c.labels())).collect(),
    )
}
