//! Turning a generated dataset into normalised training and validation
//! features.

use std::path::Path;

use ndarray::Array2;

use crate::audiogen::{DatasetManifest, GeneratedDataset, ManifestRow, SplitKind, Waveform};
use crate::error::{Error, Result};
use crate::frontend::{apply_normalizer, fit_normalizer, pad_or_truncate, FeatureCache, Frontend, FrontendConfig, LogMel, NormStats};
use crate::taxonomy::EventLabel;
use crate::training::{Supervision, TrainClip};
use crate::util::{read_to_string, write_file};

/// Features of every split, normalised with statistics fitted on the
/// training splits (strong, weak, unlabeled) and padded to a fixed length.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub strong: Vec<TrainClip>,
    pub weak: Vec<TrainClip>,
    pub unlabeled: Vec<(String, Array2<f32>)>,
    pub validation: Vec<(String, Array2<f32>)>,
    pub validation_truth: Vec<EventLabel>,
    pub norm: NormStats,
}

struct RawSplits {
    strong: Vec<(ManifestRow, LogMel)>,
    weak: Vec<(ManifestRow, LogMel)>,
    unlabeled: Vec<(ManifestRow, LogMel)>,
    validation: Vec<(ManifestRow, LogMel)>,
}

fn finish(raw: RawSplits, fe: &FrontendConfig, norm: Option<NormStats>) -> Result<PreparedData> {
    let norm = match norm {
        Some(n) => n,
        None => {
            let training: Vec<LogMel> = [&raw.strong, &raw.weak, &raw.unlabeled]
                .into_iter()
                .flat_map(|s| s.iter().map(|(_, f)| f.clone()))
                .collect();
            fit_normalizer(&training, fe.norm)?
        }
    };
    let prep = |f: &LogMel| pad_or_truncate(&apply_normalizer(f, &norm), fe.target_frames).values;
    let labeled = |rows: &[(ManifestRow, LogMel)], strong: bool| -> Vec<TrainClip> {
        rows.iter()
            .map(|(r, f)| TrainClip {
                clip_id: r.clip_id.clone(),
                features: prep(f),
                supervision: if strong {
                    Supervision::Strong(r.events.clone())
                } else {
                    Supervision::Weak(r.classes.clone())
                },
            })
            .collect()
    };
    Ok(PreparedData {
        strong: labeled(&raw.strong, true),
        weak: labeled(&raw.weak, false),
        unlabeled: raw.unlabeled.iter().map(|(r, f)| (r.clip_id.clone(), prep(f))).collect(),
        validation: raw.validation.iter().map(|(r, f)| (r.clip_id.clone(), prep(f))).collect(),
        validation_truth: raw.validation.iter().flat_map(|(r, _)| r.events.iter().cloned()).collect(),
        norm,
    })
}

impl PreparedData {
    /// Renders every clip in memory and extracts features.
    pub fn from_dataset(ds: &GeneratedDataset, fe: &FrontendConfig) -> Result<Self> {
        fe.validate()?;
        let frontend = Frontend::new(fe.mel_bins)?;
        let [strong, weak, unlabeled, validation] = ds.manifests();
        let extract = |m: &DatasetManifest| -> Result<Vec<(ManifestRow, LogMel)>> {
            m.rows
                .iter()
                .map(|r| {
                    let spec = ds.clip(&r.clip_id).expect("manifest rows come from the dataset");
                    Ok((r.clone(), frontend.log_mel(&spec.render())?))
                })
                .collect()
        };
        let raw = RawSplits {
            strong: extract(&strong)?,
            weak: extract(&weak)?,
            unlabeled: extract(&unlabeled)?,
            validation: extract(&validation)?,
        };
        finish(raw, fe, None)
    }

    /// Reads `metadata/*.tsv` and `audio/<split>/*.wav` under `data_dir`,
    /// caching raw log-mels under `features_dir/cache`. Normalisation stats
    /// come from `features_dir/norm.json` when present.
    pub fn from_dirs(data_dir: &Path, features_dir: &Path, fe: &FrontendConfig) -> Result<Self> {
        let (raw, _) = extract_raw(data_dir, features_dir, fe)?;
        let norm_path = features_dir.join("norm.json");
        let norm = if norm_path.exists() {
            Some(serde_json::from_str(&read_to_string(&norm_path)?).map_err(|e| Error::parse(&norm_path, e.to_string()))?)
        } else {
            None
        };
        finish(raw, fe, norm)
    }

    /// Stage-2 training set: strong, weak and pseudo-weak clips.
    pub fn stage2_clips(&self, pseudo: &DatasetManifest) -> Result<Vec<TrainClip>> {
        let mut out: Vec<TrainClip> = self.strong.iter().chain(&self.weak).cloned().collect();
        for row in &pseudo.rows {
            let (_, x) = self
                .unlabeled
                .iter()
                .find(|(id, _)| *id == row.clip_id)
                .ok_or_else(|| Error::invalid(format!("pseudo-labeled clip {} is not in the unlabeled split", row.clip_id)))?;
            out.push(TrainClip {
                clip_id: row.clip_id.clone(),
                features: x.clone(),
                supervision: Supervision::Weak(row.classes.clone()),
            });
        }
        Ok(out)
    }

    /// Stage-1 training set: strong and weak clips.
    pub fn stage1_clips(&self) -> Vec<TrainClip> {
        self.strong.iter().chain(&self.weak).cloned().collect()
    }
}

fn load_manifests(data_dir: &Path) -> Result<[DatasetManifest; 4]> {
    let meta = data_dir.join("metadata");
    Ok([
        DatasetManifest::load(&meta.join("strong.tsv"), "strong", SplitKind::Strong)?,
        DatasetManifest::load(&meta.join("weak.tsv"), "weak", SplitKind::Weak)?,
        DatasetManifest::load(&meta.join("unlabeled.tsv"), "unlabeled", SplitKind::Unlabeled)?,
        DatasetManifest::load(&meta.join("validation.tsv"), "validation", SplitKind::Strong)?,
    ])
}

fn extract_raw(data_dir: &Path, features_dir: &Path, fe: &FrontendConfig) -> Result<(RawSplits, usize)> {
    fe.validate()?;
    let frontend = Frontend::new(fe.mel_bins)?;
    let cache = FeatureCache::new(features_dir.join("cache"), fe.extraction_digest());
    let mut computed = 0;
    let mut extract = |m: &DatasetManifest| -> Result<Vec<(ManifestRow, LogMel)>> {
        m.rows
            .iter()
            .map(|r| {
                let wav = data_dir.join("audio").join(&m.split).join(r.filename());
                let f = cache.get_or_insert_with(&r.clip_id, || {
                    computed += 1;
                    frontend.log_mel(&Waveform::read_wav(&wav)?)
                })?;
                Ok((r.clone(), f))
            })
            .collect()
    };
    let [strong, weak, unlabeled, validation] = load_manifests(data_dir)?;
    let raw = RawSplits {
        strong: extract(&strong)?,
        weak: extract(&weak)?,
        unlabeled: extract(&unlabeled)?,
        validation: extract(&validation)?,
    };
    Ok((raw, computed))
}

/// Extracts (or reuses cached) log-mels for every clip, fits the
/// normaliser on the training splits and writes `norm.json`. Returns the
/// stats and the number of clips actually computed.
pub fn extract_features(data_dir: &Path, features_dir: &Path, fe: &FrontendConfig) -> Result<(NormStats, usize)> {
    let (raw, computed) = extract_raw(data_dir, features_dir, fe)?;
    let training: Vec<LogMel> = [&raw.strong, &raw.weak, &raw.unlabeled]
        .into_iter()
        .flat_map(|s| s.iter().map(|(_, f)| f.clone()))
        .collect();
    let norm = fit_normalizer(&training, fe.norm)?;
    write_file(&features_dir.join("norm.json"), serde_json::to_string_pretty(&norm)?.as_bytes())?;
    Ok((norm, computed))
}
