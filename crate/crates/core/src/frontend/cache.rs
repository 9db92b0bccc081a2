use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::LogMel;
use crate::error::{Error, Result};
use crate::util::{sha256_hex, write_file};

const MAGIC: &[u8; 8] = b"MTLMEL01";

/// On-disk store of extracted (unnormalized) log-mel matrices, keyed by clip
/// id and extraction settings.
#[derive(Debug, Clone)]
pub struct FeatureCache {
    dir: PathBuf,
    config_digest: String,
}

impl FeatureCache {
    pub fn new(dir: impl Into<PathBuf>, config_digest: impl Into<String>) -> Self {
        FeatureCache {
            dir: dir.into(),
            config_digest: config_digest.into(),
        }
    }

    pub fn path_for(&self, clip_id: &str) -> PathBuf {
        let clip = &sha256_hex(clip_id.as_bytes())[..16];
        self.dir.join(format!("{clip}_{}.bin", self.config_digest))
    }

    pub fn store(&self, clip_id: &str, f: &LogMel) -> Result<()> {
        write_file(&self.path_for(clip_id), &encode(f))
    }

    /// `Ok(None)` when the clip has not been cached under these settings.
    pub fn load(&self, clip_id: &str) -> Result<Option<LogMel>> {
        let path = self.path_for(clip_id);
        match std::fs::read(&path) {
            Ok(bytes) => decode(&bytes, &path).map(Some),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(&path, e)),
        }
    }

    pub fn get_or_insert_with(&self, clip_id: &str, make: impl FnOnce() -> Result<LogMel>) -> Result<LogMel> {
        if let Some(f) = self.load(clip_id)? {
            return Ok(f);
        }
        let f = make()?;
        self.store(clip_id, &f)?;
        Ok(f)
    }
}

pub(crate) fn encode(f: &LogMel) -> Vec<u8> {
    let (frames, bins) = f.values.dim();
    let mut out = Vec::with_capacity(16 + 4 * frames * bins);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(frames as u32).to_le_bytes());
    out.extend_from_slice(&(bins as u32).to_le_bytes());
    for v in f.values.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub(crate) fn decode(bytes: &[u8], path: &Path) -> Result<LogMel> {
    let bad = |msg: &str| Error::Format(format!("{}: {msg}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a feature cache record"));
    }
    let frames = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let bins = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() != 4 * frames * bins {
        return Err(bad("truncated feature record"));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let values = Array2::from_shape_vec((frames, bins), data).map_err(|e| bad(&e.to_string()))?;
    Ok(LogMel::new(values))
}
