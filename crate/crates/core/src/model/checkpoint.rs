use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelGraph, ParamSpec};
use crate::error::{Error, Result};
use crate::util::write_file;

const MAGIC: &[u8; 8] = b"MTLSEDCK";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config_digest: String,
    config: ModelConfig,
    seed: u64,
    step: u64,
    acc_present: bool,
    tensors: Vec<ParamSpec>,
}

/// A loaded checkpoint: the model plus its optimizer step counter.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: ModelGraph<f32>,
    pub step: u64,
}

/// Layout: magic, u32 version, u64 header length, JSON header, then every
/// tensor as row-major little-endian f32 in header order.
pub fn encode_checkpoint(model: &ModelGraph<f32>, step: u64) -> Vec<u8> {
    let header = Header {
        config_digest: model.config().digest(),
        config: model.config().clone(),
        seed: model.seed(),
        step,
        acc_present: model.has_acc(),
        tensors: model.params().specs().to_vec(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(20 + json.len() + 4 * model.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in model.params().data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn save_checkpoint(path: &Path, model: &ModelGraph<f32>, step: u64) -> Result<()> {
    write_file(path, &encode_checkpoint(model, step))
}

/// Reads a checkpoint. With `expected` set, a checkpoint written for a
/// different architecture is rejected.
pub fn load_checkpoint(path: &Path, expected: Option<&ModelConfig>) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, expected).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn decode_checkpoint(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<Checkpoint> {
    let bad = |m: &str| Error::Format(m.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body_start = 20usize.checked_add(header_len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[20..body_start])?;
    if header.config_digest != header.config.digest() {
        return Err(bad("header config digest does not match its config"));
    }
    if let Some(cfg) = expected {
        if cfg.digest() != header.config_digest {
            return Err(Error::invalid(format!(
                "checkpoint config digest {} does not match the configured model {}",
                header.config_digest,
                cfg.digest()
            )));
        }
    }
    let mut model = ModelGraph::<f32>::build(&header.config, header.seed)?;
    if !header.acc_present && model.has_acc() {
        model = model.strip_acc()?;
    }
    let names: Vec<(&str, &[usize])> = model.params().specs().iter().map(|s| (s.name.as_str(), &s.shape[..])).collect();
    let stored: Vec<(&str, &[usize])> = header.tensors.iter().map(|s| (s.name.as_str(), &s.shape[..])).collect();
    if names != stored {
        return Err(bad("tensor list does not match the architecture"));
    }
    let body = &bytes[body_start..];
    if body.len() != 4 * model.param_count() {
        return Err(bad("tensor data length mismatch"));
    }
    for (d, c) in model.params_mut().data_mut().iter_mut().zip(body.chunks_exact(4)) {
        *d = f32::from_le_bytes(c.try_into().expect("4 bytes"));
    }
    Ok(Checkpoint {
        model,
        step: header.step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_two_branch_and_stripped() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ModelConfig::tiny(16);
        let mut m = ModelGraph::<f32>::build(&cfg, 5).unwrap();
        m.params_mut().data_mut()[0] = 0.125;
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&p, &m, 17).unwrap();
        let c = load_checkpoint(&p, Some(&cfg)).unwrap();
        assert_eq!(c.step, 17);
        assert_eq!(c.model.params(), m.params());
        let s = m.strip_acc().unwrap();
        save_checkpoint(&p, &s, 3).unwrap();
        let c = load_checkpoint(&p, None).unwrap();
        assert!(!c.model.has_acc());
        assert_eq!(c.model.params(), s.params());
    }

    #[test]
    fn config_mismatch_rejected() {
        let cfg = ModelConfig::tiny(16);
        let bytes = encode_checkpoint(&ModelGraph::build(&cfg, 1).unwrap(), 0);
        let other = ModelConfig::tiny(32);
        assert!(matches!(decode_checkpoint(&bytes, Some(&other)), Err(Error::InvalidArgument(_))));
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1], None).is_err());
        assert!(decode_checkpoint(b"garbage", None).is_err());
    }
}
