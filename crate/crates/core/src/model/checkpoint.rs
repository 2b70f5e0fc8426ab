//! Binary parameter file plus JSON sidecar.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"GVAE"  u32 version  u32 N  u32 K  u32 E1  u32 E  u32 depth
//! f64 × len for every tensor in declaration order
//! ```
//!
//! The sidecar (`<file>.json`) carries hyperparameters, seed and training
//! progress.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::{ModelDims, ModelParams};

pub const MAGIC: &[u8; 4] = b"GVAE";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub dims: ModelDims,
    pub students: usize,
    pub courses: usize,
    pub seed: u64,
    pub epochs_completed: usize,
    /// Training configuration as written by the trainer.
    pub hyperparameters: serde_json::Value,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

pub fn encode_params(params: &ModelParams) -> Vec<u8> {
    let dims = params.dims();
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(MAGIC);
    for v in [
        FORMAT_VERSION as usize,
        dims.nodes,
        dims.features,
        dims.hidden,
        dims.latent,
        dims.depth,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for (_, t) in params.named() {
        for v in t.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_params(bytes: &[u8]) -> Result<ModelParams> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("missing GVAE magic".into()));
    }
    let word = |i: usize| {
        let at = 4 + 4 * i;
        u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize
    };
    let version = word(0) as u32;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version}"
        )));
    }
    let dims = ModelDims {
        nodes: word(1),
        features: word(2),
        hidden: word(3),
        latent: word(4),
        depth: word(5),
    };
    dims.validate()
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut params = ModelParams::zeros(dims);
    let expected: usize = params
        .named()
        .iter()
        .map(|(_, t)| t.as_slice().len())
        .sum();
    let body = &bytes[HEADER_LEN..];
    if body.len() != expected * 8 {
        return Err(Error::Checkpoint(format!(
            "expected {} parameter bytes for {dims:?}, found {}",
            expected * 8,
            body.len()
        )));
    }
    let mut chunks = body.chunks_exact(8);
    for (_, t) in params.named_mut() {
        for v in t.as_mut_slice() {
            *v = f64::from_le_bytes(chunks.next().expect("length checked").try_into().expect("8 bytes"));
        }
    }
    Ok(params)
}

/// Write the parameter file and its sidecar.
pub fn save(path: &Path, params: &ModelParams, meta: &CheckpointMeta) -> Result<()> {
    let bytes = encode_params(params);
    write_atomic(path, |w| w.write_all(&bytes).map_err(|e| Error::io(path, e)))?;
    let sidecar = sidecar_path(path);
    let json = serde_json::to_string_pretty(meta)?;
    write_atomic(&sidecar, |w| {
        w.write_all(json.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| Error::io(&sidecar, e))
    })
}

pub fn load(path: &Path) -> Result<(ModelParams, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let params = decode_params(&bytes)?;
    let sidecar = sidecar_path(path);
    let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)?;
    if meta.dims != params.dims() {
        return Err(Error::Checkpoint(format!(
            "sidecar dims {:?} disagree with parameter file {:?}",
            meta.dims,
            params.dims()
        )));
    }
    Ok((params, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    #[test]
    fn header_layout() {
        let dims = ModelDims {
            nodes: 3,
            features: 2,
            hidden: 2,
            latent: 1,
            depth: 1,
        };
        let bytes = encode_params(&init_params(dims, 0).unwrap());
        assert_eq!(&bytes[..4], b"GVAE");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
        let tensors = 3 * 2 + 10 * 2 * 2 + 2 * 2 + 10 * 3;
        assert_eq!(bytes.len(), HEADER_LEN + 8 * tensors);
    }

    #[test]
    fn round_trip_is_exact() {
        let dims = ModelDims {
            depth: 2,
            ..ModelDims::new(9)
        };
        let p = init_params(dims, 3).unwrap();
        assert_eq!(decode_params(&encode_params(&p)).unwrap(), p);
    }

    #[test]
    fn rejects_corruption() {
        let p = init_params(ModelDims::new(4), 3).unwrap();
        let mut bytes = encode_params(&p);
        assert!(decode_params(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(decode_params(&bytes).is_err());
        let mut bytes = encode_params(&p);
        bytes[4] = 9;
        assert!(decode_params(&bytes).is_err());
    }

    #[test]
    fn save_and_load_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.gvae");
        let p = init_params(ModelDims::new(5), 1).unwrap();
        let meta = CheckpointMeta {
            format_version: FORMAT_VERSION,
            dims: p.dims(),
            students: 3,
            courses: 2,
            seed: 1,
            epochs_completed: 0,
            hyperparameters: serde_json::json!({"lr": 0.1}),
        };
        save(&path, &p, &meta).unwrap();
        assert!(sidecar_path(&path).exists());
        let (q, m) = load(&path).unwrap();
        assert_eq!(q, p);
        assert_eq!(m, meta);
    }
}
