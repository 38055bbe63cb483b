//! Versioned checkpoint container for [`VelocityParams`]: a JSON header
//! (shapes, hyperparameters, seed, training metadata) followed by the
//! tensor payloads as little-endian `f64` in declaration order.
//! Round-trips are bit-exact.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FieldShape, Tensors, VelocityParams, PARAMS_VERSION};

const MAGIC: &[u8; 4] = b"FMCK";

/// Training provenance stored alongside the weights.
#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
pub struct TrainMeta {
    pub target_id: Option<String>,
    pub seed: Option<u64>,
    pub n_steps: Option<usize>,
    pub final_loss: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    shape: FieldShape,
    tensors: Vec<(String, usize)>,
    #[serde(default)]
    meta: TrainMeta,
}

pub fn save_checkpoint(p: &VelocityParams, meta: &TrainMeta, path: &Path) -> Result<()> {
    let header = Header {
        version: p.version,
        shape: p.shape,
        tensors: Tensors::layout(&p.shape),
        meta: meta.clone(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::InvalidInput(format!("header serialization: {e}")))?;
    let mut buf = Vec::with_capacity(header_json.len() + 16 + 8 * p.shape.param_count());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header_json);
    for s in p.tensors.slices() {
        for &v in s {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(VelocityParams, TrainMeta)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::CheckpointCorrupt("missing FMCK magic".into()));
    }
    let hlen = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + hlen {
        return Err(Error::CheckpointCorrupt("header extends past end of file".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[12..12 + hlen])
        .map_err(|e| Error::CheckpointCorrupt(format!("header parse: {e}")))?;
    if header.version != PARAMS_VERSION {
        return Err(Error::CheckpointVersion {
            found: header.version,
            expected: PARAMS_VERSION,
        });
    }
    let expected_layout = Tensors::layout(&header.shape);
    if header.tensors != expected_layout {
        return Err(Error::CheckpointShape(format!(
            "tensor layout does not match shape {:?}",
            header.shape
        )));
    }
    let count: usize = header.shape.param_count();
    let payload = &bytes[12 + hlen..];
    if payload.len() != 8 * count {
        return Err(Error::CheckpointCorrupt(format!(
            "payload is {} bytes, expected {}",
            payload.len(),
            8 * count
        )));
    }
    let sh = header.shape;
    let mut p = VelocityParams::zero(sh.d, sh.width, sh.n_blocks, sh.k_freqs);
    let mut off = 0usize;
    for s in p.tensors.slices_mut() {
        for v in s.iter_mut() {
            *v = f64::from_le_bytes(payload[off..off + 8].try_into().unwrap());
            off += 8;
        }
    }
    Ok((p, header.meta))
}

/// Guards a loaded checkpoint against a pipeline expecting dimension `d`.
pub fn ensure_dimension(p: &VelocityParams, d: usize) -> Result<()> {
    if p.shape.d != d {
        return Err(Error::CheckpointShape(format!(
            "checkpoint has d = {}, pipeline expects d = {}",
            p.shape.d, d
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::init_params;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.ckpt");
        let p = init_params(3, 12, 2, 4, 7).unwrap();
        let meta = TrainMeta { target_id: Some("banana".into()), seed: Some(7), ..Default::default() };
        save_checkpoint(&p, &meta, &path).unwrap();
        let (q, m2) = load_checkpoint(&path).unwrap();
        assert_eq!(p, q);
        assert_eq!(meta, m2);
        for (a, b) in p.tensors.slices().iter().zip(q.tensors.slices().iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn corrupted_header_is_a_clean_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.ckpt");
        let p = init_params(2, 8, 1, 2, 0).unwrap();
        save_checkpoint(&p, &TrainMeta::default(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[15] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::CheckpointCorrupt(_)) | Err(Error::CheckpointVersion { .. })
        ));
    }

    #[test]
    fn truncated_payload_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.ckpt");
        let p = init_params(2, 8, 1, 2, 0).unwrap();
        save_checkpoint(&p, &TrainMeta::default(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::CheckpointCorrupt(_))));
    }

    #[test]
    fn dimension_mismatch_surfaces_as_shape_error() {
        let p = init_params(2, 8, 1, 2, 0).unwrap();
        assert!(matches!(ensure_dimension(&p, 30), Err(Error::CheckpointShape(_))));
        assert!(ensure_dimension(&p, 2).is_ok());
    }
}
