//! Binary checkpoint: magic, `u32` version, `u64` header length, JSON header
//! (config, provenance, tensor shapes), then every tensor as little-endian
//! `f32` in row-major order.

use std::io::{Read, Write};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::LmConfig;
use crate::error::{LmError, Result};
use crate::model::{param_shapes, Model};
use crate::train::{Provenance, TrainedLm};

pub const MAGIC: &[u8; 8] = b"SURPRLM\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    shape: [usize; 2],
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: LmConfig,
    provenance: Provenance,
    tensors: Vec<TensorInfo>,
}

pub fn save<W: Write>(lm: &TrainedLm, mut w: W) -> Result<()> {
    let shapes = param_shapes(lm.config());
    let header = Header {
        version: VERSION,
        config: lm.config().clone(),
        provenance: lm.provenance.clone(),
        tensors: shapes
            .iter()
            .map(|(name, (r, c))| TensorInfo {
                name: name.clone(),
                shape: [*r, *c],
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    let mut buf = Vec::new();
    for p in &lm.model.params {
        buf.clear();
        for x in p.iter() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load<R: Read>(mut r: R) -> Result<TrainedLm> {
    let bad = |m: &str| LmError::Checkpoint(m.to_string());
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
    if &magic != MAGIC {
        return Err(bad("not a model checkpoint"));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(LmError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let len = u64::from_le_bytes(b8) as usize;
    if len > 1 << 24 {
        return Err(bad("header too large"));
    }
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    header.config.validate()?;
    let expected = param_shapes(&header.config);
    if expected.len() != header.tensors.len()
        || expected
            .iter()
            .zip(&header.tensors)
            .any(|((n, (a, b)), t)| *n != t.name || [*a, *b] != t.shape)
    {
        return Err(bad("tensor table does not match the config"));
    }
    let mut params = Vec::with_capacity(expected.len());
    for (_, (rows, cols)) in &expected {
        let mut bytes = vec![0u8; rows * cols * 4];
        r.read_exact(&mut bytes).map_err(|_| bad("truncated tensor data"))?;
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        params.push(Array2::from_shape_vec((*rows, *cols), data).expect("sized above"));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes after tensor data"));
    }
    Ok(TrainedLm {
        model: Model {
            config: header.config,
            params,
        },
        provenance: header.provenance,
    })
}
