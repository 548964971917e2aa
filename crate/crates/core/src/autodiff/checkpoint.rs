//! Parameter checkpoint serialization.
//!
//! Byte layout (all integers little-endian, documented in docs/FORMATS.md):
//!   magic  b"SRCKPT\0\x01"                      (8 bytes; last byte = version)
//!   count  u64
//!   per parameter, in registration order:
//!     name_len u32, name bytes (UTF-8)
//!     rank u32, shape u64 * rank
//!     data f64 * numel, row-major little-endian (8-byte floats regardless of
//!     the in-memory scalar type)

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::params::ParameterSet;
use super::tensor::Tensor;
use crate::num::Real;

pub const MAGIC: &[u8; 8] = b"SRCKPT\0\x01";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint magic/version in {0}")]
    BadMagic(String),
    #[error("corrupt checkpoint {file}: {detail}")]
    Corrupt { file: String, detail: String },
    #[error("checkpoint {file} is missing parameter {name}")]
    MissingParam { file: String, name: String },
    #[error("checkpoint {file}: parameter {name} has shape {got:?}, expected {want:?}")]
    ShapeMismatch {
        file: String,
        name: String,
        got: Vec<usize>,
        want: Vec<usize>,
    },
}

pub fn save<T: Real>(params: &ParameterSet<T>, path: &Path) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for (_, p) in params.iter() {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        let shape = p.value.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in p.value.data() {
            w.write_all(&v.to_f64().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Raw checkpoint contents: (name, shape, data) in file order.
pub fn load_raw(path: &Path) -> Result<Vec<(String, Vec<usize>, Vec<f64>)>, CheckpointError> {
    let fname = path.display().to_string();
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| CheckpointError::BadMagic(fname.clone()))?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic(fname));
    }
    let count = read_u64(&mut r, &fname)?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = read_u32(&mut r, &fname)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes).map_err(|e| CheckpointError::Corrupt {
            file: fname.clone(),
            detail: format!("truncated name: {e}"),
        })?;
        let name = String::from_utf8(name_bytes).map_err(|_| CheckpointError::Corrupt {
            file: fname.clone(),
            detail: "parameter name is not UTF-8".into(),
        })?;
        let rank = read_u32(&mut r, &fname)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r, &fname)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut buf = [0u8; 8];
        for _ in 0..numel {
            r.read_exact(&mut buf).map_err(|e| CheckpointError::Corrupt {
                file: fname.clone(),
                detail: format!("truncated data for {name}: {e}"),
            })?;
            data.push(f64::from_le_bytes(buf));
        }
        out.push((name, shape, data));
    }
    Ok(out)
}

/// Load a checkpoint into an existing parameter set (shapes must match).
pub fn load_into<T: Real>(params: &mut ParameterSet<T>, path: &Path) -> Result<(), CheckpointError> {
    let fname = path.display().to_string();
    let entries = load_raw(path)?;
    let mut by_name: std::collections::BTreeMap<String, (Vec<usize>, Vec<f64>)> = entries
        .into_iter()
        .map(|(n, s, d)| (n, (s, d)))
        .collect();
    let names: Vec<String> = params.iter().map(|(_, p)| p.name.clone()).collect();
    for name in names {
        let (shape, data) = by_name
            .remove(&name)
            .ok_or_else(|| CheckpointError::MissingParam {
                file: fname.clone(),
                name: name.clone(),
            })?;
        let p = params.by_name(&name).unwrap();
        if p.value.shape() != shape.as_slice() {
            return Err(CheckpointError::ShapeMismatch {
                file: fname,
                name,
                got: shape,
                want: p.value.shape().to_vec(),
            });
        }
        let id = params
            .iter()
            .find(|(_, q)| q.name == name)
            .map(|(id, _)| id)
            .unwrap();
        let t = Tensor::new(shape, data.iter().map(|&v| T::from_f64(v)).collect());
        params.get_mut(id).value = t;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read, file: &str) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|e| CheckpointError::Corrupt {
        file: file.to_string(),
        detail: format!("truncated u32: {e}"),
    })?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read, file: &str) -> Result<u64, CheckpointError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(|e| CheckpointError::Corrupt {
        file: file.to_string(),
        detail: format!("truncated u64: {e}"),
    })?;
    Ok(u64::from_le_bytes(buf))
}
