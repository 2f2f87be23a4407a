//! Binary checkpoint codec.
//!
//! Layout, all integers unsigned 32-bit little-endian:
//!
//! ```text
//! magic "PAIRRL01" (8 bytes)
//! tensor count
//! per tensor: name length, name (UTF-8), rank, dims..., payload (f32 LE)
//! ```
//!
//! Values are stored as `f32` regardless of the in-memory precision; loading
//! widens back to `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"PAIRRL01";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic/version: expected {expected:?}, got {got:?}")]
    Magic { expected: String, got: String },
    #[error("truncated checkpoint: {0}")]
    Truncated(String),
    #[error("trailing bytes after last tensor")]
    TrailingBytes,
    #[error("invalid tensor entry: {0}")]
    Invalid(String),
}

pub fn save_checkpoint(
    path: &Path,
    tensors: &[(&str, &Tensor)],
) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &x in t.data() {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|_| CheckpointError::Truncated(what.to_string()))?;
    Ok(u32::from_le_bytes(buf))
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| CheckpointError::Truncated("magic".into()))?;
    if &magic != MAGIC {
        return Err(CheckpointError::Magic {
            expected: String::from_utf8_lossy(MAGIC).into_owned(),
            got: String::from_utf8_lossy(&magic).into_owned(),
        });
    }
    let count = read_u32(&mut r, "tensor count")?;
    let mut out = Vec::with_capacity(count as usize);
    for i in 0..count {
        let name_len = read_u32(&mut r, "name length")? as usize;
        if name_len > 1 << 16 {
            return Err(CheckpointError::Invalid(format!("name length {name_len}")));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)
            .map_err(|_| CheckpointError::Truncated(format!("name of tensor {i}")))?;
        let name = String::from_utf8(name)
            .map_err(|e| CheckpointError::Invalid(format!("name utf8: {e}")))?;
        let rank = read_u32(&mut r, "rank")? as usize;
        if rank > 8 {
            return Err(CheckpointError::Invalid(format!("rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r, "dim")? as usize);
        }
        let len: usize = shape.iter().product();
        if len > 1 << 28 {
            return Err(CheckpointError::Invalid(format!("tensor too large: {len}")));
        }
        let mut payload = vec![0u8; len * 4];
        r.read_exact(&mut payload)
            .map_err(|_| CheckpointError::Truncated(format!("payload of {name}")))?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let t = Tensor::from_vec(&shape, data)
            .map_err(|e| CheckpointError::Invalid(format!("{name}: {e}")))?;
        out.push((name, t));
    }
    let mut tail = [0u8; 1];
    match r.read(&mut tail)? {
        0 => Ok(out),
        _ => Err(CheckpointError::TrailingBytes),
    }
}
