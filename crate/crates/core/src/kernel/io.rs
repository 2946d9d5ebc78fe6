//! Kernel file formats.
//!
//! Binary layout, all little-endian:
//!
//! ```text
//! magic   [u8; 8]  "DLMKERN\0"
//! version u32      1
//! V       u32
//! K       u32
//! pad     u32      0
//! eps     f64
//! offsets [u64; V + 1]          row offset table into the edge array
//! edges   [(u32 id, f64 prob); offsets[V]]
//! nu      [f64; V]
//! ```
//!
//! The text form is the JSON encoding of [`KernelRepr`](super::KernelRepr);
//! floats round-trip exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{KernelError, TransitionKernel};

pub const MAGIC: [u8; 8] = *b"DLMKERN\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a kernel file (bad magic)")]
    BadMagic,
    #[error("unsupported kernel file version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt kernel file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub fn write_binary<W: Write>(kernel: &TransitionKernel, mut w: W) -> Result<(), FormatError> {
    let v = kernel.vocab_size();
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(v as u32).to_le_bytes())?;
    w.write_all(&(kernel.k() as u32).to_le_bytes())?;
    w.write_all(&0u32.to_le_bytes())?;
    w.write_all(&kernel.epsilon().to_le_bytes())?;
    let mut off = 0u64;
    w.write_all(&off.to_le_bytes())?;
    for i in 0..v {
        off += kernel.sparse_row(i).0.len() as u64;
        w.write_all(&off.to_le_bytes())?;
    }
    for i in 0..v {
        let (ids, ps) = kernel.sparse_row(i);
        for (&j, &p) in ids.iter().zip(ps) {
            w.write_all(&j.to_le_bytes())?;
            w.write_all(&p.to_le_bytes())?;
        }
    }
    for &x in kernel.nu() {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N], FormatError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            FormatError::Corrupt("truncated".into())
        } else {
            FormatError::Io(e)
        }
    })?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, FormatError> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, FormatError> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64, FormatError> {
    Ok(f64::from_le_bytes(read_array(r)?))
}

pub fn read_binary<R: Read>(mut r: R) -> Result<TransitionKernel, FormatError> {
    if read_array::<8, _>(&mut r)? != MAGIC {
        return Err(FormatError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let v = read_u32(&mut r)? as usize;
    let k = read_u32(&mut r)? as usize;
    let _pad = read_u32(&mut r)?;
    let eps = read_f64(&mut r)?;
    if v == 0 {
        return Err(FormatError::Corrupt("zero vocabulary".into()));
    }
    let mut offsets = Vec::with_capacity(v + 1);
    for _ in 0..=v {
        offsets.push(read_u64(&mut r)?);
    }
    if offsets[0] != 0 || offsets.windows(2).any(|w| w[1] < w[0]) {
        return Err(FormatError::Corrupt("row offsets not monotone".into()));
    }
    let mut rows = Vec::with_capacity(v);
    for i in 0..v {
        let len = (offsets[i + 1] - offsets[i]) as usize;
        if len > v {
            return Err(FormatError::Corrupt(format!("row {i} longer than vocabulary")));
        }
        let mut row = Vec::with_capacity(len);
        for _ in 0..len {
            let j = read_u32(&mut r)?;
            let p = read_f64(&mut r)?;
            row.push((j, p));
        }
        rows.push(row);
    }
    let mut nu = Vec::with_capacity(v);
    for _ in 0..v {
        nu.push(read_f64(&mut r)?);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(FormatError::Corrupt("trailing bytes".into()));
    }
    Ok(TransitionKernel::new(rows, eps, nu)?.with_k(k))
}

pub fn save_binary(kernel: &TransitionKernel, path: impl AsRef<Path>) -> Result<(), FormatError> {
    write_binary(kernel, BufWriter::new(File::create(path)?))
}

pub fn load_binary(path: impl AsRef<Path>) -> Result<TransitionKernel, FormatError> {
    read_binary(BufReader::new(File::open(path)?))
}

pub fn to_json(kernel: &TransitionKernel) -> Result<String, FormatError> {
    Ok(serde_json::to_string_pretty(kernel)?)
}

pub fn from_json(s: &str) -> Result<TransitionKernel, FormatError> {
    Ok(serde_json::from_str(s)?)
}

/// Loads either format, choosing by magic bytes.
pub fn load(path: impl AsRef<Path>) -> Result<TransitionKernel, FormatError> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(&MAGIC) {
        read_binary(&bytes[..])
    } else {
        from_json(std::str::from_utf8(&bytes).map_err(|e| FormatError::Corrupt(e.to_string()))?)
    }
}
