//! `CSCK` checkpoint files, little-endian:
//!
//! ```text
//! magic "CSCK" | version u16 | count u32 |
//!   count × (name_len u16 | name | ndim u8 | ndim × u32 | f32 values)
//! ```
//!
//! Gradients are not stored.

use sha2::{Digest, Sha256};
use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use crate::error::{CsclError, Result};
use crate::math::NamedTensor;

pub const CSCK_MAGIC: [u8; 4] = *b"CSCK";
pub const CSCK_VERSION: u16 = 1;

pub fn write_checkpoint<W: Write>(tensors: &[NamedTensor<f32>], mut sink: W) -> Result<usize> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&CSCK_MAGIC);
    buf.extend_from_slice(&CSCK_VERSION.to_le_bytes());
    let count = u32::try_from(tensors.len())
        .map_err(|_| CsclError::Checkpoint("too many tensors".into()))?;
    buf.extend_from_slice(&count.to_le_bytes());
    for t in tensors {
        if let Some(v) = t.values.iter().find(|v| !v.is_finite()) {
            return Err(CsclError::NonFinite(format!("tensor {} ({v})", t.name)));
        }
        let name = t.name.as_bytes();
        let len = u16::try_from(name.len())
            .map_err(|_| CsclError::Checkpoint(format!("tensor name too long: {}", t.name)))?;
        let ndim = u8::try_from(t.dims.len())
            .map_err(|_| CsclError::Checkpoint(format!("tensor {}: too many dims", t.name)))?;
        if t.dims.iter().product::<usize>() != t.values.len() {
            return Err(CsclError::Checkpoint(format!(
                "tensor {}: dims/values mismatch",
                t.name
            )));
        }
        buf.extend_from_slice(&len.to_le_bytes());
        buf.extend_from_slice(name);
        buf.push(ndim);
        for &d in &t.dims {
            let d = u32::try_from(d).map_err(|_| CsclError::Checkpoint("dim overflow".into()))?;
            buf.extend_from_slice(&d.to_le_bytes());
        }
        for v in &t.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    sink.write_all(&buf)?;
    sink.flush()?;
    Ok(buf.len())
}

pub fn read_checkpoint<R: Read>(mut source: R) -> Result<Vec<NamedTensor<f32>>> {
    let mut take = |n: usize, what: &'static str| -> Result<Vec<u8>> {
        let mut out = Vec::new();
        let got = (&mut source).take(n as u64).read_to_end(&mut out)?;
        if got < n {
            return Err(CsclError::Truncated(what));
        }
        Ok(out)
    };
    let magic: [u8; 4] = take(4, "checkpoint magic")?.try_into().unwrap();
    if magic != CSCK_MAGIC {
        return Err(CsclError::BadMagic {
            expected: CSCK_MAGIC,
            found: magic,
        });
    }
    let version = u16::from_le_bytes(take(2, "checkpoint version")?.try_into().unwrap());
    if version != CSCK_VERSION {
        return Err(CsclError::Version {
            expected: CSCK_VERSION,
            found: version,
        });
    }
    let count = u32::from_le_bytes(take(4, "tensor count")?.try_into().unwrap()) as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = u16::from_le_bytes(take(2, "tensor name length")?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(len, "tensor name")?)
            .map_err(|_| CsclError::Checkpoint("tensor name is not UTF-8".into()))?;
        let ndim = take(1, "tensor rank")?[0] as usize;
        let dims: Vec<usize> = take(4 * ndim, "tensor dims")?
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let numel: usize = dims.iter().product();
        let values = take(4 * numel, "tensor values")?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push(NamedTensor::new(name, dims, values)?);
    }
    Ok(out)
}

pub fn write_checkpoint_file(
    tensors: &[NamedTensor<f32>],
    path: impl AsRef<Path>,
) -> Result<usize> {
    write_checkpoint(tensors, BufWriter::new(File::create(path)?))
}

pub fn read_checkpoint_file(path: impl AsRef<Path>) -> Result<Vec<NamedTensor<f32>>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| match e.kind() {
        ErrorKind::NotFound => CsclError::Checkpoint(format!("{} not found", path.display())),
        _ => CsclError::Io(e),
    })?;
    read_checkpoint(BufReader::new(f))
}

/// SHA-256 over tensor names, dims and value bits, as lowercase hex.
pub fn tensors_checksum(tensors: &[NamedTensor<f32>]) -> String {
    let mut h = Sha256::new();
    for t in tensors {
        h.update((t.name.len() as u64).to_le_bytes());
        h.update(t.name.as_bytes());
        for &d in &t.dims {
            h.update((d as u64).to_le_bytes());
        }
        for v in &t.values {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
