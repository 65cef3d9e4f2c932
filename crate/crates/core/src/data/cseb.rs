//! `.cseb` bag files, little-endian:
//!
//! ```text
//! magic "CSEB" | version u16 | stain u8 | pad u8 | slide_id_len u16 | slide_id
//! N u32 | D u32 | N × (row u32, col u32) | N·D × f32 (row-major)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use crate::error::{CsclError, Result};
use crate::math::Matrix;

use super::{PatchBag, StainId};

pub const CSEB_MAGIC: [u8; 4] = *b"CSEB";
pub const CSEB_VERSION: u16 = 1;

/// Serializes `bag`; returns the number of bytes written. The bag is checked
/// up front so an invalid bag writes nothing.
pub fn write_bag<W: Write>(bag: &PatchBag, mut sink: W) -> Result<usize> {
    bag.validate()?;
    let id = bag.slide_id.as_bytes();
    let id_len = u16::try_from(id.len())
        .map_err(|_| CsclError::invalid(format!("slide id longer than {} bytes", u16::MAX)))?;
    let (n, d) = bag.embeddings.shape();
    let n32 = u32::try_from(n).map_err(|_| CsclError::invalid("too many patches"))?;
    let d32 = u32::try_from(d).map_err(|_| CsclError::invalid("embedding too wide"))?;

    let mut buf = Vec::with_capacity(18 + id.len() + 8 * n + 4 * n * d);
    buf.extend_from_slice(&CSEB_MAGIC);
    buf.extend_from_slice(&CSEB_VERSION.to_le_bytes());
    buf.push(bag.stain.code());
    buf.push(0);
    buf.extend_from_slice(&id_len.to_le_bytes());
    buf.extend_from_slice(id);
    buf.extend_from_slice(&n32.to_le_bytes());
    buf.extend_from_slice(&d32.to_le_bytes());
    for &(r, c) in &bag.coords {
        buf.extend_from_slice(&r.to_le_bytes());
        buf.extend_from_slice(&c.to_le_bytes());
    }
    for v in bag.embeddings.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    sink.write_all(&buf)?;
    sink.flush()?;
    Ok(buf.len())
}

pub fn read_bag<R: Read>(source: R) -> Result<PatchBag> {
    let mut r = Reader(source);
    let magic: [u8; 4] = r.array("magic")?;
    if magic != CSEB_MAGIC {
        return Err(CsclError::BadMagic {
            expected: CSEB_MAGIC,
            found: magic,
        });
    }
    let version = u16::from_le_bytes(r.array("version")?);
    if version != CSEB_VERSION {
        return Err(CsclError::Version {
            expected: CSEB_VERSION,
            found: version,
        });
    }
    let [code, _pad] = r.array::<2>("stain")?;
    let stain = StainId::from_code(code)
        .ok_or_else(|| CsclError::Malformed(format!("unknown stain code {code}")))?;
    let id_len = u16::from_le_bytes(r.array("slide id length")?) as usize;
    let id_bytes = r.bytes(id_len, "slide id")?;
    let slide_id = String::from_utf8(id_bytes)
        .map_err(|_| CsclError::Malformed("slide id is not UTF-8".into()))?;
    let n = u32::from_le_bytes(r.array("N")?) as usize;
    let d = u32::from_le_bytes(r.array("D")?) as usize;

    let raw = r.bytes(8 * n, "coordinates")?;
    let coords = raw
        .chunks_exact(8)
        .map(|c| {
            (
                u32::from_le_bytes(c[..4].try_into().unwrap()),
                u32::from_le_bytes(c[4..].try_into().unwrap()),
            )
        })
        .collect();
    let raw = r.bytes(4 * n * d, "embeddings")?;
    let values = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let embeddings = Matrix::from_vec(n, d, values)?;
    PatchBag::new(slide_id, stain, coords, embeddings)
}

pub fn write_bag_file(bag: &PatchBag, path: impl AsRef<Path>) -> Result<usize> {
    bag.validate()?;
    let f = File::create(path)?;
    write_bag(bag, BufWriter::new(f))
}

pub fn read_bag_file(path: impl AsRef<Path>) -> Result<PatchBag> {
    read_bag(BufReader::new(File::open(path)?))
}

struct Reader<R>(R);

impl<R: Read> Reader<R> {
    fn array<const K: usize>(&mut self, what: &'static str) -> Result<[u8; K]> {
        let mut b = [0u8; K];
        self.fill(&mut b, what)?;
        Ok(b)
    }

    fn bytes(&mut self, len: usize, what: &'static str) -> Result<Vec<u8>> {
        // Grow incrementally so a corrupt length cannot force a huge allocation.
        let mut out = Vec::new();
        let mut chunk = [0u8; 64 * 1024];
        while out.len() < len {
            let take = (len - out.len()).min(chunk.len());
            self.fill(&mut chunk[..take], what)?;
            out.extend_from_slice(&chunk[..take]);
        }
        Ok(out)
    }

    fn fill(&mut self, buf: &mut [u8], what: &'static str) -> Result<()> {
        self.0.read_exact(buf).map_err(|e| match e.kind() {
            ErrorKind::UnexpectedEof => CsclError::Truncated(what),
            _ => CsclError::Io(e),
        })
    }
}
