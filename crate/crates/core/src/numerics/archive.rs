//! Named-tensor checkpoint container.
//!
//! Layout: the magic line `TARCH1\n`, then for each entry the name length
//! (u32 LE), the UTF-8 name, the rank (u32 LE), one u32 LE per extent, a
//! dtype tag byte (0 = f32, 1 = f64), and the raw little-endian values in
//! row-major order. Entries are packed without padding.

use std::fs;
use std::path::Path;

use super::{NumericsError, Tensor};

pub const MAGIC: &[u8] = b"TARCH1\n";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArchiveEntry {
    pub name: String,
    pub tensor: Tensor,
    pub dtype: DType,
}

impl ArchiveEntry {
    pub fn f64(name: impl Into<String>, tensor: Tensor) -> Self {
        Self {
            name: name.into(),
            tensor,
            dtype: DType::F64,
        }
    }
}

pub fn encode_archive(entries: &[ArchiveEntry]) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    for entry in entries {
        out.extend_from_slice(&(entry.name.len() as u32).to_le_bytes());
        out.extend_from_slice(entry.name.as_bytes());
        let shape = entry.tensor.shape();
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(entry.dtype.tag());
        for &v in entry.tensor.data() {
            match entry.dtype {
                DType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NumericsError> {
        if self.pos + n > self.bytes.len() {
            return Err(NumericsError::Archive(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NumericsError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode_archive(bytes: &[u8]) -> Result<Vec<ArchiveEntry>, NumericsError> {
    if !bytes.starts_with(MAGIC) {
        return Err(NumericsError::Archive("missing TARCH1 header".into()));
    }
    let mut r = Reader {
        bytes,
        pos: MAGIC.len(),
    };
    let mut entries = Vec::new();
    while r.pos < bytes.len() {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| NumericsError::Archive(format!("entry name is not UTF-8: {e}")))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let dtype = match r.take(1)?[0] {
            0 => DType::F32,
            1 => DType::F64,
            t => return Err(NumericsError::Archive(format!("unknown dtype tag {t} for {name}"))),
        };
        let n: usize = shape.iter().product();
        let data = match dtype {
            DType::F32 => r
                .take(n * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect(),
            DType::F64 => r
                .take(n * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect(),
        };
        entries.push(ArchiveEntry {
            name,
            tensor: Tensor::new(shape, data)?,
            dtype,
        });
    }
    Ok(entries)
}

pub fn write_archive(path: &Path, entries: &[ArchiveEntry]) -> Result<(), NumericsError> {
    fs::write(path, encode_archive(entries)).map_err(|e| NumericsError::Io(path.display().to_string(), e))
}

pub fn read_archive(path: &Path) -> Result<Vec<ArchiveEntry>, NumericsError> {
    let bytes = fs::read(path).map_err(|e| NumericsError::Io(path.display().to_string(), e))?;
    decode_archive(&bytes)
}
