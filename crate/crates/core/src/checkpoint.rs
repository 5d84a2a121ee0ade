//! `TCCKPT1` parameter checkpoints.
//!
//! Little-endian layout:
//!
//! ```text
//! "TCCKPT1"                       7 bytes
//! entry count                     u32
//! per entry:
//!   name length                   u16
//!   name                          UTF-8 bytes
//!   rank                          u8
//!   dims                          rank x u32
//!   data                          product(dims) x f32
//! CRC32 of all preceding bytes    u32
//! ```

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"TCCKPT1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a TCCKPT1 checkpoint")]
    BadMagic,
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Crc { stored: u32, computed: u32 },
    #[error("{0} trailing bytes after checksum")]
    Trailing(usize),
    #[error("malformed entry: {0}")]
    Entry(String),
}

pub fn encode_checkpoint(params: &ParamStore<f32>) -> Result<Vec<u8>, CheckpointError> {
    let mut buf = Vec::with_capacity(16 + params.element_count() * 4);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    let count = u32::try_from(params.len()).map_err(|_| CheckpointError::Entry("too many entries".into()))?;
    buf.extend_from_slice(&count.to_le_bytes());
    for (name, t) in params.iter() {
        let name_len = u16::try_from(name.len())
            .map_err(|_| CheckpointError::Entry(format!("name too long: {name}")))?;
        let rank = u8::try_from(t.rank())
            .map_err(|_| CheckpointError::Entry(format!("rank too large: {name}")))?;
        buf.extend_from_slice(&name_len.to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| CheckpointError::Entry(format!("dim too large: {name}")))?;
            buf.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated(self.pos))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], CheckpointError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParamStore<f32>, CheckpointError> {
    if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < CHECKPOINT_MAGIC.len() + 8 {
        return Err(CheckpointError::Truncated(bytes.len()));
    }
    let mut c = Cursor {
        bytes,
        pos: CHECKPOINT_MAGIC.len(),
    };
    let count = u32::from_le_bytes(c.array()?);
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(c.array()?) as usize;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|e| CheckpointError::Entry(format!("name is not UTF-8: {e}")))?
            .to_owned();
        let rank = c.array::<1>()?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(c.array()?) as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| CheckpointError::Entry(format!("{name}: shape overflow")))?;
        let raw = c.take(n.checked_mul(4).ok_or(CheckpointError::Truncated(c.pos))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| CheckpointError::Entry(e.to_string()))?;
        if store.index_of(&name).is_some() {
            return Err(CheckpointError::Entry(format!("duplicate entry {name}")));
        }
        store.insert(name, t);
    }
    let body_end = c.pos;
    let stored = u32::from_le_bytes(c.array()?);
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(CheckpointError::Crc { stored, computed });
    }
    if c.pos != bytes.len() {
        return Err(CheckpointError::Trailing(bytes.len() - c.pos));
    }
    Ok(store)
}

pub fn save_checkpoint(path: &Path, params: &ParamStore<f32>) -> Result<(), CheckpointError> {
    let bytes = encode_checkpoint(params)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore<f32>, CheckpointError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}
