//! `TCEMB1` contextual embedding files.
//!
//! Little-endian layout: magic `"TCEMB1"` (6 bytes), `u32` dim, `u32`
//! sentence count, then per sentence a `u16` id length, the UTF-8 id, a
//! `u16` token count `L`, and `L x dim` `f32` values row-major. The file must
//! end exactly after the last sentence.

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use crate::tensor::Tensor;

pub const EMBEDDING_MAGIC: &[u8; 6] = b"TCEMB1";

#[derive(Debug, Error)]
pub enum EmbeddingFileError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a TCEMB1 file")]
    BadMagic,
    #[error("file length mismatch: {0}")]
    Length(String),
    #[error("sentence id is not UTF-8")]
    BadId,
    #[error("duplicate sentence id {0}")]
    DuplicateId(String),
    #[error("cannot encode: {0}")]
    Encode(String),
}

/// Per-sentence contextual vectors, one row per word token.
#[derive(Clone, Debug, PartialEq)]
pub struct ExternalEmbeddings {
    dim: usize,
    order: Vec<String>,
    vectors: HashMap<String, Tensor<f32>>,
}

impl ExternalEmbeddings {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            order: Vec::new(),
            vectors: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Tensor<f32>> {
        self.vectors.get(id)
    }

    /// Adds a `[L, dim]` block for `id`.
    pub fn insert(&mut self, id: impl Into<String>, vectors: Tensor<f32>) -> Result<(), EmbeddingFileError> {
        let id = id.into();
        let (_, d) = vectors
            .dims2()
            .map_err(|e| EmbeddingFileError::Encode(e.to_string()))?;
        if d != self.dim {
            return Err(EmbeddingFileError::Encode(format!(
                "{id}: dim {d}, file dim {}",
                self.dim
            )));
        }
        if self.vectors.contains_key(&id) {
            return Err(EmbeddingFileError::DuplicateId(id));
        }
        self.order.push(id.clone());
        self.vectors.insert(id, vectors);
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>, EmbeddingFileError> {
        let mut buf = EMBEDDING_MAGIC.to_vec();
        let to_u32 = |v: usize| u32::try_from(v).map_err(|_| EmbeddingFileError::Encode(format!("{v} exceeds u32")));
        let to_u16 = |v: usize| u16::try_from(v).map_err(|_| EmbeddingFileError::Encode(format!("{v} exceeds u16")));
        buf.extend_from_slice(&to_u32(self.dim)?.to_le_bytes());
        buf.extend_from_slice(&to_u32(self.order.len())?.to_le_bytes());
        for id in &self.order {
            let t = &self.vectors[id];
            buf.extend_from_slice(&to_u16(id.len())?.to_le_bytes());
            buf.extend_from_slice(id.as_bytes());
            buf.extend_from_slice(&to_u16(t.shape()[0])?.to_le_bytes());
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(buf)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, EmbeddingFileError> {
        let short = |at: usize| EmbeddingFileError::Length(format!("truncated at byte {at}"));
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8], EmbeddingFileError> {
            let end = pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or(short(pos))?;
            let out = &bytes[pos..end];
            pos = end;
            Ok(out)
        };
        if take(6).map_err(|_| EmbeddingFileError::BadMagic)? != EMBEDDING_MAGIC {
            return Err(EmbeddingFileError::BadMagic);
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize;
        let u16_at = |b: &[u8]| u16::from_le_bytes(b.try_into().expect("2 bytes")) as usize;
        let dim = u32_at(take(4)?);
        let count = u32_at(take(4)?);
        let mut out = Self::new(dim);
        for _ in 0..count {
            let id_len = u16_at(take(2)?);
            let id = std::str::from_utf8(take(id_len)?)
                .map_err(|_| EmbeddingFileError::BadId)?
                .to_owned();
            let len = u16_at(take(2)?);
            let bytes_needed = len
                .checked_mul(dim)
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| EmbeddingFileError::Length(format!("sentence {id}: {len} x {dim} overflows")))?;
            let raw = take(bytes_needed)?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            let t = Tensor::new(&[len, dim], data).expect("sized from header");
            out.insert(id, t)?;
        }
        if pos != bytes.len() {
            return Err(EmbeddingFileError::Length(format!(
                "{} bytes after the last sentence",
                bytes.len() - pos
            )));
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self, EmbeddingFileError> {
        Self::decode(&std::fs::read(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), EmbeddingFileError> {
        std::fs::write(path, self.encode()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ExternalEmbeddings {
        let mut e = ExternalEmbeddings::new(3);
        e.insert("s1", Tensor::new(&[2, 3], vec![0.5, -1.0, 2.0, 3.0, 4.0, 1e-3]).unwrap())
            .unwrap();
        e.insert("é2", Tensor::new(&[1, 3], vec![7.0, 8.0, 9.0]).unwrap()).unwrap();
        e
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let e = sample();
        let bytes = e.encode().unwrap();
        assert_eq!(&bytes[..6], b"TCEMB1");
        assert_eq!(bytes.len(), 6 + 8 + (2 + 2 + 2 + 24) + (2 + 3 + 2 + 12));
        assert_eq!(ExternalEmbeddings::decode(&bytes).unwrap(), e);
    }

    #[test]
    fn length_and_magic_validated() {
        let bytes = sample().encode().unwrap();
        assert!(matches!(
            ExternalEmbeddings::decode(&bytes[..bytes.len() - 1]),
            Err(EmbeddingFileError::Length(_))
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(ExternalEmbeddings::decode(&long), Err(EmbeddingFileError::Length(_))));
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(matches!(ExternalEmbeddings::decode(&bad), Err(EmbeddingFileError::BadMagic)));
        assert!(matches!(ExternalEmbeddings::decode(b"TC"), Err(EmbeddingFileError::BadMagic)));
    }

    #[test]
    fn rejects_wrong_dim_and_duplicates() {
        let mut e = sample();
        assert!(e.insert("x", Tensor::zeros(&[1, 4])).is_err());
        assert!(matches!(
            e.insert("s1", Tensor::zeros(&[1, 3])),
            Err(EmbeddingFileError::DuplicateId(_))
        ));
    }
}
