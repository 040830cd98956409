//! `CREM` embedding files.
//!
//! Layout (little-endian): magic `CREM`, version `u32`, dim `u32`, count `u64`,
//! then per record a NUL-terminated UTF-8 id followed by `dim` `f32` values.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binio::{checked_u32, Reader, Writer};
use crate::error::{Error, Result};
use crate::vector::{normalize, EmbeddingVector};

const MAGIC: &[u8; 4] = b"CREM";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: String,
    pub values: Vec<f32>,
}

impl EmbeddingRecord {
    pub fn new(id: impl Into<String>, values: Vec<f32>) -> Self {
        Self {
            id: id.into(),
            values,
        }
    }
}

pub fn write_embeddings_to<W: Write>(w: W, dim: usize, records: &[EmbeddingRecord]) -> Result<()> {
    let mut w = Writer::new(w);
    w.bytes(MAGIC)?;
    w.u32(VERSION)?;
    w.u32(checked_u32(dim, "dimension")?)?;
    w.u64(records.len() as u64)?;
    for r in records {
        if r.values.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: r.values.len(),
            });
        }
        w.cstr(&r.id)?;
        w.f32s(&r.values)?;
    }
    w.finish()?;
    Ok(())
}

pub fn write_embeddings(path: impl AsRef<Path>, dim: usize, records: &[EmbeddingRecord]) -> Result<()> {
    write_embeddings_to(BufWriter::new(File::create(path)?), dim, records)
}

/// Streams records one at a time.
pub struct EmbeddingReader<R: Read> {
    inner: Reader<R>,
    dim: usize,
    remaining: u64,
    done: bool,
}

impl<R: Read> EmbeddingReader<R> {
    pub fn new(r: R) -> Result<Self> {
        let mut inner = Reader::new(r);
        inner.magic(MAGIC)?;
        inner.version(VERSION)?;
        let dim = inner.u32()? as usize;
        let remaining = inner.u64()?;
        Ok(Self {
            inner,
            dim,
            remaining,
            done: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn remaining(&self) -> u64 {
        self.remaining
    }
}

impl<R: Read> Iterator for EmbeddingReader<R> {
    type Item = Result<EmbeddingRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        if self.remaining == 0 {
            self.done = true;
            return match self.inner.expect_eof() {
                Ok(()) => None,
                Err(e) => Some(Err(e)),
            };
        }
        let rec = (|| {
            let id = self.inner.cstr()?;
            let mut values = Vec::with_capacity(self.dim);
            self.inner.f32s_into(&mut values, self.dim)?;
            Ok(EmbeddingRecord { id, values })
        })();
        self.remaining -= 1;
        if rec.is_err() {
            self.done = true;
        }
        Some(rec)
    }
}

/// Reads a whole file; returns `(dim, records)`.
pub fn read_embeddings_from<R: Read>(r: R) -> Result<(usize, Vec<EmbeddingRecord>)> {
    let reader = EmbeddingReader::new(r)?;
    let dim = reader.dim();
    let records = reader.collect::<Result<Vec<_>>>()?;
    Ok((dim, records))
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<(usize, Vec<EmbeddingRecord>)> {
    read_embeddings_from(BufReader::new(File::open(path)?))
}

/// Normalized embeddings addressable by id.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingTable {
    ids: Vec<String>,
    vectors: Vec<EmbeddingVector>,
    position: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, v: EmbeddingVector) -> Result<()> {
        let id = id.into();
        if let Some(first) = self.vectors.first() {
            if first.dim() != v.dim() {
                return Err(Error::DimensionMismatch {
                    expected: first.dim(),
                    found: v.dim(),
                });
            }
        }
        if self.position.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        self.position.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.vectors.push(v);
        Ok(())
    }

    pub fn from_records(records: &[EmbeddingRecord]) -> Result<Self> {
        let mut t = Self::new();
        for r in records {
            t.insert(r.id.clone(), normalize(&r.values)?)?;
        }
        Ok(t)
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingVector> {
        self.position.get(id).map(|&i| &self.vectors[i])
    }

    pub fn require(&self, id: &str) -> Result<&EmbeddingVector> {
        self.get(id).ok_or_else(|| Error::MissingEmbedding(id.to_string()))
    }

    pub fn dim(&self) -> Option<usize> {
        self.vectors.first().map(EmbeddingVector::dim)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &EmbeddingVector)> {
        self.ids.iter().map(String::as_str).zip(&self.vectors)
    }

    pub fn to_records(&self) -> Vec<EmbeddingRecord> {
        self.iter()
            .map(|(id, v)| EmbeddingRecord::new(id, v.as_slice().to_vec()))
            .collect()
    }
}
