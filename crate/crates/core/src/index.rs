//! Exact top-K cosine retrieval.
//!
//! Brute-force scoring over a row-major matrix of unit vectors. Results are
//! sorted by cosine descending with ties broken by candidate id ascending,
//! which makes every search reproducible bit for bit.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binio::{checked_u32, Reader, Writer};
use crate::error::{Error, Result};
use crate::vector::{dot, normalize, EmbeddingVector};

const MAGIC: &[u8; 4] = b"CRIX";
const VERSION: u32 = 1;

/// One retrieved candidate. The calibrated fields are filled by the adapter.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    pub candidate_id: String,
    pub cosine: f64,
    pub logit: Option<f64>,
    pub probability: Option<f64>,
}

impl ScoredCandidate {
    pub fn new(candidate_id: impl Into<String>, cosine: f64) -> Self {
        Self {
            candidate_id: candidate_id.into(),
            cosine,
            logit: None,
            probability: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub query_id: String,
    pub hits: Vec<ScoredCandidate>,
}

impl SearchResult {
    pub fn candidate_ids(&self) -> impl Iterator<Item = &str> {
        self.hits.iter().map(|h| h.candidate_id.as_str())
    }
}

/// Ordering used for ranked lists: higher score first, then smaller id.
pub fn rank_order(a_score: f64, a_id: &str, b_score: f64, b_id: &str) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_id.cmp(b_id))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    ids: Vec<String>,
    matrix: Vec<f32>,
}

impl VectorIndex {
    /// Normalizes and stores the records in insertion order.
    pub fn build<I, S>(records: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f32>)>,
        S: Into<String>,
    {
        let mut dim = None;
        let mut ids = Vec::new();
        let mut matrix = Vec::new();
        let mut seen = HashSet::new();
        for (id, raw) in records {
            let id = id.into();
            let d = *dim.get_or_insert(raw.len());
            if raw.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: raw.len(),
                });
            }
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicateId(id));
            }
            let unit = normalize(&raw).map_err(|e| match e {
                Error::ZeroNorm => Error::invalid(format!("candidate {id} has zero norm")),
                other => other,
            })?;
            matrix.extend_from_slice(unit.as_slice());
            ids.push(id);
        }
        let dim = dim.ok_or_else(|| Error::invalid("cannot build an index from zero records"))?;
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        Ok(Self { dim, ids, matrix })
    }

    /// An index with no rows; every search returns nothing.
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            matrix: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    /// Cosine of `q` against every row, in storage order.
    pub fn score_all(&self, q: &EmbeddingVector) -> Result<Vec<f64>> {
        self.check_dim(q)?;
        Ok(self
            .matrix
            .chunks_exact(self.dim)
            .map(|row| dot(q.as_slice(), row).clamp(-1.0, 1.0))
            .collect())
    }

    fn check_dim(&self, q: &EmbeddingVector) -> Result<()> {
        if q.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: q.dim(),
            });
        }
        Ok(())
    }

    /// The exact `k` highest-cosine candidates for `q`.
    pub fn search(&self, query_id: &str, q: &EmbeddingVector, k: usize) -> Result<SearchResult> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        let scores = self.score_all(q)?;
        let mut order: Vec<usize> = (0..scores.len()).collect();
        let cmp = |&a: &usize, &b: &usize| rank_order(scores[a], &self.ids[a], scores[b], &self.ids[b]);
        let k = k.min(order.len());
        if k > 0 && k < order.len() {
            order.select_nth_unstable_by(k - 1, cmp);
            order.truncate(k);
        }
        order.sort_unstable_by(cmp);
        Ok(SearchResult {
            query_id: query_id.to_string(),
            hits: order
                .into_iter()
                .map(|i| ScoredCandidate::new(self.ids[i].clone(), scores[i]))
                .collect(),
        })
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut w = Writer::new(w);
        w.bytes(MAGIC)?;
        w.u32(VERSION)?;
        w.u32(checked_u32(self.dim, "dimension")?)?;
        w.u64(self.ids.len() as u64)?;
        for id in &self.ids {
            w.cstr(id)?;
        }
        w.f32s(&self.matrix)?;
        w.finish()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = Reader::new(r);
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let dim = r.u32()? as usize;
        let count = r.u64()? as usize;
        if dim == 0 {
            return Err(Error::format(8, "dimension must be positive"));
        }
        let mut ids = Vec::with_capacity(count.min(1 << 20));
        let mut seen = HashSet::new();
        for _ in 0..count {
            let at = r.offset();
            let id = r.cstr()?;
            if !seen.insert(id.clone()) {
                return Err(Error::format(at, format!("duplicate id {id}")));
            }
            ids.push(id);
        }
        let mut matrix = Vec::with_capacity(count.saturating_mul(dim).min(1 << 26));
        for _ in 0..count {
            r.f32s_into(&mut matrix, dim)?;
        }
        r.expect_eof()?;
        Ok(Self { dim, ids, matrix })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}
