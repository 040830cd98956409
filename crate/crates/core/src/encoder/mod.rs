//! Toy dual encoder: one linear map per tower over sparse token features.

mod loss;
mod train;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binio::{checked_u32, Reader, Writer};
use crate::error::{Error, Result};
use crate::vector::{normalize_f64, EmbeddingVector};

pub use loss::{contrastive_loss, listwise_loss};
pub use train::{
    contrastive_objective, listwise_objective, train_encoders, DualGrad, DualParams, EncoderData,
    EncoderTrainConfig, EncoderTraining, FeatureTable, ListwiseGroup, Objective,
};

const MAGIC: &[u8; 4] = b"CREN";
const VERSION: u32 = 1;

/// Sorted unique token ids with positive weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFeatures {
    indices: Vec<u32>,
    weights: Vec<f32>,
}

impl SparseFeatures {
    pub fn new(indices: Vec<u32>, weights: Vec<f32>) -> Result<Self> {
        if indices.len() != weights.len() {
            return Err(Error::invalid(format!(
                "{} token ids but {} weights",
                indices.len(),
                weights.len()
            )));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("token ids must be strictly increasing"));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::invalid(format!("token weight {w} is not positive")));
        }
        Ok(Self { indices, weights })
    }

    /// Bag-of-tokens with repeated ids summed into their weight.
    pub fn from_counts(tokens: impl IntoIterator<Item = u32>) -> Self {
        let mut toks: Vec<u32> = tokens.into_iter().collect();
        toks.sort_unstable();
        let mut indices: Vec<u32> = Vec::new();
        let mut weights: Vec<f32> = Vec::new();
        for t in toks {
            if indices.last() == Some(&t) {
                *weights.last_mut().unwrap() += 1.0;
            } else {
                indices.push(t);
                weights.push(1.0);
            }
        }
        Self { indices, weights }
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub(crate) fn check_vocab(&self, vocab_size: usize) -> Result<()> {
        match self.indices.last() {
            Some(&t) if t as usize >= vocab_size => Err(Error::TokenOutOfRange { token: t, vocab_size }),
            _ => Ok(()),
        }
    }
}

/// `vocab_size x dim` row-major weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEncoder {
    vocab_size: usize,
    dim: usize,
    weight: Vec<f32>,
}

impl LinearEncoder {
    pub fn from_weights(vocab_size: usize, dim: usize, weight: Vec<f32>) -> Result<Self> {
        if vocab_size == 0 || dim == 0 {
            return Err(Error::invalid("vocabulary and dimension must be positive"));
        }
        if weight.len() != vocab_size * dim {
            return Err(Error::invalid(format!(
                "weight has {} entries, expected {}",
                weight.len(),
                vocab_size * dim
            )));
        }
        if weight.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("encoder weights must be finite"));
        }
        Ok(Self {
            vocab_size,
            dim,
            weight,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f32] {
        &self.weight
    }

    pub fn row(&self, token: u32) -> &[f32] {
        let t = token as usize;
        &self.weight[t * self.dim..(t + 1) * self.dim]
    }

    /// `normalize(Wᵀ f)`.
    pub fn encode(&self, f: &SparseFeatures) -> Result<EmbeddingVector> {
        f.check_vocab(self.vocab_size)?;
        let mut acc = vec![0.0f64; self.dim];
        for (&t, &w) in f.indices.iter().zip(&f.weights) {
            for (a, &x) in acc.iter_mut().zip(self.row(t)) {
                *a += w as f64 * x as f64;
            }
        }
        normalize_f64(&acc)
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut w = Writer::new(w);
        w.bytes(MAGIC)?;
        w.u32(VERSION)?;
        w.u32(checked_u32(self.vocab_size, "vocabulary size")?)?;
        w.u32(checked_u32(self.dim, "dimension")?)?;
        w.f32s(&self.weight)?;
        w.finish()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = Reader::new(r);
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let vocab_size = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let mut weight = Vec::new();
        for _ in 0..vocab_size {
            r.f32s_into(&mut weight, dim)?;
        }
        r.expect_eof()?;
        Self::from_weights(vocab_size, dim, weight).map_err(|e| Error::format(12, e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}
