//! Mini-batch training of the two encoder towers.
//!
//! Weights are kept as `f64` master copies while training and rounded to
//! `f32` when the encoders are returned.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::{contrastive_from_scores, listwise_from_scores};
use super::{LinearEncoder, SparseFeatures};
use crate::error::{Error, Result};
use crate::judgment::JudgedPair;
use crate::optim::Adam;

pub type FeatureTable = BTreeMap<String, SparseFeatures>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Contrastive,
    Listwise,
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "contrastive" => Ok(Objective::Contrastive),
            "listwise" => Ok(Objective::Listwise),
            _ => Err(Error::invalid(format!("unknown objective {s:?}"))),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Contrastive => "contrastive",
            Objective::Listwise => "listwise",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderTrainConfig {
    pub objective: Objective,
    pub tau: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub dim: usize,
}

impl Default for EncoderTrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Contrastive,
            tau: 0.05,
            batch_size: 32,
            epochs: 5,
            learning_rate: 0.01,
            seed: 0,
            dim: 16,
        }
    }
}

pub struct EncoderData<'a> {
    pub vocab_size: usize,
    pub queries: &'a FeatureTable,
    pub candidates: &'a FeatureTable,
    pub pairs: &'a [JudgedPair],
}

#[derive(Debug, Clone)]
pub struct EncoderTraining {
    pub query: LinearEncoder,
    pub candidate: LinearEncoder,
    /// Mean training loss of each epoch, in order.
    pub epoch_losses: Vec<f64>,
}

/// Both towers flattened: query weights first, then candidate weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DualParams {
    pub vocab_size: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl DualParams {
    /// Uniform in `[-1/√d, 1/√d]`, query tower drawn first.
    pub fn init(vocab_size: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (dim as f32).sqrt();
        let values = (0..2 * vocab_size * dim)
            .map(|_| rng.gen_range(-bound..=bound) as f64)
            .collect();
        Self {
            vocab_size,
            dim,
            values,
        }
    }

    fn tower_len(&self) -> usize {
        self.vocab_size * self.dim
    }

    pub fn query(&self) -> &[f64] {
        &self.values[..self.tower_len()]
    }

    pub fn candidate(&self) -> &[f64] {
        &self.values[self.tower_len()..]
    }

    pub fn to_encoders(&self) -> Result<(LinearEncoder, LinearEncoder)> {
        let cast = |w: &[f64]| w.iter().map(|&x| x as f32).collect::<Vec<_>>();
        Ok((
            LinearEncoder::from_weights(self.vocab_size, self.dim, cast(self.query()))?,
            LinearEncoder::from_weights(self.vocab_size, self.dim, cast(self.candidate()))?,
        ))
    }
}

/// Gradient laid out like [`DualParams::values`].
#[derive(Debug, Clone, PartialEq)]
pub struct DualGrad {
    pub values: Vec<f64>,
}

pub struct ListwiseGroup<'a> {
    pub query: &'a SparseFeatures,
    pub candidates: Vec<&'a SparseFeatures>,
    pub labels: Vec<f64>,
}

/// A tower output kept for backpropagation.
struct Embedded {
    unit: Vec<f64>,
    norm: f64,
}

fn embed(weights: &[f64], dim: usize, f: &SparseFeatures) -> Result<Embedded> {
    let mut acc = vec![0.0; dim];
    for (&t, &w) in f.indices().iter().zip(f.weights()) {
        let row = &weights[t as usize * dim..(t as usize + 1) * dim];
        for (a, x) in acc.iter_mut().zip(row) {
            *a += w as f64 * x;
        }
    }
    let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroNorm);
    }
    acc.iter_mut().for_each(|x| *x /= norm);
    Ok(Embedded { unit: acc, norm })
}

/// Pushes `dL/du` back through the normalization into the token rows.
fn backprop(grad: &mut [f64], dim: usize, f: &SparseFeatures, e: &Embedded, g_unit: &[f64]) {
    let proj: f64 = e.unit.iter().zip(g_unit).map(|(u, g)| u * g).sum();
    let g_raw: Vec<f64> = e
        .unit
        .iter()
        .zip(g_unit)
        .map(|(u, g)| (g - u * proj) / e.norm)
        .collect();
    for (&t, &w) in f.indices().iter().zip(f.weights()) {
        let row = &mut grad[t as usize * dim..(t as usize + 1) * dim];
        for (r, g) in row.iter_mut().zip(&g_raw) {
            *r += w as f64 * g;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Mean in-batch contrastive loss: for pair `i`, every other positive in the
/// batch is a negative.
pub fn contrastive_objective(
    params: &DualParams,
    batch: &[(&SparseFeatures, &SparseFeatures)],
    tau: f64,
) -> Result<(f64, DualGrad)> {
    let dim = params.dim;
    let n = params.vocab_size * dim;
    let b = batch.len();
    let mut grad = vec![0.0; 2 * n];
    if b == 0 {
        return Ok((0.0, DualGrad { values: grad }));
    }
    let qs = batch
        .iter()
        .map(|(q, _)| embed(params.query(), dim, q))
        .collect::<Result<Vec<_>>>()?;
    let ps = batch
        .iter()
        .map(|(_, p)| embed(params.candidate(), dim, p))
        .collect::<Result<Vec<_>>>()?;
    let mut g_q = vec![vec![0.0; dim]; b];
    let mut g_p = vec![vec![0.0; dim]; b];
    let mut total = 0.0;
    let mut scores = Vec::with_capacity(b);
    let mut gs = Vec::with_capacity(b);
    for i in 0..b {
        // Positive slot first, negatives in batch order.
        scores.clear();
        scores.push(dot(&qs[i].unit, &ps[i].unit));
        scores.extend((0..b).filter(|&j| j != i).map(|j| dot(&qs[i].unit, &ps[j].unit)));
        total += contrastive_from_scores(&scores, tau, Some(&mut gs));
        let cols = std::iter::once(i).chain((0..b).filter(|&j| j != i));
        for (slot, j) in cols.enumerate() {
            let d = gs[slot] / b as f64;
            axpy(&mut g_q[i], d, &ps[j].unit);
            axpy(&mut g_p[j], d, &qs[i].unit);
        }
    }
    let (gq, gc) = grad.split_at_mut(n);
    for i in 0..b {
        backprop(gq, dim, batch[i].0, &qs[i], &g_q[i]);
        backprop(gc, dim, batch[i].1, &ps[i], &g_p[i]);
    }
    Ok((total / b as f64, DualGrad { values: grad }))
}

/// Mean listwise softmax loss over query groups.
pub fn listwise_objective(
    params: &DualParams,
    groups: &[ListwiseGroup<'_>],
    tau: f64,
) -> Result<(f64, DualGrad)> {
    let dim = params.dim;
    let n = params.vocab_size * dim;
    let mut grad = vec![0.0; 2 * n];
    if groups.is_empty() {
        return Ok((0.0, DualGrad { values: grad }));
    }
    let scale = 1.0 / groups.len() as f64;
    let mut total = 0.0;
    let mut gs = Vec::new();
    for g in groups {
        let q = embed(params.query(), dim, g.query)?;
        let cs = g
            .candidates
            .iter()
            .map(|c| embed(params.candidate(), dim, c))
            .collect::<Result<Vec<_>>>()?;
        let scores: Vec<f64> = cs.iter().map(|c| dot(&q.unit, &c.unit)).collect();
        total += listwise_from_scores(&scores, &g.labels, tau, Some(&mut gs));
        let mut g_q = vec![0.0; dim];
        let (gq, gc) = grad.split_at_mut(n);
        for ((c, f), &d) in cs.iter().zip(&g.candidates).zip(&gs) {
            let d = d * scale;
            axpy(&mut g_q, d, &c.unit);
            let g_c: Vec<f64> = q.unit.iter().map(|u| d * u).collect();
            backprop(gc, dim, f, c, &g_c);
        }
        backprop(gq, dim, g.query, &q, &g_q);
    }
    Ok((total * scale, DualGrad { values: grad }))
}

fn lookup<'a>(table: &'a FeatureTable, id: &str, vocab: usize) -> Result<&'a SparseFeatures> {
    let f = table
        .get(id)
        .ok_or_else(|| Error::invalid(format!("no features for id {id}")))?;
    f.check_vocab(vocab)?;
    Ok(f)
}

/// Trains both towers with Adam. Preconditions are checked before any update.
pub fn train_encoders(config: &EncoderTrainConfig, data: &EncoderData<'_>) -> Result<EncoderTraining> {
    if !(config.tau > 0.0) {
        return Err(Error::invalid("tau must be positive"));
    }
    if config.dim == 0 || data.vocab_size == 0 {
        return Err(Error::invalid("dimension and vocabulary must be positive"));
    }
    if config.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let vocab = data.vocab_size;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = DualParams::init(vocab, config.dim, &mut rng);
    let mut adam = Adam::new(params.values.len(), config.learning_rate);
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    match config.objective {
        Objective::Contrastive => {
            if config.batch_size < 2 {
                return Err(Error::invalid("contrastive training needs batch_size >= 2"));
            }
            let examples = data
                .pairs
                .iter()
                .filter(|p| p.grade.is_positive())
                .map(|p| {
                    Ok((
                        lookup(data.queries, &p.query_id, vocab)?,
                        lookup(data.candidates, &p.candidate_id, vocab)?,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            if examples.len() < 2 {
                return Err(Error::invalid("contrastive training needs at least two positive pairs"));
            }
            let mut order: Vec<usize> = (0..examples.len()).collect();
            for _ in 0..config.epochs {
                order.shuffle(&mut rng);
                let (mut sum, mut count) = (0.0, 0usize);
                for chunk in order.chunks(config.batch_size) {
                    if chunk.len() < 2 {
                        continue;
                    }
                    let batch: Vec<_> = chunk.iter().map(|&i| examples[i]).collect();
                    let (loss, grad) = contrastive_objective(&params, &batch, config.tau)?;
                    adam.step(&mut params.values, &grad.values);
                    sum += loss * batch.len() as f64;
                    count += batch.len();
                }
                epoch_losses.push(sum / count.max(1) as f64);
            }
        }
        Objective::Listwise => {
            let mut by_query: BTreeMap<&str, Vec<&JudgedPair>> = BTreeMap::new();
            for p in data.pairs {
                by_query.entry(p.query_id.as_str()).or_default().push(p);
            }
            let mut groups = Vec::with_capacity(by_query.len());
            for (qid, pairs) in &by_query {
                if !pairs.iter().any(|p| p.grade.is_positive()) {
                    return Err(Error::invalid(format!("query {qid} has no positive candidate")));
                }
                groups.push(ListwiseGroup {
                    query: lookup(data.queries, qid, vocab)?,
                    candidates: pairs
                        .iter()
                        .map(|p| lookup(data.candidates, &p.candidate_id, vocab))
                        .collect::<Result<Vec<_>>>()?,
                    labels: pairs.iter().map(|p| p.grade.value()).collect(),
                });
            }
            if groups.is_empty() {
                return Err(Error::invalid("listwise training needs at least one query"));
            }
            let mut order: Vec<usize> = (0..groups.len()).collect();
            for _ in 0..config.epochs {
                order.shuffle(&mut rng);
                let (mut sum, mut count) = (0.0, 0usize);
                for chunk in order.chunks(config.batch_size) {
                    let batch: Vec<ListwiseGroup<'_>> = chunk
                        .iter()
                        .map(|&i| ListwiseGroup {
                            query: groups[i].query,
                            candidates: groups[i].candidates.clone(),
                            labels: groups[i].labels.clone(),
                        })
                        .collect();
                    let (loss, grad) = listwise_objective(&params, &batch, config.tau)?;
                    adam.step(&mut params.values, &grad.values);
                    sum += loss * batch.len() as f64;
                    count += batch.len();
                }
                epoch_losses.push(sum / count.max(1) as f64);
            }
        }
    }

    let (query, candidate) = params.to_encoders()?;
    Ok(EncoderTraining {
        query,
        candidate,
        epoch_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::judgment::RelevanceGrade;

    fn random_features(rng: &mut ChaCha8Rng, vocab: u32) -> SparseFeatures {
        let n = rng.gen_range(1..4);
        SparseFeatures::from_counts((0..n).map(|_| rng.gen_range(0..vocab)))
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    fn check_grad<F: Fn(&DualParams) -> (f64, DualGrad)>(params: &DualParams, f: F) {
        let (_, g) = f(params);
        let h = 1e-4;
        for i in 0..params.values.len() {
            if g.values[i] == 0.0 {
                // Rows of tokens absent from the batch must stay exactly zero.
                let mut p = params.clone();
                p.values[i] += h;
                let up = f(&p).0;
                p.values[i] -= 2.0 * h;
                assert!((up - f(&p).0).abs() < 1e-12);
                continue;
            }
            let mut p = params.clone();
            p.values[i] += h;
            let up = f(&p).0;
            p.values[i] -= 2.0 * h;
            let dn = f(&p).0;
            let fd = (up - dn) / (2.0 * h);
            assert!(rel_err(fd, g.values[i]) < 1e-4, "param {i}: fd {fd} analytic {}", g.values[i]);
        }
    }

    #[test]
    fn contrastive_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..5 {
            let vocab = rng.gen_range(5..30);
            let dim = rng.gen_range(2..8);
            let params = DualParams::init(vocab, dim, &mut rng);
            let feats: Vec<_> = (0..4)
                .map(|_| (random_features(&mut rng, vocab as u32), random_features(&mut rng, vocab as u32)))
                .collect();
            let batch: Vec<_> = feats.iter().map(|(a, b)| (a, b)).collect();
            check_grad(&params, |p| contrastive_objective(p, &batch, 0.5).unwrap());
        }
    }

    #[test]
    fn listwise_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..5 {
            let vocab = rng.gen_range(5..30);
            let dim = rng.gen_range(2..8);
            let params = DualParams::init(vocab, dim, &mut rng);
            let qf: Vec<_> = (0..2).map(|_| random_features(&mut rng, vocab as u32)).collect();
            let cf: Vec<_> = (0..6).map(|_| random_features(&mut rng, vocab as u32)).collect();
            let groups = vec![
                ListwiseGroup { query: &qf[0], candidates: cf[..3].iter().collect(), labels: vec![1.0, 0.5, 0.0] },
                ListwiseGroup { query: &qf[1], candidates: cf[3..].iter().collect(), labels: vec![0.0, 1.0, 0.0] },
            ];
            check_grad(&params, |p| listwise_objective(p, &groups, 0.4).unwrap());
        }
    }

    fn tiny_data() -> (FeatureTable, FeatureTable, Vec<JudgedPair>) {
        let mut q = FeatureTable::new();
        let mut c = FeatureTable::new();
        let mut pairs = Vec::new();
        for i in 0..8u32 {
            q.insert(format!("q{i}"), SparseFeatures::from_counts([i]));
            c.insert(format!("c{i}"), SparseFeatures::from_counts([8 + i]));
            pairs.push(JudgedPair::new(format!("q{i}"), format!("c{i}"), RelevanceGrade::Exact));
            pairs.push(JudgedPair::new(format!("q{i}"), format!("c{}", (i + 1) % 8), RelevanceGrade::Irrelevant));
        }
        (q, c, pairs)
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let (q, c, pairs) = tiny_data();
        let data = EncoderData { vocab_size: 16, queries: &q, candidates: &c, pairs: &pairs };
        let cfg = EncoderTrainConfig { epochs: 0, dim: 4, seed: 7, ..Default::default() };
        let out = train_encoders(&cfg, &data).unwrap();
        let init = DualParams::init(16, 4, &mut ChaCha8Rng::seed_from_u64(7));
        let (iq, ic) = init.to_encoders().unwrap();
        assert_eq!(out.query, iq);
        assert_eq!(out.candidate, ic);
        assert!(out.epoch_losses.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let (q, c, pairs) = tiny_data();
        let data = EncoderData { vocab_size: 16, queries: &q, candidates: &c, pairs: &pairs };
        for objective in [Objective::Contrastive, Objective::Listwise] {
            let cfg = EncoderTrainConfig { objective, epochs: 30, batch_size: 4, dim: 4, tau: 0.2, seed: 3, ..Default::default() };
            let a = train_encoders(&cfg, &data).unwrap();
            let b = train_encoders(&cfg, &data).unwrap();
            assert_eq!(a.query.weights(), b.query.weights());
            assert_eq!(a.candidate.weights(), b.candidate.weights());
            assert!(a.epoch_losses.last().unwrap() <= a.epoch_losses.first().unwrap());
        }
    }

    #[test]
    fn preconditions_checked_before_training() {
        let (q, c, mut pairs) = tiny_data();
        let data = EncoderData { vocab_size: 16, queries: &q, candidates: &c, pairs: &pairs };
        let cfg = EncoderTrainConfig { batch_size: 1, ..Default::default() };
        assert!(train_encoders(&cfg, &data).is_err());
        pairs.retain(|p| !(p.query_id == "q3" && p.grade.is_positive()));
        let data = EncoderData { vocab_size: 16, queries: &q, candidates: &c, pairs: &pairs };
        let cfg = EncoderTrainConfig { objective: Objective::Listwise, ..Default::default() };
        assert!(train_encoders(&cfg, &data).unwrap_err().to_string().contains("q3"));
        let data = EncoderData { vocab_size: 10, queries: &q, candidates: &c, pairs: &pairs };
        assert!(matches!(
            train_encoders(&EncoderTrainConfig::default(), &data),
            Err(Error::TokenOutOfRange { .. })
        ));
    }
}
