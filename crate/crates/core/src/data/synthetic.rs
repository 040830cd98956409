//! Synthetic benchmarks.
//!
//! [`generate_synthetic`] builds an embedding world in which every query has a
//! hidden difficulty shift `μ_q` that moves all of its cosines together, so a
//! single raw-cosine threshold cannot serve every query. The shift is written
//! into the last two query coordinates, which makes it recoverable from the
//! query embedding alone.
//!
//! Queries are grouped into clusters that share a direction and a candidate
//! pool. For a candidate with specific score `s` the construction gives
//! `cos(q, p) = s + μ_q` exactly (up to `f32` rounding), where `s` is
//! `base_cosine ± separation` plus truncated Gaussian noise.
//!
//! [`generate_token_dataset`] builds a sparse-token world for the encoder.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::embeddings::EmbeddingRecord;
use crate::encoder::{FeatureTable, SparseFeatures};
use crate::error::{Error, Result};
use crate::judgment::{JudgedPair, RelevanceGrade};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub num_queries: usize,
    pub corpus_size: usize,
    pub dim: usize,
    pub relevant_per_query: usize,
    /// Queries sharing one direction and one candidate pool.
    pub queries_per_cluster: usize,
    #[serde(alias = "per_query_shift_range")]
    pub shift_range: (f64, f64),
    /// Specific score around which relevant and irrelevant scores are placed.
    pub base_cosine: f64,
    #[serde(alias = "class_separation")]
    pub separation: f64,
    pub noise_sigma: f64,
    /// Set from the run seed rather than from config files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_queries: 1000,
            corpus_size: 20_000,
            dim: 128,
            relevant_per_query: 4,
            queries_per_cluster: 4,
            shift_range: (-0.2, 0.2),
            base_cosine: 0.5,
            separation: 0.05,
            noise_sigma: 0.02,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn num_clusters(&self) -> usize {
        self.num_queries.div_ceil(self.queries_per_cluster.max(1))
    }

    fn max_shift(&self) -> f64 {
        self.shift_range.0.abs().max(self.shift_range.1.abs())
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.shift_range;
        if self.num_queries == 0 || self.queries_per_cluster == 0 || self.relevant_per_query == 0 {
            return Err(Error::invalid("query, cluster and relevant counts must be positive"));
        }
        if self.dim < 4 {
            return Err(Error::invalid("synthetic dimension must be at least 4"));
        }
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid(format!("shift range ({lo}, {hi}) is not ordered")));
        }
        if !(self.separation > 0.0) {
            return Err(Error::invalid("separation must be positive"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::invalid("noise sigma must be non-negative"));
        }
        let per_cluster = self.corpus_size / self.num_clusters();
        if per_cluster <= self.relevant_per_query {
            return Err(Error::invalid(format!(
                "corpus of {} gives {per_cluster} candidates per cluster, need more than {}",
                self.corpus_size, self.relevant_per_query
            )));
        }
        let m = self.max_shift();
        let reach = self.base_cosine.abs() + self.separation + 4.0 * self.noise_sigma;
        if m >= 1.0 || reach >= 1.0 - m {
            return Err(Error::invalid(format!(
                "infeasible geometry: base {} + separation {} + 4 sigma {} with shift up to {m} leaves [-1, 1]",
                self.base_cosine, self.separation, 4.0 * self.noise_sigma
            )));
        }
        Ok(())
    }
}

/// Query ids of each split.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Splits {
    pub train: Vec<String>,
    pub calib: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    /// Seeded 40/30/30 partition, each part sorted.
    pub fn partition(ids: &[String], rng: &mut impl Rng) -> Self {
        let mut shuffled = ids.to_vec();
        shuffled.shuffle(rng);
        let n_train = ids.len() * 2 / 5;
        let n_calib = ids.len() * 3 / 10;
        let mut test = shuffled.split_off(n_train + n_calib);
        let mut calib = shuffled.split_off(n_train);
        let mut train = shuffled;
        train.sort();
        calib.sort();
        test.sort();
        Self { train, calib, test }
    }

    pub fn get(&self, name: &str) -> Option<&[String]> {
        match name {
            "train" => Some(&self.train),
            "calib" => Some(&self.calib),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub spec: SyntheticSpec,
    pub queries: Vec<EmbeddingRecord>,
    pub corpus: Vec<EmbeddingRecord>,
    pub qrels: Vec<JudgedPair>,
    /// The hidden shift `μ_q` of each query.
    pub shifts: BTreeMap<String, f64>,
    pub splits: Splits,
}

impl SyntheticDataset {
    pub fn pairs_for<'a>(&'a self, ids: &'a [String]) -> impl Iterator<Item = &'a JudgedPair> + 'a {
        let wanted: std::collections::HashSet<&str> = ids.iter().map(String::as_str).collect();
        self.qrels.iter().filter(move |p| wanted.contains(p.query_id.as_str()))
    }

    pub fn query_records<'a>(&'a self, ids: &'a [String]) -> Vec<EmbeddingRecord> {
        let wanted: std::collections::HashSet<&str> = ids.iter().map(String::as_str).collect();
        self.queries.iter().filter(|r| wanted.contains(r.id.as_str())).cloned().collect()
    }
}

fn unit_gaussian(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// A random unit vector orthogonal to the unit vector `u`.
fn orthogonal_unit(rng: &mut impl Rng, u: &[f64]) -> Vec<f64> {
    loop {
        let mut v = unit_gaussian(rng, u.len());
        let proj: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
        v.iter_mut().zip(u).for_each(|(a, b)| *a -= proj * b);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn truncated_noise(rng: &mut impl Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 4.0 {
            return sigma * z;
        }
    }
}

pub fn query_id(i: usize) -> String {
    format!("q{i:05}")
}

pub fn candidate_id(j: usize) -> String {
    format!("d{j:06}")
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.dim;
    let body = d - 2;
    let m = spec.max_shift();
    // ρ = β = √M puts μ into the last block; λ = 1 − M scales the body.
    let rho = m.sqrt();
    let lambda = 1.0 - m;
    let clusters = spec.num_clusters();
    let base = spec.corpus_size / clusters;
    let extra = spec.corpus_size % clusters;

    let mut corpus = Vec::with_capacity(spec.corpus_size);
    let mut directions = Vec::with_capacity(clusters);
    let mut pools: Vec<(usize, usize)> = Vec::with_capacity(clusters);
    for c in 0..clusters {
        let u = unit_gaussian(&mut rng, body);
        let size = base + usize::from(c < extra);
        let start = corpus.len();
        for j in 0..size {
            let sign = if j < spec.relevant_per_query { 1.0 } else { -1.0 };
            let s = spec.base_cosine + sign * spec.separation + truncated_noise(&mut rng, spec.noise_sigma);
            let t = s / lambda;
            let v = orthogonal_unit(&mut rng, &u);
            let ortho = (1.0 - t * t).max(0.0).sqrt();
            let mut values: Vec<f32> = u
                .iter()
                .zip(&v)
                .map(|(ui, vi)| ((1.0 - rho * rho).sqrt() * (t * ui + ortho * vi)) as f32)
                .collect();
            values.push(rho as f32);
            values.push(0.0);
            corpus.push(EmbeddingRecord::new(candidate_id(start + j), values));
        }
        directions.push(u);
        pools.push((start, size));
    }

    let mut queries = Vec::with_capacity(spec.num_queries);
    let mut shifts = BTreeMap::new();
    let mut qrels = Vec::with_capacity(spec.num_queries * base);
    let (lo, hi) = spec.shift_range;
    for i in 0..spec.num_queries {
        let c = i / spec.queries_per_cluster;
        let mu = if lo < hi { rng.gen_range(lo..hi) } else { lo };
        let cos_t = if m > 0.0 { mu / m } else { 0.0 };
        let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
        let mut values: Vec<f32> = directions[c]
            .iter()
            .map(|x| ((1.0 - rho * rho).sqrt() * x) as f32)
            .collect();
        values.push((rho * cos_t) as f32);
        values.push((rho * sin_t) as f32);
        let id = query_id(i);
        let (start, size) = pools[c];
        for j in 0..size {
            let grade = if j < spec.relevant_per_query {
                RelevanceGrade::Exact
            } else {
                RelevanceGrade::Irrelevant
            };
            qrels.push(JudgedPair::new(id.clone(), candidate_id(start + j), grade));
        }
        shifts.insert(id.clone(), mu);
        queries.push(EmbeddingRecord::new(id, values));
    }

    let ids: Vec<String> = queries.iter().map(|r| r.id.clone()).collect();
    let splits = Splits::partition(&ids, &mut rng);
    Ok(SyntheticDataset {
        spec: spec.clone(),
        queries,
        corpus,
        qrels,
        shifts,
        splits,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenSpec {
    pub num_queries: usize,
    pub num_candidates: usize,
    pub topics: usize,
    /// Topic-specific tokens per side; queries and candidates use disjoint ranges.
    pub tokens_per_topic: usize,
    pub tokens_per_text: usize,
    pub noise_tokens: usize,
    /// Off-topic irrelevant judgments per query.
    pub negatives_per_query: usize,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TokenSpec {
    fn default() -> Self {
        Self {
            num_queries: 500,
            num_candidates: 1000,
            topics: 50,
            tokens_per_topic: 6,
            tokens_per_text: 4,
            noise_tokens: 1,
            negatives_per_query: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TokenDataset {
    pub vocab_size: usize,
    pub queries: FeatureTable,
    pub candidates: FeatureTable,
    pub qrels: Vec<JudgedPair>,
    pub train_queries: Vec<String>,
    pub test_queries: Vec<String>,
}

pub fn generate_token_dataset(spec: &TokenSpec) -> Result<TokenDataset> {
    if spec.topics == 0 || spec.tokens_per_topic == 0 || spec.tokens_per_text == 0 {
        return Err(Error::invalid("topics and token counts must be positive"));
    }
    if spec.num_candidates < spec.topics || spec.num_queries < 2 {
        return Err(Error::invalid("need at least one candidate per topic and two queries"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let side = spec.topics * spec.tokens_per_topic;
    let vocab_size = 2 * side;
    let text = |rng: &mut ChaCha8Rng, topic: usize, offset: usize| {
        let mut toks: Vec<u32> = (0..spec.tokens_per_text)
            .map(|_| (offset + topic * spec.tokens_per_topic + rng.gen_range(0..spec.tokens_per_topic)) as u32)
            .collect();
        toks.extend((0..spec.noise_tokens).map(|_| rng.gen_range(0..vocab_size) as u32));
        SparseFeatures::from_counts(toks)
    };
    let mut candidates = FeatureTable::new();
    for j in 0..spec.num_candidates {
        candidates.insert(candidate_id(j), text(&mut rng, j % spec.topics, side));
    }
    let mut queries = FeatureTable::new();
    let mut qrels = Vec::new();
    for i in 0..spec.num_queries {
        let topic = i % spec.topics;
        let id = query_id(i);
        queries.insert(id.clone(), text(&mut rng, topic, 0));
        for j in (topic..spec.num_candidates).step_by(spec.topics) {
            qrels.push(JudgedPair::new(id.clone(), candidate_id(j), RelevanceGrade::Exact));
        }
        let mut off: Vec<usize> = (0..spec.num_candidates).filter(|j| j % spec.topics != topic).collect();
        off.shuffle(&mut rng);
        off.truncate(spec.negatives_per_query);
        off.sort_unstable();
        for j in off {
            qrels.push(JudgedPair::new(id.clone(), candidate_id(j), RelevanceGrade::Irrelevant));
        }
    }
    let mut ids: Vec<String> = queries.keys().cloned().collect();
    ids.shuffle(&mut rng);
    let mut test_queries = ids.split_off(ids.len() * 4 / 5);
    let mut train_queries = ids;
    train_queries.sort();
    test_queries.sort();
    Ok(TokenDataset {
        vocab_size,
        queries,
        candidates,
        qrels,
        train_queries,
        test_queries,
    })
}
