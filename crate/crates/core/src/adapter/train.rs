//! BCE training of the adapter over precomputed (frozen) embeddings.

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::{backward, constrain, forward_raw, AdapterNetwork, Layout};
use super::transform::{apply, AdapterParams, TransformKind};
use crate::data::EmbeddingTable;
use crate::error::{Error, Result};
use crate::judgment::JudgedPair;
use crate::math::{sigmoid, softplus};
use crate::optim::Adam;
use crate::vector::cosine;

/// Binary cross-entropy in logit form; `y` may be fractional.
pub fn bce_loss(logit: f64, y: f64) -> f64 {
    softplus(logit) - y * logit
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterTrainConfig {
    pub kind: TransformKind,
    pub learning_rate: f64,
    /// Queries per mini-batch. Each query brings all of its sampled pairs.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Negatives sampled per positive (31 gives a 1:31 ratio).
    pub negatives_per_positive: usize,
    /// Initial value of `a`. The initial `b` matches the prior log-odds of
    /// the sampled pairs.
    pub initial_scale: f64,
}

impl Default for AdapterTrainConfig {
    fn default() -> Self {
        Self {
            kind: TransformKind::Power,
            learning_rate: 0.01,
            batch_size: 8,
            epochs: 60,
            seed: 0,
            negatives_per_positive: 31,
            initial_scale: 10.0,
        }
    }
}

/// One query's embedding with its `(cosine, target)` training pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryExamples {
    pub query: Vec<f64>,
    pub pairs: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct AdapterTraining {
    pub network: AdapterNetwork,
    pub epoch_losses: Vec<f64>,
}

/// Mean BCE over every pair in `batch` and its gradient with respect to the
/// flat weight vector. The network runs once per query.
pub fn adapter_objective(
    kind: TransformKind,
    dim: usize,
    params: &[f64],
    batch: &[&QueryExamples],
) -> Result<(f64, Vec<f64>)> {
    let layout = Layout::new(kind, dim)?;
    if params.len() != layout.len() {
        return Err(Error::DimensionMismatch {
            expected: layout.len(),
            found: params.len(),
        });
    }
    let mut grad = vec![0.0; params.len()];
    let n: usize = batch.iter().map(|e| e.pairs.len()).sum();
    if n == 0 {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / n as f64;
    let mut total = 0.0;
    let mut dl = Vec::new();
    for ex in batch {
        if ex.query.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: ex.query.len(),
            });
        }
        let act = forward_raw(&layout, params, &ex.query);
        let theta = constrain(kind, &act.out);
        dl.clear();
        for &(x, y) in &ex.pairs {
            let z = apply(kind, &theta, x);
            total += bce_loss(z, y);
            dl.push((x, (sigmoid(z) - y) * scale));
        }
        backward(kind, &layout, params, &ex.query, &act, dl.iter().copied(), &mut grad);
    }
    Ok((total * scale, grad))
}

/// Builds per-query training pairs: every judged pair with grade above zero,
/// plus up to `ratio` sampled irrelevant pairs per such pair.
pub fn sample_examples(
    pairs: &[JudgedPair],
    query_embs: &EmbeddingTable,
    cand_embs: &EmbeddingTable,
    ratio: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<QueryExamples>> {
    let mut by_query: BTreeMap<&str, Vec<&JudgedPair>> = BTreeMap::new();
    for p in pairs {
        by_query.entry(p.query_id.as_str()).or_default().push(p);
    }
    let mut out = Vec::with_capacity(by_query.len());
    for (qid, judged) in by_query {
        let q = query_embs.require(qid)?;
        let mut kept = Vec::new();
        let mut negatives = Vec::new();
        for p in judged {
            let c = cand_embs.require(&p.candidate_id)?;
            let x = cosine(q, c)?;
            let y = p.grade.value();
            if y > 0.0 {
                kept.push((x, y));
            } else {
                negatives.push((x, y));
            }
        }
        let want = (ratio * kept.len().max(1)).min(negatives.len());
        let mut chosen = index::sample(rng, negatives.len(), want).into_vec();
        chosen.sort_unstable();
        kept.extend(chosen.into_iter().map(|i| negatives[i]));
        out.push(QueryExamples {
            query: q.to_f64(),
            pairs: kept,
        });
    }
    Ok(out)
}

/// `b` such that `a·g(x̄) + b` equals the log-odds of the mean target.
fn prior_offset(kind: TransformKind, scale: f64, examples: &[QueryExamples]) -> Option<f64> {
    if kind == TransformKind::Raw {
        return None;
    }
    let theta = AdapterParams {
        a: 1.0,
        b: 0.0,
        k: (kind == TransformKind::Power).then_some(1.0),
    };
    let (mut n, mut sy, mut sg) = (0usize, 0.0, 0.0);
    for (x, y) in examples.iter().flat_map(|e| &e.pairs) {
        n += 1;
        sy += y;
        sg += apply(kind, &theta, *x);
    }
    if n == 0 {
        return None;
    }
    let p = (sy / n as f64).clamp(1e-6, 1.0 - 1e-6);
    Some((p / (1.0 - p)).ln() - scale * sg / n as f64)
}

pub fn train_adapter(
    config: &AdapterTrainConfig,
    pairs: &[JudgedPair],
    query_embs: &EmbeddingTable,
    cand_embs: &EmbeddingTable,
) -> Result<AdapterTraining> {
    if config.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    if !(config.learning_rate > 0.0) {
        return Err(Error::invalid("learning rate must be positive"));
    }
    let dim = query_embs
        .dim()
        .ok_or_else(|| Error::invalid("no query embeddings"))?;
    if let Some(cd) = cand_embs.dim() {
        if cd != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: cd });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut init = AdapterNetwork::init(config.kind, dim, &mut rng)?;
    let examples = sample_examples(pairs, query_embs, cand_embs, config.negatives_per_positive, &mut rng)?;
    if let Some(offset) = prior_offset(config.kind, config.initial_scale, &examples) {
        init.set_head_bias(config.initial_scale, offset)?;
    }
    if config.epochs == 0 {
        return Ok(AdapterTraining {
            network: init,
            epoch_losses: Vec::new(),
        });
    }

    let mut params = init.params_f64();
    let mut adam = Adam::new(params.len(), config.learning_rate);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        // Linear decay to a tenth of the base rate over the run.
        adam.learning_rate = config.learning_rate * (1.0 - 0.9 * epoch as f64 / config.epochs as f64);
        order.shuffle(&mut rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&QueryExamples> = chunk.iter().map(|&i| &examples[i]).collect();
            let n: usize = batch.iter().map(|e| e.pairs.len()).sum();
            if n == 0 {
                continue;
            }
            let (loss, grad) = adapter_objective(config.kind, dim, &params, &batch)?;
            adam.step(&mut params, &grad);
            sum += loss * n as f64;
            count += n;
        }
        epoch_losses.push(sum / count.max(1) as f64);
    }
    let weights = params.iter().map(|&w| w as f32).collect();
    Ok(AdapterTraining {
        network: AdapterNetwork::from_params(config.kind, dim, weights)?,
        epoch_losses,
    })
}
