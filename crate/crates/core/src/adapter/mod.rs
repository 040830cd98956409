//! Query-conditioned calibration of cosine scores.

mod network;
mod train;
mod transform;

pub use network::{AdapterNetwork, Layout};
pub use train::{adapter_objective, bce_loss, sample_examples, train_adapter, AdapterTrainConfig, AdapterTraining, QueryExamples};
pub use transform::{transform, AdapterParams, ParamGrad, TransformKind, POWER_GRAD_FLOOR};

use crate::error::Result;
use crate::index::SearchResult;
use crate::math::sigmoid;
use crate::vector::EmbeddingVector;

/// Fills logit and probability for every hit from a fixed parameter set.
pub fn calibrate_with_params(kind: TransformKind, theta: &AdapterParams, hits: &SearchResult) -> Result<SearchResult> {
    theta.validate(kind)?;
    let mut out = hits.clone();
    for h in &mut out.hits {
        let z = transform::apply(kind, theta, h.cosine);
        h.logit = Some(z);
        h.probability = Some(sigmoid(z));
    }
    Ok(out)
}

/// Runs the adapter once for `q`, then transforms each hit's cosine.
pub fn calibrate_candidates(net: &AdapterNetwork, q: &EmbeddingVector, hits: &SearchResult) -> Result<SearchResult> {
    let theta = net.forward(q)?;
    calibrate_with_params(net.kind(), &theta, hits)
}
