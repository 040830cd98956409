//! Trains the query and candidate towers on the token world with either
//! objective and reports test recall@10 before and after.
//!
//! Usage: `cargo run --release --example train_dual_encoder [contrastive|listwise]`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use relfilter::data::{generate_token_dataset, TokenDataset, TokenSpec};
use relfilter::encoder::{train_encoders, DualParams, EncoderData, EncoderTrainConfig, LinearEncoder};
use relfilter::eval::recall_at_k;
use relfilter::index::VectorIndex;
use relfilter::judgment::Qrels;

fn recall(ds: &TokenDataset, q: &LinearEncoder, c: &LinearEncoder) -> relfilter::Result<f64> {
    let rows = ds
        .candidates
        .iter()
        .map(|(id, f)| Ok((id.clone(), c.encode(f)?.into_inner())))
        .collect::<relfilter::Result<Vec<_>>>()?;
    let index = VectorIndex::build(rows)?;
    let runs = ds
        .test_queries
        .iter()
        .map(|id| index.search(id, &q.encode(&ds.queries[id])?, 10))
        .collect::<relfilter::Result<Vec<_>>>()?;
    Ok(recall_at_k(&runs, &Qrels::from_pairs(&ds.qrels)?, 10))
}

fn main() -> relfilter::Result<()> {
    let mut config = EncoderTrainConfig::default();
    if let Some(obj) = std::env::args().nth(1) {
        config.objective = obj.parse()?;
    }
    let ds = generate_token_dataset(&TokenSpec::default())?;
    let train: std::collections::HashSet<_> = ds.train_queries.iter().collect();
    let pairs: Vec<_> = ds.qrels.iter().filter(|p| train.contains(&p.query_id)).cloned().collect();
    let data = EncoderData {
        vocab_size: ds.vocab_size,
        queries: &ds.queries,
        candidates: &ds.candidates,
        pairs: &pairs,
    };

    let (uq, uc) = DualParams::init(ds.vocab_size, config.dim, &mut ChaCha8Rng::seed_from_u64(config.seed)).to_encoders()?;
    let trained = train_encoders(&config, &data)?;
    println!("objective {}", config.objective);
    for (epoch, loss) in trained.epoch_losses.iter().enumerate() {
        println!("epoch {epoch}: loss {loss:.4}");
    }
    println!("recall@10 untrained {:.4}", recall(&ds, &uq, &uc)?);
    println!("recall@10 trained   {:.4}", recall(&ds, &trained.query, &trained.candidate)?);
    Ok(())
}
