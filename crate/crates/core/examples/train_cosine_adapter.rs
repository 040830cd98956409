//! Trains a Cosine Adapter on a small synthetic world and shows how the
//! emitted parameters vary with the query.
//!
//! Usage: `cargo run --release --example train_cosine_adapter [kind]`

use relfilter::adapter::{AdapterTrainConfig, TransformKind};
use relfilter::data::SyntheticSpec;
use relfilter::experiment::World;

fn main() -> relfilter::Result<()> {
    let kind: TransformKind = match std::env::args().nth(1) {
        Some(s) => s.parse()?,
        None => TransformKind::Power,
    };
    let spec = SyntheticSpec { num_queries: 400, corpus_size: 8000, dim: 32, ..Default::default() };
    let world = World::generate(&spec)?;
    let config = AdapterTrainConfig { kind, epochs: 30, ..Default::default() };
    let net = world.train_adapter(&config)?;
    println!("{kind} adapter with {} weights", net.params().len());
    for id in world.split("test")?.iter().take(6) {
        let theta = net.forward(world.queries.require(id)?)?;
        let shift = world.dataset.shifts[id];
        println!("{id} shift {shift:+.3} -> a {:.2} b {:.2} k {:?}", theta.a, theta.b, theta.k);
    }
    Ok(())
}
