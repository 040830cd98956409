//! Calibrates a global threshold on one split and checks the recall it
//! delivers on a held-out split.
//!
//! Usage: `cargo run --release --example calibrate_and_filter [target]`

use relfilter::adapter::AdapterTrainConfig;
use relfilter::data::SyntheticSpec;
use relfilter::experiment::{calibrate_lists, Method, World};
use relfilter::filter::{apply_filter, calibrate_threshold, recall_at, FilterReport, RecallMode, ScoredPair};
use relfilter::index::SearchResult;

fn scored(world: &World, lists: &[SearchResult]) -> Vec<ScoredPair> {
    lists
        .iter()
        .flat_map(|r| {
            r.hits.iter().map(|h| {
                ScoredPair::new(r.query_id.clone(), h.logit.unwrap(), world.qrels.grade(&r.query_id, &h.candidate_id))
            })
        })
        .collect()
}

fn main() -> relfilter::Result<()> {
    let target: f64 = std::env::args().nth(1).map_or(0.95, |s| s.parse().expect("target must be a number"));
    let spec = SyntheticSpec { num_queries: 600, corpus_size: 12000, dim: 64, ..Default::default() };
    let world = World::generate(&spec)?;
    let net = world.train_adapter(&AdapterTrainConfig { epochs: 30, ..Default::default() })?;
    let method = Method::Adapter(net.kind());

    let calib = calibrate_lists(method, &world.retrieve("calib", 50)?, &world.queries, Some(&net))?;
    let cal = calibrate_threshold(&scored(&world, &calib), target)?;
    println!("{}", cal.to_toml());

    let test = calibrate_lists(method, &world.retrieve("test", 50)?, &world.queries, Some(&net))?;
    let held_out = recall_at(&scored(&world, &test), cal.threshold, RecallMode::Micro);
    let mut report = FilterReport::default();
    for r in &test {
        report.push(apply_filter(r, cal.threshold)?.1);
    }
    println!("held-out recall {held_out:.4}");
    println!(
        "kept {} of {} hits, {} empty queries",
        report.total_retained(),
        report.total_input(),
        report.null_queries()
    );
    Ok(())
}
