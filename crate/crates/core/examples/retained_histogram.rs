//! Prints how many hits each query keeps after filtering at matched recall,
//! for raw cosine and for the power adapter.

use relfilter::adapter::AdapterTrainConfig;
use relfilter::data::SyntheticSpec;
use relfilter::eval::{evaluate_lists, unit_edges, ThresholdChoice};
use relfilter::experiment::{calibrate_lists, Method, World};

fn main() -> relfilter::Result<()> {
    let k = 20;
    let spec = SyntheticSpec { num_queries: 400, corpus_size: 8000, dim: 32, ..Default::default() };
    let world = World::generate(&spec)?;
    let net = world.train_adapter(&AdapterTrainConfig { epochs: 30, ..Default::default() })?;
    let lists = world.retrieve("test", k)?;
    let edges = [0, 1, 2, 4, 8, k];
    for method in [Method::Raw, Method::Adapter(net.kind())] {
        let calibrated = calibrate_lists(method, &lists, &world.queries, Some(&net))?;
        let report = evaluate_lists(
            &method.to_string(),
            &calibrated,
            &world.qrels,
            ThresholdChoice::SelfCalibrated(0.95),
            0.95,
            10,
            &edges,
        )?;
        println!("{method}: {:.1}% of queries kept nothing or everything", report.extreme_pct);
        print!("{}", report.histogram.to_table());
        let full = evaluate_lists("", &calibrated, &world.qrels, ThresholdChoice::Fixed(report.threshold), 0.95, 10, &unit_edges(k))?;
        let counts: Vec<usize> = full.histogram.buckets.iter().map(|b| b.count).collect();
        println!("per count 0..={k}: {counts:?}\n");
    }
    Ok(())
}
