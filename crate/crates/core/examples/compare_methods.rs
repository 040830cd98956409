//! Trains one adapter per transform kind on the default synthetic world and
//! prints the method comparison table.
//!
//! Usage: `cargo run --release --example compare_methods [seed]`

use std::time::Instant;

use relfilter::eval::render_table;
use relfilter::experiment::{compare_methods, ExperimentConfig, Method, World};

fn main() -> relfilter::Result<()> {
    let mut config = ExperimentConfig::default();
    if let Some(seed) = std::env::args().nth(1) {
        config.synthetic.seed = seed.parse().expect("seed must be an integer");
        config.adapter.seed = config.synthetic.seed;
    }
    let start = Instant::now();
    let world = World::generate(&config.synthetic)?;
    let cmp = compare_methods(&world, &config, &Method::ALL)?;
    print!("{}", render_table(&cmp.reports));
    println!("elapsed {:.1?}", start.elapsed());
    Ok(())
}
