//! Runs every CLI stage in order into a temporary directory and prints each
//! stage's summary.

use relfilter::adapter::TransformKind;
use relfilter::commands::{run, Command};
use relfilter::config::{Overrides, RunConfig};

fn main() -> relfilter::Result<()> {
    let dir = std::env::temp_dir().join("relfilter-end-to-end");
    let mut cfg = RunConfig::resolve(None, &Overrides { out: Some(dir), ..Default::default() })?;
    cfg.synthetic.num_queries = 400;
    cfg.synthetic.corpus_size = 8000;
    cfg.synthetic.dim = 32;
    cfg.adapter.epochs = 30;
    cfg.validate()?;
    for cmd in Command::ALL {
        if cmd == Command::TrainAdapter {
            for kind in TransformKind::ALL.into_iter().filter(|k| *k != TransformKind::Raw) {
                let mut stage = cfg.clone();
                stage.adapter.kind = kind;
                println!("== {cmd} --kind {kind}");
                print!("{}", run(cmd, &stage)?);
            }
            continue;
        }
        println!("== {cmd}");
        print!("{}", run(cmd, &cfg)?);
    }
    Ok(())
}
