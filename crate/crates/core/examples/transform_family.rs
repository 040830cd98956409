//! Tabulates each monotone transform over a cosine grid for one parameter
//! set, and shows the parameters an untrained adapter emits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use relfilter::adapter::{transform, AdapterNetwork, AdapterParams, TransformKind};
use relfilter::vector::normalize;

fn main() -> relfilter::Result<()> {
    let grid = [-1.0, -0.5, 0.0, 0.25, 0.5, 0.75, 1.0];
    print!("{:<10}", "x");
    for x in grid {
        print!("{x:>9.2}");
    }
    println!();
    for kind in TransformKind::ALL {
        let theta = match kind {
            TransformKind::Raw => AdapterParams::identity(kind),
            TransformKind::Power => AdapterParams { a: 4.0, b: -2.0, k: Some(0.5) },
            _ => AdapterParams { a: 4.0, b: -2.0, k: None },
        };
        print!("{:<10}", kind.to_string());
        for x in grid {
            print!("{:>9.3}", transform(kind, &theta, x)?);
        }
        println!();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let net = AdapterNetwork::init(TransformKind::Power, 8, &mut rng)?;
    let q = normalize(&[1.0, 2.0, 0.0, -1.0, 0.5, 0.0, 0.0, 3.0])?;
    println!("untrained power adapter emits {:?}", net.forward(&q)?);
    Ok(())
}
