//! Builds an exact cosine index over a few vectors, searches it and round
//! trips it through the binary index format.

use relfilter::index::VectorIndex;
use relfilter::vector::normalize;

fn main() -> relfilter::Result<()> {
    let index = VectorIndex::build([
        ("d1", vec![1.0, 0.0, 0.0]),
        ("d2", vec![0.6, 0.8, 0.0]),
        ("d3", vec![0.0, 0.0, 2.0]),
        ("d4", vec![0.6, 0.8, 0.0]),
    ])?;
    let q = normalize(&[1.0, 1.0, 0.0])?;
    let result = index.search("q1", &q, 3)?;
    for (rank, h) in result.hits.iter().enumerate() {
        println!("{} {} {:.4}", rank + 1, h.candidate_id, h.cosine);
    }

    let mut bytes = Vec::new();
    index.write_to(&mut bytes)?;
    let back = VectorIndex::read_from(bytes.as_slice())?;
    println!("{} bytes, round trip equal: {}", bytes.len(), back == index);
    Ok(())
}
