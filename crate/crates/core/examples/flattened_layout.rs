//! Variable-length heads in one flat buffer: offsets, compaction after
//! eviction, byte accounting and the binary file format.

use adakv::attention::HeadKv;
use adakv::tensor::Matrix;
use adakv::*;

fn head(len: usize, base: f64) -> HeadKv {
    let rows: Vec<[f64; 2]> = (0..len)
        .map(|j| [base + j as f64, -(base + j as f64)])
        .collect();
    HeadKv {
        keys: if len == 0 {
            Matrix::empty(2)
        } else {
            Matrix::from_rows(&rows)
        },
        values: if len == 0 {
            Matrix::empty(2)
        } else {
            Matrix::from_rows(&rows).scale(0.5)
        },
    }
}

fn main() -> Result<()> {
    let cache = LayerCache::from_heads(2, vec![head(3, 0.0), head(1, 10.0), head(4, 20.0)])?;
    let flat = FlattenedCache::flatten(&cache)?;
    println!("lengths {:?}, offsets {:?}", flat.lengths(), flat.offsets());
    println!(
        "head 2, element 1: key {:?} value {:?}",
        flat.head_slice(2)?.key(1),
        flat.head_slice(2)?.value(1)
    );

    let decision = EvictionDecision::new(vec![
        vec![true, false, true],
        vec![false],
        vec![false, true, true, false],
    ]);
    let compact = flat.select_and_compact(&decision)?;
    println!(
        "after eviction: lengths {:?}, offsets {:?}",
        compact.lengths(),
        compact.offsets()
    );
    let stats = compact.memory_footprint(2);
    println!(
        "{} elements, {} bytes at fp16",
        stats.total_elements, stats.bytes
    );

    let bytes = compact.to_bytes();
    println!(
        "file: {} bytes, magic {:?}",
        bytes.len(),
        std::str::from_utf8(&bytes[..4]).unwrap()
    );
    assert_eq!(FlattenedCache::from_bytes(&bytes)?, compact);
    Ok(())
}
