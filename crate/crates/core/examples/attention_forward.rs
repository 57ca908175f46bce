//! One multi-head attention step on a random layer, then the same step with
//! part of the cache dropped, computed two ways.

use adakv::attention::{masked_post_eviction_output, query_weights};
use adakv::tensor::Matrix;
use adakv::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (heads, d, dh, n) = (2, 6, 3, 5);
    let params = LayerParams::random(&mut rng, heads, d, dh, 0.6);
    let x = Matrix::from_vec(
        n,
        d,
        (0..n * d)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect(),
    )?;
    let cache = params.project_cache(&x)?;

    let query: Vec<f64> = x.row(n - 1).to_vec();
    let queries = params
        .heads()
        .iter()
        .map(|p| project_qkv(&query, p).map(|(q, _, _)| q))
        .collect::<Result<Vec<_>>>()?;
    let weights = query_weights(&queries, &cache, &params, LogitScale::default())?;
    for (i, row) in weights.rows().iter().enumerate() {
        println!("head {i} weights {row:.3?}");
    }
    let y = attention_output(&weights, &cache, &params)?;
    println!("y     {y:.4?}");

    // drop the two oldest positions of head 0 and the middle one of head 1
    let decision = EvictionDecision::new(vec![
        vec![false, false, true, true, true],
        vec![true, true, false, true, true],
    ]);
    let renorm = post_eviction_output(&weights, &decision, &cache, &params)?;
    let masked =
        masked_post_eviction_output(&queries, &decision, &cache, &params, LogitScale::default())?;
    println!("y_hat {renorm:.4?}");
    let gap = renorm
        .iter()
        .zip(&masked)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("renormalized vs masked softmax: max gap {gap:.1e}");
    Ok(())
}
