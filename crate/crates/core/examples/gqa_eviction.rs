//! Grouped-query attention: eight query heads share two cache heads, so
//! eviction decides per cache head and the budget counts shared elements
//! once.

use adakv::trace::TracePayload;
use adakv::*;

fn main() -> Result<()> {
    let profile = GeneratorProfile {
        samples: 1,
        heads: 8,
        kv_group_size: 4,
        n: 120,
        model_dim: 16,
        window: 8,
        fraction_sparse_heads: 0.5,
        ..GeneratorProfile::default()
    };
    let trace = generate_synthetic_trace(&profile, 9)?;
    let TracePayload::Full(samples) = &trace.payload else {
        unreachable!()
    };
    let layer = &samples[0][0];
    let outside = layer.outside_cache()?;
    let window = layer.window_cache()?;
    println!(
        "{} query heads, {} cache heads, {} cached elements",
        layer.params.num_heads(),
        outside.num_heads(),
        outside.total_len() + window.total_len()
    );

    let budget = 64;
    for kind in [PolicyKind::SnapKv, PolicyKind::AdaSnapKv] {
        let mut config = PolicyConfig::new(kind);
        config.window_size = profile.window;
        config.gqa_group_size = profile.kv_group_size;
        let ev = evict_layer(
            &outside,
            &window,
            &layer.window_embeddings,
            &layer.params,
            budget,
            &config,
        )?;
        let flat = FlattenedCache::flatten(&ev.retained)?;
        println!(
            "{:<11} per cache head {:?}, unique elements kept {} (budget {budget})",
            kind.name(),
            ev.retained.lengths(),
            flat.total_elements()
        );
    }
    Ok(())
}
