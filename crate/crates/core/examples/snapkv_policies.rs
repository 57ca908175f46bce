//! Every eviction policy on one layer of a synthetic trace: how each spends
//! the same budget and what it loses.

use adakv::trace::TracePayload;
use adakv::*;

fn main() -> Result<()> {
    let profile = GeneratorProfile {
        samples: 1,
        heads: 4,
        n: 160,
        model_dim: 24,
        window: 8,
        ..GeneratorProfile::default()
    };
    let trace = generate_synthetic_trace(&profile, 2)?;
    let TracePayload::Full(samples) = &trace.payload else {
        unreachable!()
    };
    let layer = &samples[0][0];
    let outside = layer.outside_cache()?;
    let window = layer.window_cache()?;
    let full = outside.concat(&window)?;
    let budget = 4 * (8 + 24);

    for kind in PolicyKind::ALL {
        let mut config = PolicyConfig::new(kind);
        config.window_size = profile.window;
        let ev = evict_layer(
            &outside,
            &window,
            &layer.window_embeddings,
            &layer.params,
            budget,
            &config,
        )?;
        let weights = layer.last_query_weights(&full, config.scale)?;
        let r = LossReport::measure(&weights, &ev.full_decision(), &full, &layer.params, None)?;
        println!(
            "{:<14} outside budgets {:?}  kept {:>3}  loss {:.4}  eps {:.4}",
            kind.name(),
            ev.allocation.per_head(),
            ev.retained.total_len(),
            r.l1_loss,
            r.epsilon
        );
    }
    Ok(())
}
