//! Generate a weights-only trace, write it with a binary sidecar, read it
//! back and summarize how concentrated each head is.

use adakv::inspect::head_concentration;
use adakv::trace::{PayloadStorage, TraceKind};
use adakv::*;

fn main() -> Result<()> {
    let profile = GeneratorProfile {
        kind: TraceKind::WeightsOnly,
        samples: 16,
        heads: 8,
        n: 400,
        ..GeneratorProfile::default()
    };
    let trace = generate_synthetic_trace(&profile, 21)?;
    let dir = std::env::temp_dir().join("adakv-trace-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("trace.json");
    save_trace(&trace, &path, PayloadStorage::Sidecar)?;
    let back = load_trace(&path)?;
    assert_eq!(back, trace);
    println!(
        "round trip of {} samples through {} ok",
        back.num_samples(),
        path.display()
    );

    let report = head_concentration(&back, 0.95)?;
    for h in &report.heads {
        println!(
            "head {}: {:>5.1}% of positions hold 95% of attention (largest weight {:.3})",
            h.head,
            100.0 * h.mean_fraction,
            h.mean_top_weight
        );
    }
    Ok(())
}
