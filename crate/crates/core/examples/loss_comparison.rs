//! SnapKV against Ada-SnapKV on a synthetic trace where three heads in four
//! concentrate their attention and the rest spread it out.

use adakv::compare::{run_comparison, ComparisonConfig};
use adakv::policy::{PolicyConfig, PolicyKind};
use adakv::trace::{generate_synthetic_trace, GeneratorProfile};

fn main() -> adakv::Result<()> {
    let samples = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(200);
    let profile = GeneratorProfile {
        samples,
        ..GeneratorProfile::default()
    };
    let trace = generate_synthetic_trace(&profile, 7)?;
    let config = ComparisonConfig::new(
        vec![0.2, 0.4],
        vec![
            PolicyConfig::new(PolicyKind::SnapKv),
            PolicyConfig::new(PolicyKind::AdaSnapKv),
        ],
    );
    let report = run_comparison(&trace, &config)?;
    for s in &report.summaries {
        let (mut ada, mut uni) = (0.0, 0.0);
        for r in report
            .rows
            .iter()
            .filter(|r| r.budget_fraction == s.budget_fraction)
        {
            if r.policy == s.adaptive {
                ada += r.l1_loss;
            } else if r.policy == s.uniform {
                uni += r.l1_loss;
            }
        }
        println!(
            "budget {:.1}: {} beats {} on {}/{} samples (mean loss {:.4} vs {:.4})",
            s.budget_fraction,
            s.adaptive,
            s.uniform,
            s.adaptive_wins,
            s.samples,
            ada / s.samples as f64,
            uni / s.samples as f64,
        );
    }
    Ok(())
}
