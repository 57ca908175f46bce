//! Randomized check of the loss bound and the optimality of top-k selection
//! and adaptive allocation against exhaustive search, then the same run
//! with a deliberately shrunk bound to show the checker can fail.

use adakv::verify::{verify_theorems, VerifyOptions};

fn main() -> adakv::Result<()> {
    let trials = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(300);
    let report = verify_theorems(&VerifyOptions::new(0, trials))?;
    for p in &report.properties {
        println!(
            "{:<26} {:>4} trials  {} violations  worst margin {:.3e}",
            p.property.name(),
            p.trials,
            p.violations,
            p.worst_margin
        );
    }
    let broken = verify_theorems(&VerifyOptions {
        epsilon_offset: 0.1,
        ..VerifyOptions::new(0, trials)
    })?;
    println!(
        "with the bound lowered by 0.1: passed = {}",
        broken.passed()
    );
    Ok(())
}
