//! Splitting one budget across heads: uniform, adaptive (global top-k),
//! the safeguard blend, and a pyramidal split across layers.

use adakv::allocation::{enforce_floor, global_topk};
use adakv::*;

fn main() -> Result<()> {
    let rows = vec![
        vec![0.70, 0.20, 0.05, 0.03, 0.02],
        vec![0.22, 0.20, 0.20, 0.19, 0.19],
        vec![0.90, 0.04, 0.03, 0.02, 0.01],
    ];
    let caps = vec![5; 3];
    let total = 7;

    println!(
        "uniform    {:?}",
        uniform_allocation(total, 3, &caps)?.per_head()
    );
    let ada = adaptive_allocation(&rows, total, TieBreak::HeadMajor)?;
    println!("adaptive   {:?}", ada.per_head());
    println!(
        "selected   {:?}",
        global_topk(&rows, total, TieBreak::HeadMajor)?.heads()
    );
    for alpha in [0.2, 0.5, 1.0] {
        let blend = safeguard_blend(&ada, total, alpha, &caps)?;
        println!(
            "alpha {alpha:.1}  {:?}",
            enforce_floor(&blend, 1, &caps)?.per_head()
        );
    }
    println!("pyramid    {:?}", pyramid_layer_budgets(64, 4, 1.5, 0.5)?);
    Ok(())
}
