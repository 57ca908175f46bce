//! Head-wise budget allocation within one layer.
//!
//! Uniform splitting, the global Top-B adaptive allocation, the safeguard
//! blend between the two, and the pyramidal per-layer schedule.

use crate::attention::EvictionDecision;
use crate::error::{dim_err, Error, Result};

/// Default weight of the adaptive allocation in the safeguard blend.
pub const DEFAULT_ALPHA: f64 = 0.2;

/// Retained element counts per head.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BudgetAllocation {
    per_head: Vec<usize>,
}

impl BudgetAllocation {
    pub fn new(per_head: Vec<usize>) -> Self {
        Self { per_head }
    }

    pub fn per_head(&self) -> &[usize] {
        &self.per_head
    }

    pub fn num_heads(&self) -> usize {
        self.per_head.len()
    }

    pub fn total(&self) -> usize {
        self.per_head.iter().sum()
    }
}

/// Ordering applied when attention values tie during global Top-B selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieBreak {
    /// Ascending head index, then ascending position.
    #[default]
    HeadMajor,
    /// Ascending position, then ascending head index.
    PositionMajor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AllocationConfig {
    pub alpha: f64,
    pub tie_break: TieBreak,
}

impl Default for AllocationConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            tie_break: TieBreak::default(),
        }
    }
}

fn check_capacity(total: usize, caps: &[usize]) -> Result<()> {
    let capacity = caps.iter().fold(0usize, |acc, &c| acc.saturating_add(c));
    if total > capacity {
        return Err(Error::BudgetExceedsCapacity {
            requested: total,
            capacity,
        });
    }
    Ok(())
}

/// Clamps every head to its cap and hands the overflow to the lowest-index
/// heads that still have room.
fn spill_to_caps(mut budgets: Vec<usize>, caps: &[usize]) -> Result<Vec<usize>> {
    check_capacity(budgets.iter().sum(), caps)?;
    let mut overflow = 0;
    for (b, &cap) in budgets.iter_mut().zip(caps) {
        if *b > cap {
            overflow += *b - cap;
            *b = cap;
        }
    }
    for (b, &cap) in budgets.iter_mut().zip(caps) {
        if overflow == 0 {
            break;
        }
        let moved = (cap - *b).min(overflow);
        *b += moved;
        overflow -= moved;
    }
    Ok(budgets)
}

/// Integer apportionment of non-negative reals summing to `total`: floors
/// first, then one extra unit per head in order of decreasing fractional
/// part, lowest index first among equals.
pub fn largest_remainder(reals: &[f64], total: usize) -> Vec<usize> {
    const SNAP: f64 = 1e-9;
    let mut floors = Vec::with_capacity(reals.len());
    let mut fracs = Vec::with_capacity(reals.len());
    for &r in reals {
        let nearest = r.round();
        let f = if (r - nearest).abs() < SNAP {
            nearest
        } else {
            r.floor()
        };
        floors.push(f.max(0.0) as usize);
        fracs.push((r - f).max(0.0));
    }
    let mut order: Vec<usize> = (0..reals.len()).collect();
    order.sort_by(|&a, &b| fracs[b].total_cmp(&fracs[a]).then(a.cmp(&b)));
    let assigned: usize = floors.iter().sum();
    let mut remaining = total.saturating_sub(assigned);
    let mut k = 0;
    while remaining > 0 && !order.is_empty() {
        floors[order[k % order.len()]] += 1;
        remaining -= 1;
        k += 1;
    }
    let mut excess = assigned.saturating_sub(total);
    for &i in order.iter().rev() {
        if excess == 0 {
            break;
        }
        let take = floors[i].min(excess);
        floors[i] -= take;
        excess -= take;
    }
    floors
}

/// Even split of `total` over `num_heads`: the remainder goes one each to the
/// lowest-index heads, then anything above a head's cap spills to the
/// lowest-index heads with spare capacity.
pub fn uniform_allocation(
    total: usize,
    num_heads: usize,
    caps: &[usize],
) -> Result<BudgetAllocation> {
    if num_heads == 0 || caps.len() != num_heads {
        return Err(dim_err(format!(
            "{} caps for {num_heads} heads",
            caps.len()
        )));
    }
    check_capacity(total, caps)?;
    let base = total / num_heads;
    let rem = total % num_heads;
    let raw = (0..num_heads)
        .map(|i| base + usize::from(i < rem))
        .collect();
    Ok(BudgetAllocation::new(spill_to_caps(raw, caps)?))
}

/// Flags of the `total` largest weights across all heads of a layer.
pub fn global_topk(
    rows: &[Vec<f64>],
    total: usize,
    tie_break: TieBreak,
) -> Result<EvictionDecision> {
    let capacity: usize = rows.iter().map(Vec::len).sum();
    if total > capacity {
        return Err(Error::BudgetExceedsCapacity {
            requested: total,
            capacity,
        });
    }
    let mut entries: Vec<(usize, usize)> = rows
        .iter()
        .enumerate()
        .flat_map(|(h, r)| (0..r.len()).map(move |j| (h, j)))
        .collect();
    entries.sort_by(|&(ha, ja), &(hb, jb)| {
        rows[hb][jb]
            .total_cmp(&rows[ha][ja])
            .then_with(|| match tie_break {
                TieBreak::HeadMajor => (ha, ja).cmp(&(hb, jb)),
                TieBreak::PositionMajor => (ja, ha).cmp(&(jb, hb)),
            })
    });
    let mut flags: Vec<Vec<bool>> = rows.iter().map(|r| vec![false; r.len()]).collect();
    for &(h, j) in &entries[..total] {
        flags[h][j] = true;
    }
    Ok(EvictionDecision::new(flags))
}

/// Selects the `total` largest weights of the concatenated heads and gives
/// each head as many slots as it had weights selected.
pub fn adaptive_allocation(
    rows: &[Vec<f64>],
    total: usize,
    tie_break: TieBreak,
) -> Result<BudgetAllocation> {
    Ok(BudgetAllocation::new(
        global_topk(rows, total, tie_break)?.counts(),
    ))
}

/// Convex blend `α·B*_i + (1 − α)·total/h`, apportioned to integers that sum
/// to `total` and respect `caps`.
pub fn safeguard_blend(
    adaptive: &BudgetAllocation,
    total: usize,
    alpha: f64,
    caps: &[usize],
) -> Result<BudgetAllocation> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidConfig(format!(
            "alpha {alpha} outside [0, 1]"
        )));
    }
    if adaptive.total() != total {
        return Err(Error::InvalidConfig(format!(
            "adaptive allocation sums to {}, expected {total}",
            adaptive.total()
        )));
    }
    let h = adaptive.num_heads();
    if h == 0 || caps.len() != h {
        return Err(dim_err(format!("{} caps for {h} heads", caps.len())));
    }
    let share = total as f64 / h as f64;
    let reals: Vec<f64> = adaptive
        .per_head()
        .iter()
        .map(|&b| alpha * b as f64 + (1.0 - alpha) * share)
        .collect();
    Ok(BudgetAllocation::new(spill_to_caps(
        largest_remainder(&reals, total),
        caps,
    )?))
}

/// Raises every head to at least `floor` by taking single units from the
/// currently best-funded head (lowest index among equals).
pub fn enforce_floor(
    allocation: &BudgetAllocation,
    floor: usize,
    caps: &[usize],
) -> Result<BudgetAllocation> {
    let h = allocation.num_heads();
    if caps.len() != h {
        return Err(dim_err(format!("{} caps for {h} heads", caps.len())));
    }
    if caps.iter().any(|&c| c < floor) || allocation.total() < floor * h {
        return Err(Error::InvalidConfig(format!(
            "cannot give every head at least {floor} elements"
        )));
    }
    let mut b = allocation.per_head().to_vec();
    for i in 0..h {
        while b[i] < floor {
            let donor = (0..h)
                .filter(|&j| b[j] > floor)
                .max_by(|&x, &y| b[x].cmp(&b[y]).then(y.cmp(&x)))
                .expect("total covers the floor");
            b[donor] -= 1;
            b[i] += 1;
        }
    }
    Ok(BudgetAllocation::new(b))
}

/// Per-layer totals for a pyramidal schedule: layer `l` is weighted by
/// `β_max − (β_max − β_min)·l/(L − 1)`, weights are rescaled so the layers
/// sum to `L·per_layer_avg`, then apportioned by largest remainder.
pub fn pyramid_layer_budgets(
    per_layer_avg: usize,
    num_layers: usize,
    beta_max: f64,
    beta_min: f64,
) -> Result<Vec<usize>> {
    if num_layers == 0 {
        return Err(Error::InvalidConfig(
            "pyramid schedule needs at least one layer".into(),
        ));
    }
    if !(beta_min.is_finite() && beta_max.is_finite() && beta_min > 0.0 && beta_max >= beta_min) {
        return Err(Error::InvalidConfig(format!(
            "pyramid betas must satisfy beta_max >= beta_min > 0 (got {beta_max}, {beta_min})"
        )));
    }
    if num_layers == 1 {
        return Ok(vec![per_layer_avg]);
    }
    let span = (num_layers - 1) as f64;
    let weights: Vec<f64> = (0..num_layers)
        .map(|l| beta_max - (beta_max - beta_min) * l as f64 / span)
        .collect();
    let weight_sum: f64 = weights.iter().sum();
    let total = per_layer_avg * num_layers;
    let reals: Vec<f64> = weights
        .iter()
        .map(|w| total as f64 * w / weight_sum)
        .collect();
    Ok(largest_remainder(&reals, total))
}

#[cfg(test)]
mod tests {
    use super::*;

    const AMPLE: usize = usize::MAX / 16;

    fn worked() -> Vec<Vec<f64>> {
        vec![vec![0.4, 0.3, 0.3], vec![0.98, 0.01, 0.01]]
    }

    #[test]
    fn uniform_examples() {
        assert_eq!(
            uniform_allocation(9, 3, &[AMPLE; 3]).unwrap().per_head(),
            &[3, 3, 3]
        );
        assert_eq!(
            uniform_allocation(10, 3, &[AMPLE; 3]).unwrap().per_head(),
            &[4, 3, 3]
        );
        assert_eq!(
            uniform_allocation(4, 2, &[1, 10]).unwrap().per_head(),
            &[1, 3]
        );
        assert!(matches!(
            uniform_allocation(12, 2, &[1, 10]),
            Err(Error::BudgetExceedsCapacity { .. })
        ));
    }

    #[test]
    fn adaptive_examples() {
        assert_eq!(
            adaptive_allocation(&worked(), 4, TieBreak::HeadMajor)
                .unwrap()
                .per_head(),
            &[3, 1]
        );
        assert_eq!(
            adaptive_allocation(&worked(), 6, TieBreak::HeadMajor)
                .unwrap()
                .per_head(),
            &[3, 3]
        );
        assert_eq!(
            adaptive_allocation(&worked(), 0, TieBreak::HeadMajor)
                .unwrap()
                .per_head(),
            &[0, 0]
        );
        assert!(adaptive_allocation(&worked(), 7, TieBreak::HeadMajor).is_err());
    }

    #[test]
    fn adaptive_tie_rules() {
        let flat = vec![vec![0.25; 4]; 2];
        assert_eq!(
            adaptive_allocation(&flat, 3, TieBreak::HeadMajor)
                .unwrap()
                .per_head(),
            &[3, 0]
        );
        assert_eq!(
            adaptive_allocation(&flat, 3, TieBreak::PositionMajor)
                .unwrap()
                .per_head(),
            &[2, 1]
        );
    }

    #[test]
    fn safeguard_examples() {
        let adaptive = BudgetAllocation::new(vec![9, 1]);
        assert_eq!(
            safeguard_blend(&adaptive, 10, 1.0, &[AMPLE; 2]).unwrap(),
            adaptive
        );
        assert_eq!(
            safeguard_blend(&adaptive, 10, 0.0, &[AMPLE; 2]).unwrap(),
            uniform_allocation(10, 2, &[AMPLE; 2]).unwrap()
        );
        assert_eq!(
            safeguard_blend(&adaptive, 10, 0.2, &[AMPLE; 2])
                .unwrap()
                .per_head(),
            &[6, 4]
        );
        let odd = BudgetAllocation::new(vec![7, 0, 3]);
        assert_eq!(
            safeguard_blend(&odd, 10, 0.0, &[AMPLE; 3]).unwrap(),
            uniform_allocation(10, 3, &[AMPLE; 3]).unwrap()
        );
        assert!(safeguard_blend(&adaptive, 10, 1.5, &[AMPLE; 2]).is_err());
        assert!(safeguard_blend(&adaptive, 10, 0.2, &[3, 3]).is_err());
    }

    #[test]
    fn floor_repair_takes_from_richest() {
        let b = BudgetAllocation::new(vec![0, 5, 0, 5]);
        assert_eq!(
            enforce_floor(&b, 1, &[AMPLE; 4]).unwrap().per_head(),
            &[1, 4, 1, 4]
        );
        assert!(enforce_floor(&BudgetAllocation::new(vec![1, 0, 0]), 1, &[AMPLE; 3]).is_err());
    }

    #[test]
    fn pyramid_examples() {
        assert_eq!(pyramid_layer_budgets(77, 1, 1.5, 0.5).unwrap(), vec![77]);
        assert_eq!(
            pyramid_layer_budgets(100, 3, 1.5, 0.5).unwrap(),
            vec![150, 100, 50]
        );
        assert_eq!(pyramid_layer_budgets(40, 5, 1.0, 1.0).unwrap(), vec![40; 5]);
        assert!(pyramid_layer_budgets(40, 5, 0.5, 1.0).is_err());
        assert!(pyramid_layer_budgets(40, 5, 1.0, 0.0).is_err());
        assert!(pyramid_layer_budgets(40, 0, 1.5, 0.5).is_err());
    }

    #[test]
    fn largest_remainder_handles_fp_noise() {
        assert_eq!(
            largest_remainder(&[5.999999999999999, 4.000000000000001], 10),
            vec![6, 4]
        );
        assert_eq!(largest_remainder(&[1.0 / 3.0; 3], 1), vec![1, 0, 0]);
    }
}
