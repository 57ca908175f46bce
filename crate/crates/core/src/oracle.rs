//! Exhaustive reference searches used to check the closed-form results.
//!
//! Nothing here calls into the allocation or bound code: every quantity is
//! recomputed from subsets and compositions directly, and bounds use the
//! `2hC − 2C Σ I·A` form rather than the evicted-mass form.

/// `C(n, k)`, saturating.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| {
        acc.saturating_mul((n - i) as u128) / (i as u128 + 1)
    })
}

/// Every subset of `0..n` with exactly `k` members, as bitmasks.
pub fn subsets_of_size(n: usize, k: usize) -> Vec<u64> {
    assert!(n < 64, "bitmask enumeration limited to 63 positions");
    (0u64..1 << n)
        .filter(|m| m.count_ones() as usize == k)
        .collect()
}

fn masked_sum(row: &[f64], mask: u64) -> f64 {
    row.iter()
        .enumerate()
        .filter(|(j, _)| mask >> j & 1 == 1)
        .map(|(_, w)| w)
        .sum()
}

/// Bound of an explicit retain-set per head.
pub fn epsilon_of_masks(rows: &[Vec<f64>], masks: &[u64], c: f64) -> f64 {
    let h = rows.len() as f64;
    let kept: f64 = rows.iter().zip(masks).map(|(r, &m)| masked_sum(r, m)).sum();
    2.0 * h * c - 2.0 * c * kept
}

/// Minimum of the bound over every joint choice of retain-sets with
/// `budgets[i]` members in head `i`.
pub fn min_epsilon_over_retain_sets(rows: &[Vec<f64>], budgets: &[usize], c: f64) -> f64 {
    let choices: Vec<Vec<u64>> = rows
        .iter()
        .zip(budgets)
        .map(|(r, &b)| subsets_of_size(r.len(), b))
        .collect();
    let mut best = f64::INFINITY;
    let mut pick = vec![0u64; rows.len()];
    fn walk(
        head: usize,
        choices: &[Vec<u64>],
        pick: &mut [u64],
        rows: &[Vec<f64>],
        c: f64,
        best: &mut f64,
    ) {
        if head == choices.len() {
            *best = best.min(epsilon_of_masks(rows, pick, c));
            return;
        }
        for &m in &choices[head] {
            pick[head] = m;
            walk(head + 1, choices, pick, rows, c, best);
        }
    }
    walk(0, &choices, &mut pick, rows, c, &mut best);
    best
}

/// Number of retain-set combinations `min_epsilon_over_retain_sets` visits.
pub fn retain_set_count(lengths: &[usize], budgets: &[usize]) -> u128 {
    lengths
        .iter()
        .zip(budgets)
        .fold(1u128, |acc, (&n, &b)| acc.saturating_mul(binomial(n, b)))
}

/// Every way to write `total` as an ordered sum of `caps.len()` parts with
/// `0 <= part_i <= caps[i]`.
pub fn compositions(total: usize, caps: &[usize]) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(caps.len());
    fn rec(rest: usize, caps: &[usize], cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let i = cur.len();
        if i == caps.len() {
            if rest == 0 {
                out.push(cur.clone());
            }
            return;
        }
        let tail: usize = caps[i + 1..].iter().sum();
        for part in rest.saturating_sub(tail)..=rest.min(caps[i]) {
            cur.push(part);
            rec(rest - part, caps, cur, out);
            cur.pop();
        }
    }
    rec(total, caps, &mut cur, &mut out);
    out
}

/// Largest sum reachable with `k` entries of `row`, by trying every subset.
pub fn best_subset_sum(row: &[f64], k: usize) -> f64 {
    subsets_of_size(row.len(), k)
        .into_iter()
        .map(|m| masked_sum(row, m))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Best retained mass and smallest Top-k bound over all allocations of
/// `total`, with the allocation that attains them.
pub fn best_allocation(rows: &[Vec<f64>], total: usize, c: f64) -> (f64, f64, Vec<usize>) {
    let caps: Vec<usize> = rows.iter().map(Vec::len).collect();
    let h = rows.len() as f64;
    let mut best = (f64::NEG_INFINITY, Vec::new());
    for alloc in compositions(total, &caps) {
        let mass: f64 = rows
            .iter()
            .zip(&alloc)
            .map(|(r, &b)| best_subset_sum(r, b))
            .sum();
        if mass > best.0 {
            best = (mass, alloc);
        }
    }
    let (mass, alloc) = best;
    (mass, 2.0 * h * c - 2.0 * c * mass, alloc)
}
