//! L1 eviction loss and its upper bounds.
//!
//! The bounds are evaluated as twice the row-norm constant times the evicted
//! attention mass, `2C Σ_i Σ_j (1 − I_i^j) A_i^j`. For rows that sum to one
//! this is the same quantity as `2hC − 2C Σ_i Σ_j I_i^j A_i^j`, and it is
//! exactly zero when nothing is evicted.

use crate::allocation::BudgetAllocation;
use crate::attention::{
    attention_output, group_size, post_eviction_output, AttentionWeights, EvictionDecision,
    LayerCache, LayerParams,
};
use crate::error::{dim_err, Error, Result};

/// `‖y − ŷ‖₁`.
pub fn l1_eviction_loss(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(dim_err(format!(
            "outputs have widths {} and {}",
            y.len(),
            y_hat.len()
        )));
    }
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b).abs()).sum())
}

/// Largest absolute row sum over all `V_i · W_i^O` products of the layer.
pub fn row_norm_constant(cache: &LayerCache, params: &LayerParams) -> Result<f64> {
    if cache.num_heads() != params.num_kv_heads() {
        return Err(dim_err("cache heads do not match layer"));
    }
    if cache.total_len() == 0 {
        return Err(dim_err("row-norm constant of an empty cache"));
    }
    let mut c = 0.0f64;
    for (i, p) in params.heads().iter().enumerate() {
        let projected = cache.head(params.kv_head_of(i))?.values.matmul(&p.wo)?;
        for row in projected.row_iter() {
            c = c.max(row.iter().map(|v| v.abs()).sum());
        }
    }
    Ok(c)
}

/// `‖A_i ⊙ I_i‖₁`.
pub fn retained_mass(a: &[f64], retained: &[bool]) -> f64 {
    debug_assert_eq!(a.len(), retained.len());
    a.iter()
        .zip(retained)
        .filter(|(_, &r)| r)
        .map(|(w, _)| w)
        .sum()
}

fn evicted_mass(a: &[f64], retained: &[bool]) -> f64 {
    a.iter()
        .zip(retained)
        .filter(|(_, &r)| !r)
        .map(|(w, _)| w)
        .sum()
}

fn check_constant(c: f64) -> Result<()> {
    if !(c.is_finite() && c >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "row-norm constant {c} must be finite and >= 0"
        )));
    }
    Ok(())
}

fn ascending(row: &[f64]) -> Vec<f64> {
    let mut v = row.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Sum of the `k` largest entries of `row`.
pub fn top_sum(row: &[f64], k: usize) -> f64 {
    let v = ascending(row);
    v[v.len().saturating_sub(k)..].iter().sum()
}

/// Sum of everything outside the `k` largest entries of `row`.
fn tail_sum(row: &[f64], k: usize) -> f64 {
    let v = ascending(row);
    v[..v.len().saturating_sub(k)].iter().sum()
}

/// Upper bound on the L1 eviction loss of an arbitrary decision.
///
/// `rows` holds one row per query head; `decision` holds one row per cache
/// head, shared by consecutive groups of query heads.
pub fn epsilon_bound(rows: &[Vec<f64>], decision: &EvictionDecision, c: f64) -> Result<f64> {
    check_constant(c)?;
    let g = group_size(rows.len(), decision.num_heads())?;
    let mut evicted = 0.0;
    for (i, a) in rows.iter().enumerate() {
        let mask = decision.head(i / g);
        if mask.len() != a.len() {
            return Err(dim_err(format!(
                "head {i}: decision length differs from weights"
            )));
        }
        evicted += evicted_mass(a, mask);
    }
    Ok(2.0 * c * evicted)
}

/// Bound attained by per-head Top-k eviction under the given budgets.
pub fn epsilon_star(rows: &[Vec<f64>], budgets: &BudgetAllocation, c: f64) -> Result<f64> {
    check_constant(c)?;
    if budgets.num_heads() != rows.len() {
        return Err(dim_err(format!(
            "{} budgets for {} heads",
            budgets.num_heads(),
            rows.len()
        )));
    }
    let mut evicted = 0.0;
    for (a, &b) in rows.iter().zip(budgets.per_head()) {
        if b > a.len() {
            return Err(Error::BudgetExceedsCapacity {
                requested: b,
                capacity: a.len(),
            });
        }
        evicted += tail_sum(a, b);
    }
    Ok(2.0 * c * evicted)
}

/// Bound attained when the `total_budget` largest weights of the whole layer
/// are retained.
pub fn epsilon_double_star(rows: &[Vec<f64>], total_budget: usize, c: f64) -> Result<f64> {
    check_constant(c)?;
    let all: Vec<f64> = rows.iter().flatten().copied().collect();
    if total_budget > all.len() {
        return Err(Error::BudgetExceedsCapacity {
            requested: total_budget,
            capacity: all.len(),
        });
    }
    Ok(2.0 * c * tail_sum(&all, total_budget))
}

/// Measured loss of one eviction decision together with its bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub l1_loss: f64,
    pub c_constant: f64,
    pub epsilon: f64,
    pub epsilon_star: Option<f64>,
    pub epsilon_double_star: Option<f64>,
    /// `F_i` per query head.
    pub retained_mass: Vec<f64>,
}

impl LossReport {
    /// Runs the forward pass with and without eviction and evaluates `ε`.
    /// When `budgets` is given, also evaluates `ε*` for those budgets and
    /// `ε**` for their total.
    pub fn measure(
        weights: &AttentionWeights,
        decision: &EvictionDecision,
        cache: &LayerCache,
        params: &LayerParams,
        budgets: Option<&BudgetAllocation>,
    ) -> Result<Self> {
        let y = attention_output(weights, cache, params)?;
        let y_hat = post_eviction_output(weights, decision, cache, params)?;
        let c = row_norm_constant(cache, params)?;
        let epsilon = epsilon_bound(weights.rows(), decision, c)?;
        let (epsilon_star, epsilon_double_star) = match budgets {
            Some(b) => (
                Some(self::epsilon_star(weights.rows(), b, c)?),
                Some(self::epsilon_double_star(weights.rows(), b.total(), c)?),
            ),
            None => (None, None),
        };
        let g = group_size(weights.num_heads(), decision.num_heads())?;
        let retained_mass = weights
            .rows()
            .iter()
            .enumerate()
            .map(|(i, a)| self::retained_mass(a, decision.head(i / g)))
            .collect();
        Ok(Self {
            l1_loss: l1_eviction_loss(&y, &y_hat)?,
            c_constant: c,
            epsilon,
            epsilon_star,
            epsilon_double_star,
            retained_mass,
        })
    }
}
