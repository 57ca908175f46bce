//! Eviction policies for one layer after prefill.
//!
//! SnapKV-style policies score the cache outside the observation window with
//! the window's queries (softmax, max-pool along keys, mean over queries) and
//! keep the Top-k per head. The adaptive variants replace the uniform
//! per-head split with the global Top-B allocation blended toward uniform by
//! `alpha`. StreamingLLM keeps attention sinks plus the most recent tokens.

use std::fmt;
use std::str::FromStr;

use crate::allocation::{
    adaptive_allocation, enforce_floor, safeguard_blend, uniform_allocation, BudgetAllocation,
    TieBreak, DEFAULT_ALPHA,
};
use crate::attention::{attention_weights, EvictionDecision, LayerCache, LayerParams, LogitScale};
use crate::error::{dim_err, Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PolicyKind {
    SnapKv,
    Pyramid,
    AdaSnapKv,
    AdaPyramid,
    StreamingLlm,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::SnapKv,
        PolicyKind::Pyramid,
        PolicyKind::AdaSnapKv,
        PolicyKind::AdaPyramid,
        PolicyKind::StreamingLlm,
    ];

    pub fn is_adaptive(self) -> bool {
        matches!(self, PolicyKind::AdaSnapKv | PolicyKind::AdaPyramid)
    }

    /// Whether per-layer budgets follow the pyramidal schedule.
    pub fn is_pyramid(self) -> bool {
        matches!(self, PolicyKind::Pyramid | PolicyKind::AdaPyramid)
    }

    /// The uniform-allocation counterpart of an adaptive kind.
    pub fn uniform_counterpart(self) -> Option<PolicyKind> {
        match self {
            PolicyKind::AdaSnapKv => Some(PolicyKind::SnapKv),
            PolicyKind::AdaPyramid => Some(PolicyKind::Pyramid),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::SnapKv => "snapkv",
            PolicyKind::Pyramid => "pyramid",
            PolicyKind::AdaSnapKv => "ada_snapkv",
            PolicyKind::AdaPyramid => "ada_pyramid",
            PolicyKind::StreamingLlm => "streaming_llm",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown policy {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    pub window_size: usize,
    pub pool_kernel: usize,
    pub alpha: f64,
    pub sink_tokens: usize,
    pub gqa_group_size: usize,
    pub scale: LogitScale,
    pub tie_break: TieBreak,
}

impl PolicyConfig {
    /// Window 32, pooling kernel 7, alpha 0.2, 4 sink tokens, no grouping.
    pub fn new(kind: PolicyKind) -> Self {
        Self {
            kind,
            window_size: 32,
            pool_kernel: 7,
            alpha: DEFAULT_ALPHA,
            sink_tokens: 4,
            gqa_group_size: 1,
            scale: LogitScale::default(),
            tie_break: TieBreak::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_size == 0 {
            return Err(Error::InvalidConfig(
                "window_size must be at least 1".into(),
            ));
        }
        if self.pool_kernel.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "pool_kernel must be odd, got {}",
                self.pool_kernel
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        if self.gqa_group_size == 0 {
            return Err(Error::InvalidConfig(
                "gqa_group_size must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Retains the `k` largest entries of `a`, lowest position first among ties.
pub fn topk_decision(a: &[f64], k: usize) -> Result<Vec<bool>> {
    if k > a.len() {
        return Err(Error::BudgetExceedsCapacity {
            requested: k,
            capacity: a.len(),
        });
    }
    let mut order: Vec<usize> = (0..a.len()).collect();
    order.sort_by(|&x, &y| a[y].total_cmp(&a[x]).then(x.cmp(&y)));
    let mut keep = vec![false; a.len()];
    for &j in &order[..k] {
        keep[j] = true;
    }
    Ok(keep)
}

/// Stride-1 sliding maximum; cells past either end do not take part.
pub fn max_pool1d(row: &[f64], kernel: usize) -> Vec<f64> {
    let r = kernel / 2;
    (0..row.len())
        .map(|j| {
            let lo = j.saturating_sub(r);
            let hi = (j + r + 1).min(row.len());
            row[lo..hi]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// Observation-window score of every key outside the window.
pub fn window_scores(
    window_queries: &Matrix,
    outside_keys: &Matrix,
    pool_kernel: usize,
    scale: LogitScale,
) -> Result<Vec<f64>> {
    if pool_kernel.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!(
            "pool_kernel must be odd, got {pool_kernel}"
        )));
    }
    if window_queries.rows() == 0 {
        return Err(dim_err("observation window has no queries"));
    }
    let weights = attention_weights(window_queries, outside_keys, scale)?;
    let mut acc = vec![0.0; outside_keys.rows()];
    for row in weights.row_iter() {
        for (a, p) in acc.iter_mut().zip(max_pool1d(row, pool_kernel)) {
            *a += p;
        }
    }
    let m = window_queries.rows() as f64;
    Ok(acc.into_iter().map(|s| s / m).collect())
}

/// Elementwise mean of each run of `group_size` consecutive head scores.
pub fn group_mean_scores(scores: &[Vec<f64>], group_size: usize) -> Result<Vec<Vec<f64>>> {
    if group_size == 0 || !scores.len().is_multiple_of(group_size) {
        return Err(Error::InvalidConfig(format!(
            "{} heads cannot form groups of {group_size}",
            scores.len()
        )));
    }
    if group_size == 1 {
        return Ok(scores.to_vec());
    }
    scores
        .chunks(group_size)
        .map(|group| {
            let n = group[0].len();
            if group.iter().any(|s| s.len() != n) {
                return Err(dim_err("grouped heads score different cache lengths"));
            }
            Ok((0..n)
                .map(|j| group.iter().map(|s| s[j]).sum::<f64>() / group_size as f64)
                .collect())
        })
        .collect()
}

/// Keeps positions `[0, sink)` and `[n − recent, n)`.
pub fn streaming_llm_decision(n: usize, sink: usize, recent: usize) -> Vec<bool> {
    let recent_start = n.saturating_sub(recent);
    (0..n).map(|j| j < sink || j >= recent_start).collect()
}

/// Outcome of evicting one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerEviction {
    /// Retained outside elements in original order, followed by the window.
    pub retained: LayerCache,
    /// Flags over the elements outside the window, per cache head.
    pub decision: EvictionDecision,
    /// Outside-window budget per cache head; matches `decision.counts()`.
    pub allocation: BudgetAllocation,
    /// Observation scores per cache head that drove the selection.
    pub scores: Vec<Vec<f64>>,
    window_len: usize,
}

impl LayerEviction {
    /// Decision over the full cache (outside elements then the window).
    pub fn full_decision(&self) -> EvictionDecision {
        let extra = vec![self.window_len; self.decision.num_heads()];
        self.decision
            .append_retained(&extra)
            .expect("one extension per head")
    }
}

/// Scores of every query head against its cache head, reduced to one score
/// row per cache head.
pub fn observation_scores(
    outside: &LayerCache,
    window_embeddings: &Matrix,
    params: &LayerParams,
    config: &PolicyConfig,
) -> Result<Vec<Vec<f64>>> {
    let per_query = (0..params.num_heads())
        .map(|i| {
            let queries = params.project_queries(i, window_embeddings)?;
            let keys = &outside.head(params.kv_head_of(i))?.keys;
            window_scores(&queries, keys, config.pool_kernel, config.scale)
        })
        .collect::<Result<Vec<_>>>()?;
    group_mean_scores(&per_query, config.gqa_group_size)
}

/// Evicts the cache outside the observation window down to `layer_budget`
/// elements in total, window included.
pub fn evict_layer(
    outside: &LayerCache,
    window: &LayerCache,
    window_embeddings: &Matrix,
    params: &LayerParams,
    layer_budget: usize,
    config: &PolicyConfig,
) -> Result<LayerEviction> {
    check_layer(outside, window, params, config)?;
    if window_embeddings.rows() != config.window_size {
        return Err(dim_err(format!(
            "observation window must hold exactly {} tokens",
            config.window_size
        )));
    }
    let scores = observation_scores(outside, window_embeddings, params, config)?;
    evict_with_scores(outside, window, params, scores, layer_budget, config)
}

fn check_layer(
    outside: &LayerCache,
    window: &LayerCache,
    params: &LayerParams,
    config: &PolicyConfig,
) -> Result<()> {
    config.validate()?;
    let h = outside.num_heads();
    if window.num_heads() != h || params.num_kv_heads() != h {
        return Err(dim_err(format!(
            "outside cache has {h} heads, window {}, layer expects {}",
            window.num_heads(),
            params.num_kv_heads()
        )));
    }
    if config.gqa_group_size != params.kv_group_size() {
        return Err(Error::InvalidConfig(format!(
            "policy group size {} differs from layer group size {}",
            config.gqa_group_size,
            params.kv_group_size()
        )));
    }
    let m = config.window_size;
    if window.lengths().iter().any(|&l| l != m) {
        return Err(dim_err(format!(
            "observation window must hold exactly {m} tokens per head"
        )));
    }
    Ok(())
}

/// Same as [`evict_layer`] with observation scores computed beforehand, one
/// row per cache head.
pub fn evict_with_scores(
    outside: &LayerCache,
    window: &LayerCache,
    params: &LayerParams,
    scores: Vec<Vec<f64>>,
    layer_budget: usize,
    config: &PolicyConfig,
) -> Result<LayerEviction> {
    check_layer(outside, window, params, config)?;
    let h = outside.num_heads();
    let m = config.window_size;
    let caps = outside.lengths();
    if scores.len() != h || scores.iter().zip(&caps).any(|(s, &n)| s.len() != n) {
        return Err(dim_err("scores do not match the outside cache"));
    }
    let floor = m * h + h;
    if layer_budget < floor {
        return Err(Error::BudgetBelowFloor {
            budget: layer_budget,
            floor,
            window: m,
            heads: h,
        });
    }
    let budget = layer_budget - m * h;
    if caps.contains(&0) {
        return Err(dim_err(
            "a head has an empty outside cache but a positive budget",
        ));
    }
    let capacity: usize = caps.iter().sum();
    if budget > capacity {
        return Err(Error::BudgetExceedsCapacity {
            requested: layer_budget,
            capacity: capacity + m * h,
        });
    }

    let allocation = if config.kind.is_adaptive() {
        let adaptive = adaptive_allocation(&scores, budget, config.tie_break)?;
        safeguard_blend(&adaptive, budget, config.alpha, &caps)?
    } else {
        uniform_allocation(budget, h, &caps)?
    };
    let allocation = enforce_floor(&allocation, 1, &caps)?;

    let flags = allocation
        .per_head()
        .iter()
        .zip(&scores)
        .map(|(&b, s)| match config.kind {
            PolicyKind::StreamingLlm => {
                let sink = config.sink_tokens.min(b);
                Ok(streaming_llm_decision(s.len(), sink, b - sink))
            }
            _ => topk_decision(s, b),
        })
        .collect::<Result<Vec<_>>>()?;
    let decision = EvictionDecision::new(flags);
    debug_assert_eq!(decision.counts(), allocation.per_head());
    let retained = outside.select(&decision)?.concat(window)?;
    Ok(LayerEviction {
        retained,
        decision,
        allocation,
        scores,
        window_len: m,
    })
}
