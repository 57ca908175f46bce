//! Policy comparison over a full trace: for every sample, budget fraction
//! and policy, evict each layer, replay the last window query, and record
//! the measured loss next to its bounds.

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::allocation::pyramid_layer_budgets;
use crate::attention::{attention_output, post_eviction_output, AttentionWeights, LayerCache};
use crate::error::{Error, Result};
use crate::loss::{
    epsilon_bound, epsilon_double_star, epsilon_star, l1_eviction_loss, retained_mass,
    row_norm_constant,
};
use crate::policy::{evict_with_scores, observation_scores, PolicyConfig, PolicyKind};
use crate::report::{Cell, JsonObject, Tabular};
use crate::trace::{FullLayer, Trace, TracePayload};
use crate::with_workers;

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonConfig {
    pub budget_fractions: Vec<f64>,
    pub policies: Vec<PolicyConfig>,
    /// `(beta_max, beta_min)` of the pyramidal layer schedule.
    pub pyramid_betas: (f64, f64),
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl ComparisonConfig {
    pub fn new(budget_fractions: Vec<f64>, policies: Vec<PolicyConfig>) -> Self {
        Self {
            budget_fractions,
            policies,
            pyramid_betas: (1.5, 0.5),
            workers: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if let Some(f) = self
            .budget_fractions
            .iter()
            .find(|f| !(**f > 0.0 && **f <= 1.0))
        {
            return Err(Error::InvalidConfig(format!(
                "budget fraction {f} outside (0, 1]"
            )));
        }
        for p in &self.policies {
            p.validate()?;
        }
        Ok(())
    }

    /// Short digest of everything besides the trace that shapes a row.
    pub fn fingerprint(&self, policy: &PolicyConfig, fraction: f64) -> String {
        let text = format!(
            "{}|w{}|k{}|a{:e}|s{}|g{}|{:?}|{:?}|f{:e}|b{:e},{:e}",
            policy.kind,
            policy.window_size,
            policy.pool_kernel,
            policy.alpha,
            policy.sink_tokens,
            policy.gqa_group_size,
            policy.scale,
            policy.tie_break,
            fraction,
            self.pyramid_betas.0,
            self.pyramid_betas.1
        );
        hex::encode(&Sha256::digest(text.as_bytes())[..8])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub sample: usize,
    pub budget_fraction: f64,
    /// Per-layer average budget, window included.
    pub budget: usize,
    pub policy: PolicyKind,
    /// Measured loss, summed over layers.
    pub l1_loss: f64,
    /// Bound of the decision actually taken, summed over layers.
    pub epsilon: f64,
    /// Top-k bound of the chosen allocation on the observation scores.
    pub epsilon_star: f64,
    /// Smallest Top-k bound over all allocations on the observation scores.
    pub epsilon_double_star: f64,
    /// Retained attention mass of the replayed query, summed over heads and
    /// layers.
    pub retained_mass: f64,
    /// Outside-window budget per cache head, one list per layer.
    pub allocation: Vec<Vec<usize>>,
    pub fingerprint: String,
    pub seed: u64,
}

/// Share of samples on which an adaptive policy beat its uniform counterpart.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSummary {
    pub budget_fraction: f64,
    pub adaptive: PolicyKind,
    pub uniform: PolicyKind,
    pub samples: usize,
    pub adaptive_wins: usize,
}

impl PairSummary {
    pub fn win_fraction(&self) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            self.adaptive_wins as f64 / self.samples as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub summaries: Vec<PairSummary>,
}

/// Rounds `fraction · capacity` up, ignoring representation error below 1e-9.
pub fn budget_for_fraction(fraction: f64, capacity: usize) -> usize {
    ((fraction * capacity as f64 - 1e-9).ceil().max(0.0) as usize).min(capacity)
}

struct LayerOutcome {
    loss: f64,
    epsilon: f64,
    epsilon_star: f64,
    epsilon_double_star: f64,
    retained_mass: f64,
    allocation: Vec<usize>,
}

/// Everything about a layer that does not depend on the policy.
struct LayerContext<'a> {
    layer: &'a FullLayer,
    outside: LayerCache,
    window: LayerCache,
    full: LayerCache,
    c: f64,
}

impl<'a> LayerContext<'a> {
    fn new(layer: &'a FullLayer) -> Result<Self> {
        let outside = layer.outside_cache()?;
        let window = layer.window_cache()?;
        let full = outside.concat(&window)?;
        let c = row_norm_constant(&full, &layer.params)?;
        Ok(Self {
            layer,
            outside,
            window,
            full,
            c,
        })
    }
}

/// What a policy's settings fix before any budget is chosen.
struct PolicyContext {
    scores: Vec<Vec<f64>>,
    weights: AttentionWeights,
    y: Vec<f64>,
}

impl PolicyContext {
    fn new(ctx: &LayerContext<'_>, policy: &PolicyConfig) -> Result<Self> {
        let params = &ctx.layer.params;
        let scores =
            observation_scores(&ctx.outside, &ctx.layer.window_embeddings, params, policy)?;
        let weights = ctx.layer.last_query_weights(&ctx.full, policy.scale)?;
        let y = attention_output(&weights, &ctx.full, params)?;
        Ok(Self { scores, weights, y })
    }
}

fn run_layer(
    ctx: &LayerContext<'_>,
    pc: &PolicyContext,
    budget: usize,
    policy: &PolicyConfig,
) -> Result<LayerOutcome> {
    let params = &ctx.layer.params;
    let eviction = evict_with_scores(
        &ctx.outside,
        &ctx.window,
        params,
        pc.scores.clone(),
        budget,
        policy,
    )?;
    let decision = eviction.full_decision();
    let y_hat = post_eviction_output(&pc.weights, &decision, &ctx.full, params)?;
    let g = params.kv_group_size();
    let mass = pc
        .weights
        .rows()
        .iter()
        .enumerate()
        .map(|(i, a)| retained_mass(a, decision.head(i / g)))
        .sum();
    Ok(LayerOutcome {
        loss: l1_eviction_loss(&pc.y, &y_hat)?,
        epsilon: epsilon_bound(pc.weights.rows(), &decision, ctx.c)?,
        epsilon_star: epsilon_star(&eviction.scores, &eviction.allocation, ctx.c)?,
        epsilon_double_star: epsilon_double_star(
            &eviction.scores,
            eviction.allocation.total(),
            ctx.c,
        )?,
        retained_mass: mass,
        allocation: eviction.allocation.per_head().to_vec(),
    })
}

/// Clamps a layer schedule to `[floor, capacity]` and hands whatever the
/// clamp removed or added to the other layers, earliest first, so the total
/// is kept whenever it fits.
fn fit_layer_budgets(mut budgets: Vec<usize>, floor: usize, capacity: usize) -> Vec<usize> {
    let target: usize = budgets.iter().sum();
    for b in budgets.iter_mut() {
        *b = (*b).clamp(floor, capacity);
    }
    let mut total: usize = budgets.iter().sum();
    for b in budgets.iter_mut() {
        if total < target {
            let add = (capacity - *b).min(target - total);
            *b += add;
            total += add;
        } else if total > target {
            let take = (*b - floor).min(total - target);
            *b -= take;
            total -= take;
        }
    }
    budgets
}

fn run_sample(
    trace: &Trace,
    sample: usize,
    layers: &[FullLayer],
    config: &ComparisonConfig,
) -> Result<Vec<ComparisonRow>> {
    let mut rows = Vec::with_capacity(config.budget_fractions.len() * config.policies.len());
    let contexts = layers
        .iter()
        .map(LayerContext::new)
        .collect::<Result<Vec<_>>>()?;
    let per_policy = config
        .policies
        .iter()
        .map(|p| {
            contexts
                .iter()
                .map(|ctx| PolicyContext::new(ctx, p))
                .collect()
        })
        .collect::<Result<Vec<Vec<_>>>>()?;
    let first = &layers[0];
    let h_kv = first.params.num_kv_heads();
    let capacity = h_kv * (first.embeddings.rows() + first.window_embeddings.rows());
    for &fraction in &config.budget_fractions {
        let avg = budget_for_fraction(fraction, capacity);
        for (policy, pcs) in config.policies.iter().zip(&per_policy) {
            let per_layer = if policy.kind.is_pyramid() {
                let (hi, lo) = config.pyramid_betas;
                let floor = h_kv * (policy.window_size + 1);
                fit_layer_budgets(
                    pyramid_layer_budgets(avg, layers.len(), hi, lo)?,
                    floor,
                    capacity,
                )
            } else {
                vec![avg; layers.len()]
            };
            let mut acc = ComparisonRow {
                sample,
                budget_fraction: fraction,
                budget: avg,
                policy: policy.kind,
                l1_loss: 0.0,
                epsilon: 0.0,
                epsilon_star: 0.0,
                epsilon_double_star: 0.0,
                retained_mass: 0.0,
                allocation: Vec::with_capacity(layers.len()),
                fingerprint: config.fingerprint(policy, fraction),
                seed: trace.seed,
            };
            for ((ctx, pc), &b) in contexts.iter().zip(pcs).zip(&per_layer) {
                let out = run_layer(ctx, pc, b, policy)?;
                acc.l1_loss += out.loss;
                acc.epsilon += out.epsilon;
                acc.epsilon_star += out.epsilon_star;
                acc.epsilon_double_star += out.epsilon_double_star;
                acc.retained_mass += out.retained_mass;
                acc.allocation.push(out.allocation);
            }
            rows.push(acc);
        }
    }
    Ok(rows)
}

fn summarize(rows: &[ComparisonRow], config: &ComparisonConfig) -> Vec<PairSummary> {
    let mut out = Vec::new();
    for &fraction in &config.budget_fractions {
        for adaptive in config
            .policies
            .iter()
            .map(|p| p.kind)
            .filter(|k| k.is_adaptive())
        {
            let Some(uniform) = adaptive.uniform_counterpart() else {
                continue;
            };
            if !config.policies.iter().any(|p| p.kind == uniform) {
                continue;
            }
            let pick = |kind: PolicyKind| {
                rows.iter()
                    .filter(move |r| r.budget_fraction == fraction && r.policy == kind)
            };
            let mut samples = 0;
            let mut wins = 0;
            for (a, u) in pick(adaptive).zip(pick(uniform)) {
                debug_assert_eq!(a.sample, u.sample);
                samples += 1;
                wins += usize::from(a.l1_loss < u.l1_loss);
            }
            out.push(PairSummary {
                budget_fraction: fraction,
                adaptive,
                uniform,
                samples,
                adaptive_wins: wins,
            });
        }
    }
    out
}

/// Runs every policy at every budget fraction on every sample of a full
/// trace. Rows are ordered by sample, then fraction, then policy.
pub fn run_comparison(trace: &Trace, config: &ComparisonConfig) -> Result<ComparisonReport> {
    config.validate()?;
    let TracePayload::Full(samples) = &trace.payload else {
        return Err(Error::Capability(
            "loss comparison needs a full trace; this trace only stores attention weights".into(),
        ));
    };
    let per_sample: Vec<Result<Vec<ComparisonRow>>> = with_workers(config.workers, || {
        samples
            .par_iter()
            .enumerate()
            .map(|(s, layers)| run_sample(trace, s, layers, config))
            .collect()
    })?;
    let mut rows = Vec::new();
    for r in per_sample {
        rows.extend(r?);
    }
    let summaries = summarize(&rows, config);
    Ok(ComparisonReport { rows, summaries })
}

impl Tabular for ComparisonReport {
    fn columns(&self) -> Vec<&'static str> {
        vec![
            "sample",
            "budget_fraction",
            "budget",
            "policy",
            "l1_loss",
            "epsilon",
            "epsilon_star",
            "epsilon_double_star",
            "retained_mass",
            "allocation",
            "fingerprint",
            "seed",
        ]
    }

    fn records(&self) -> Vec<Vec<Cell>> {
        self.rows
            .iter()
            .map(|r| {
                let allocation = r
                    .allocation
                    .iter()
                    .map(|l| l.iter().map(usize::to_string).collect::<Vec<_>>().join(";"))
                    .collect::<Vec<_>>()
                    .join("|");
                vec![
                    Cell::Int(r.sample as u64),
                    Cell::Float(r.budget_fraction),
                    Cell::Int(r.budget as u64),
                    Cell::Text(r.policy.to_string()),
                    Cell::Float(r.l1_loss),
                    Cell::Float(r.epsilon),
                    Cell::Float(r.epsilon_star),
                    Cell::Float(r.epsilon_double_star),
                    Cell::Float(r.retained_mass),
                    Cell::Text(allocation),
                    Cell::Text(r.fingerprint.clone()),
                    Cell::Int(r.seed),
                ]
            })
            .collect()
    }

    fn json_extras(&self) -> Vec<(&'static str, Vec<JsonObject>)> {
        let summaries = self
            .summaries
            .iter()
            .map(|s| {
                vec![
                    ("budget_fraction", Cell::Float(s.budget_fraction)),
                    ("adaptive", Cell::Text(s.adaptive.to_string())),
                    ("uniform", Cell::Text(s.uniform.to_string())),
                    ("samples", Cell::Int(s.samples as u64)),
                    ("adaptive_wins", Cell::Int(s.adaptive_wins as u64)),
                    ("win_fraction", Cell::Float(s.win_fraction())),
                ]
            })
            .collect();
        vec![("summaries", summaries)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_rounding() {
        assert_eq!(budget_for_fraction(0.2, 2560), 512);
        assert_eq!(budget_for_fraction(0.2, 2656), 532);
        assert_eq!(budget_for_fraction(1.0, 2656), 2656);
        assert_eq!(budget_for_fraction(0.4, 10), 4);
    }

    #[test]
    fn layer_schedule_fits_limits() {
        assert_eq!(fit_layer_budgets(vec![30, 20, 10], 5, 40), vec![30, 20, 10]);
        assert_eq!(fit_layer_budgets(vec![60, 40, 20], 5, 40), vec![40, 40, 40]);
        assert_eq!(fit_layer_budgets(vec![9, 3, 0], 2, 40), vec![7, 3, 2]);
    }
}
