//! Randomized checks of the bound theory against exhaustive oracles.
//!
//! Every property reports a margin per trial: the tolerance minus the
//! observed deviation. A trial passes when its margin is non-negative, and
//! the report keeps the smallest margin seen.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::allocation::{adaptive_allocation, uniform_allocation, TieBreak};
use crate::attention::{
    attention_output, masked_post_eviction_output, post_eviction_output, query_weights,
    EvictionDecision, LayerParams, LogitScale,
};
use crate::error::{Error, Result};
use crate::loss::{
    epsilon_bound, epsilon_double_star, epsilon_star, l1_eviction_loss, row_norm_constant, top_sum,
};
use crate::oracle;
use crate::policy::topk_decision;
use crate::report::{Cell, Tabular};
use crate::tensor::Matrix;
use crate::trace::sample_rng;
use crate::with_workers;

/// Largest number of candidates an exhaustive oracle may visit per trial.
pub const ORACLE_LIMIT: u128 = 1_000_000;

/// Relative slack of the loss bound check.
pub const BOUND_TOLERANCE: f64 = 1e-9;
/// Absolute tolerance of the optimality equalities.
pub const OPTIMALITY_TOLERANCE: f64 = 1e-12;
/// Absolute tolerance between the masked and renormalized outputs.
pub const IDENTITY_TOLERANCE: f64 = 1e-9;

/// Instance size limits per property.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifyCaps {
    pub bound_heads: usize,
    pub bound_len: usize,
    pub bound_head_dim: usize,
    pub topk_heads: usize,
    pub topk_len: usize,
    pub topk_budget: usize,
    pub alloc_heads: usize,
    pub alloc_budget: usize,
    pub alloc_len: usize,
}

impl Default for VerifyCaps {
    fn default() -> Self {
        Self {
            bound_heads: 8,
            bound_len: 64,
            bound_head_dim: 16,
            topk_heads: 2,
            topk_len: 10,
            topk_budget: 5,
            alloc_heads: 4,
            alloc_budget: 12,
            alloc_len: 6,
        }
    }
}

impl VerifyCaps {
    /// Parses comma-separated `key=value` overrides, e.g.
    /// `topk_len=8,alloc_heads=3`.
    pub fn parse_overrides(&self, spec: &str) -> Result<Self> {
        let mut caps = *self;
        for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("cap {item:?} is not key=value")))?;
            let value: usize = value
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("cap {item:?} needs an integer")))?;
            let slot = match key.trim() {
                "bound_heads" => &mut caps.bound_heads,
                "bound_len" => &mut caps.bound_len,
                "bound_head_dim" => &mut caps.bound_head_dim,
                "topk_heads" => &mut caps.topk_heads,
                "topk_len" => &mut caps.topk_len,
                "topk_budget" => &mut caps.topk_budget,
                "alloc_heads" => &mut caps.alloc_heads,
                "alloc_budget" => &mut caps.alloc_budget,
                "alloc_len" => &mut caps.alloc_len,
                other => return Err(Error::InvalidConfig(format!("unknown cap {other:?}"))),
            };
            *slot = value;
        }
        caps.validate()?;
        Ok(caps)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.bound_heads,
            self.bound_len,
            self.bound_head_dim,
            self.topk_heads,
            self.topk_len,
            self.alloc_heads,
            self.alloc_len,
        ];
        if all.contains(&0) {
            return Err(Error::InvalidConfig("size caps must be positive".into()));
        }
        if self.bound_len < 2 {
            return Err(Error::InvalidConfig("bound_len must be at least 2".into()));
        }
        if self.topk_len >= 24 || self.alloc_len >= 24 {
            return Err(Error::InvalidConfig(
                "oracle row length must stay below 24".into(),
            ));
        }
        let worst_subsets = (0..=self.topk_budget.min(self.topk_len))
            .map(|b| oracle::binomial(self.topk_len, b))
            .max()
            .unwrap_or(1);
        let retain_sets =
            (0..self.topk_heads).fold(1u128, |acc, _| acc.saturating_mul(worst_subsets));
        let compositions = (0..self.alloc_heads).fold(1u128, |acc, _| {
            acc.saturating_mul(self.alloc_len as u128 + 1)
        });
        if retain_sets > ORACLE_LIMIT || compositions > ORACLE_LIMIT {
            return Err(Error::InvalidConfig(format!(
                "caps exceed oracle feasibility ({retain_sets} retain-sets, {compositions} allocations; limit {ORACLE_LIMIT})"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    pub trials: usize,
    pub caps: VerifyCaps,
    pub workers: Option<usize>,
    /// Subtracted from the loss bound before checking it; non-zero only to
    /// confirm the harness can fail.
    pub epsilon_offset: f64,
}

impl VerifyOptions {
    pub fn new(seed: u64, trials: usize) -> Self {
        Self {
            seed,
            trials,
            caps: VerifyCaps::default(),
            workers: None,
            epsilon_offset: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Property {
    BoundSoundness,
    TopkOptimality,
    AllocationOptimality,
    RenormalizationIdentity,
    RetainedMassDominance,
}

impl Property {
    pub const ALL: [Property; 5] = [
        Property::BoundSoundness,
        Property::TopkOptimality,
        Property::AllocationOptimality,
        Property::RenormalizationIdentity,
        Property::RetainedMassDominance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Property::BoundSoundness => "bound_soundness",
            Property::TopkOptimality => "topk_optimality",
            Property::AllocationOptimality => "allocation_optimality",
            Property::RenormalizationIdentity => "renormalization_identity",
            Property::RetainedMassDominance => "retained_mass_dominance",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyResult {
    pub property: Property,
    pub trials: usize,
    pub violations: usize,
    /// Smallest `tolerance − deviation` over all trials (`+inf` with no
    /// trials).
    pub worst_margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub seed: u64,
    pub trials: usize,
    pub properties: Vec<PropertyResult>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.properties.iter().all(|p| p.violations == 0)
    }

    pub fn get(&self, property: Property) -> &PropertyResult {
        self.properties
            .iter()
            .find(|p| p.property == property)
            .expect("every property is reported")
    }
}

fn random_rows(rng: &mut ChaCha8Rng, lengths: &[usize]) -> Vec<Vec<f64>> {
    // a third of the instances use a handful of discrete levels to force ties
    let tied = rng.random_bool(1.0 / 3.0);
    lengths
        .iter()
        .map(|&n| {
            let raw: Vec<f64> = (0..n)
                .map(|_| {
                    if tied {
                        rng.random_range(1..=3) as f64
                    } else {
                        (2.0 * rng.sample::<f64, _>(StandardNormal)).exp()
                    }
                })
                .collect();
            let sum: f64 = raw.iter().sum();
            raw.into_iter().map(|w| w / sum).collect()
        })
        .collect()
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| StandardNormal.sample(rng))
            .collect(),
    )
    .expect("sized buffer")
}

/// Randomized full layer: Gaussian parameters, cache and query, and an
/// arbitrary decision that keeps at least one element per head.
struct ForwardInstance {
    params: LayerParams,
    cache: crate::attention::LayerCache,
    queries: Vec<Vec<f64>>,
    decision: EvictionDecision,
    scale: LogitScale,
}

fn forward_instance(rng: &mut ChaCha8Rng, caps: &VerifyCaps) -> Result<ForwardInstance> {
    let h = rng.random_range(1..=caps.bound_heads);
    let n = rng.random_range(2..=caps.bound_len);
    let dh = rng.random_range(1..=caps.bound_head_dim);
    let d = rng.random_range(1..=caps.bound_head_dim);
    let params = LayerParams::random(rng, h, d, dh, 1.0);
    let cache = params.project_cache(&gaussian(rng, n, d))?;
    let x = gaussian(rng, 1, d);
    let queries = params
        .heads()
        .iter()
        .map(|p| p.wq.left_mul(x.row(0)))
        .collect::<Result<Vec<_>>>()?;
    let flags = (0..h)
        .map(|_| {
            let p: f64 = rng.random();
            let mut keep: Vec<bool> = (0..n).map(|_| rng.random_bool(p)).collect();
            if !keep.contains(&true) {
                keep[rng.random_range(0..n)] = true;
            }
            keep
        })
        .collect();
    let scale = if rng.random_bool(0.5) {
        LogitScale::InvSqrtHeadDim
    } else {
        LogitScale::Unscaled
    };
    Ok(ForwardInstance {
        params,
        cache,
        queries,
        decision: EvictionDecision::new(flags),
        scale,
    })
}

fn bound_margin(rng: &mut ChaCha8Rng, opts: &VerifyOptions) -> Result<f64> {
    let inst = forward_instance(rng, &opts.caps)?;
    let weights = query_weights(&inst.queries, &inst.cache, &inst.params, inst.scale)?;
    let y = attention_output(&weights, &inst.cache, &inst.params)?;
    let y_hat = post_eviction_output(&weights, &inst.decision, &inst.cache, &inst.params)?;
    let loss = l1_eviction_loss(&y, &y_hat)?;
    let c = row_norm_constant(&inst.cache, &inst.params)?;
    let eps = epsilon_bound(weights.rows(), &inst.decision, c)?;
    Ok(eps - opts.epsilon_offset + BOUND_TOLERANCE * eps.max(1.0) - loss)
}

fn identity_margin(rng: &mut ChaCha8Rng, opts: &VerifyOptions) -> Result<f64> {
    let inst = forward_instance(rng, &opts.caps)?;
    let weights = query_weights(&inst.queries, &inst.cache, &inst.params, inst.scale)?;
    let renorm = post_eviction_output(&weights, &inst.decision, &inst.cache, &inst.params)?;
    let masked = masked_post_eviction_output(
        &inst.queries,
        &inst.decision,
        &inst.cache,
        &inst.params,
        inst.scale,
    )?;
    let gap = renorm
        .iter()
        .zip(&masked)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(IDENTITY_TOLERANCE - gap)
}

fn topk_margin(rng: &mut ChaCha8Rng, caps: &VerifyCaps) -> Result<f64> {
    let h = rng.random_range(1..=caps.topk_heads);
    let lengths: Vec<usize> = (0..h)
        .map(|_| rng.random_range(1..=caps.topk_len))
        .collect();
    let budgets: Vec<usize> = lengths
        .iter()
        .map(|&n| rng.random_range(0..=caps.topk_budget.min(n)))
        .collect();
    let rows = random_rows(rng, &lengths);
    let c = rng.random_range(0.1..4.0);
    let decision = EvictionDecision::new(
        rows.iter()
            .zip(&budgets)
            .map(|(r, &b)| topk_decision(r, b))
            .collect::<Result<Vec<_>>>()?,
    );
    let eps = epsilon_bound(&rows, &decision, c)?;
    let best = oracle::min_epsilon_over_retain_sets(&rows, &budgets, c);
    Ok(OPTIMALITY_TOLERANCE - (eps - best).abs())
}

fn allocation_margin(rng: &mut ChaCha8Rng, caps: &VerifyCaps) -> Result<f64> {
    let h = rng.random_range(1..=caps.alloc_heads);
    let lengths: Vec<usize> = (0..h)
        .map(|_| rng.random_range(1..=caps.alloc_len))
        .collect();
    let capacity: usize = lengths.iter().sum();
    let total = rng.random_range(0..=caps.alloc_budget.min(capacity));
    let rows = random_rows(rng, &lengths);
    let c = rng.random_range(0.1..4.0);
    let (_, best, _) = oracle::best_allocation(&rows, total, c);
    let eps2 = epsilon_double_star(&rows, total, c)?;
    let alloc = adaptive_allocation(&rows, total, TieBreak::HeadMajor)?;
    let attained = epsilon_star(&rows, &alloc, c)?;
    let gap = (eps2 - best).abs().max((attained - best).abs());
    Ok(OPTIMALITY_TOLERANCE - gap)
}

fn dominance_margin(rng: &mut ChaCha8Rng, caps: &VerifyCaps) -> Result<f64> {
    let h = rng.random_range(1..=caps.bound_heads);
    let lengths: Vec<usize> = (0..h)
        .map(|_| rng.random_range(1..=caps.bound_len))
        .collect();
    let capacity: usize = lengths.iter().sum();
    let total = rng.random_range(0..=capacity);
    let rows = random_rows(rng, &lengths);
    let mass =
        |budgets: &[usize]| -> f64 { rows.iter().zip(budgets).map(|(r, &b)| top_sum(r, b)).sum() };
    let adaptive = adaptive_allocation(&rows, total, TieBreak::HeadMajor)?;
    let uniform = uniform_allocation(total, h, &lengths)?;
    Ok(OPTIMALITY_TOLERANCE - (mass(uniform.per_head()) - mass(adaptive.per_head())))
}

fn trial_margin(property: Property, trial: usize, opts: &VerifyOptions) -> Result<f64> {
    let stream = trial as u64 * Property::ALL.len() as u64 + property as u64;
    let mut rng = sample_rng(opts.seed, stream);
    match property {
        Property::BoundSoundness => bound_margin(&mut rng, opts),
        Property::TopkOptimality => topk_margin(&mut rng, &opts.caps),
        Property::AllocationOptimality => allocation_margin(&mut rng, &opts.caps),
        Property::RenormalizationIdentity => identity_margin(&mut rng, opts),
        Property::RetainedMassDominance => dominance_margin(&mut rng, &opts.caps),
    }
}

/// Runs `opts.trials` randomized instances of one property.
pub fn verify_property(property: Property, opts: &VerifyOptions) -> Result<PropertyResult> {
    opts.caps.validate()?;
    let margins: Vec<Result<f64>> = with_workers(opts.workers, || {
        (0..opts.trials)
            .into_par_iter()
            .map(|t| trial_margin(property, t, opts))
            .collect()
    })?;
    let margins = margins.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(PropertyResult {
        property,
        trials: opts.trials,
        violations: margins.iter().filter(|m| m.is_nan() || **m < 0.0).count(),
        worst_margin: margins.iter().copied().fold(f64::INFINITY, f64::min),
    })
}

/// Runs `opts.trials` randomized instances of every property.
pub fn verify_theorems(opts: &VerifyOptions) -> Result<VerificationReport> {
    let properties = Property::ALL
        .iter()
        .map(|&p| verify_property(p, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(VerificationReport {
        seed: opts.seed,
        trials: opts.trials,
        properties,
    })
}

impl Tabular for VerificationReport {
    fn columns(&self) -> Vec<&'static str> {
        vec!["property", "trials", "violations", "worst_margin", "seed"]
    }

    fn records(&self) -> Vec<Vec<Cell>> {
        self.properties
            .iter()
            .map(|p| {
                vec![
                    Cell::Text(p.property.name().to_string()),
                    Cell::Int(p.trials as u64),
                    Cell::Int(p.violations as u64),
                    Cell::Float(p.worst_margin),
                    Cell::Int(self.seed),
                ]
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_trials_is_an_empty_success() {
        let r = verify_theorems(&VerifyOptions::new(1, 0)).unwrap();
        assert!(r.passed());
        assert!(r
            .properties
            .iter()
            .all(|p| p.trials == 0 && p.violations == 0));
    }

    #[test]
    fn caps_parse_and_feasibility() {
        let c = VerifyCaps::default()
            .parse_overrides("topk_len=8, alloc_heads=3")
            .unwrap();
        assert_eq!((c.topk_len, c.alloc_heads), (8, 3));
        assert!(VerifyCaps::default()
            .parse_overrides("topk_len=20,topk_heads=3")
            .is_err());
        assert!(VerifyCaps::default().parse_overrides("nope=1").is_err());
        assert!(VerifyCaps::default().parse_overrides("bound_len").is_err());
    }

    #[test]
    fn small_run_has_no_violations() {
        let r = verify_theorems(&VerifyOptions::new(11, 40)).unwrap();
        assert!(r.passed(), "{r:?}");
    }
}
