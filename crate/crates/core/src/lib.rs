//! Top-k KV-cache eviction with adaptive head-wise budget allocation.
//!
//! The crate contains an exact single-layer attention reference
//! ([`attention`]), the L1 eviction loss and its upper bounds ([`loss`]),
//! uniform / adaptive / safeguarded / pyramidal budget allocation
//! ([`allocation`]), SnapKV-family and StreamingLLM eviction policies with
//! grouped-query support ([`policy`]), a flattened variable-length cache
//! layout ([`layout`]), and an experiment harness ([`trace`], [`compare`],
//! [`verify`], [`report`]) with exhaustive reference searches in
//! [`oracle`].

pub mod allocation;
pub mod attention;
pub mod compare;
pub mod error;
pub mod inspect;
pub mod layout;
pub mod loss;
pub mod oracle;
pub mod policy;
pub mod report;
pub mod tensor;
pub mod trace;
pub mod verify;

pub use allocation::{
    adaptive_allocation, pyramid_layer_budgets, safeguard_blend, uniform_allocation,
    AllocationConfig, BudgetAllocation, TieBreak,
};
pub use attention::{
    attention_output, attention_weights, masked_attention_weights, post_eviction_output,
    project_qkv, renormalized_weights, AttentionWeights, EvictionDecision, HeadParams, LayerCache,
    LayerParams, LogitScale,
};
pub use compare::{run_comparison, ComparisonConfig, ComparisonReport};
pub use error::{Error, Result};
pub use inspect::{head_concentration, ConcentrationReport};
pub use layout::{CacheStats, FlattenedCache};
pub use loss::{
    epsilon_bound, epsilon_double_star, epsilon_star, l1_eviction_loss, retained_mass,
    row_norm_constant, LossReport,
};
pub use policy::{
    evict_layer, evict_with_scores, topk_decision, LayerEviction, PolicyConfig, PolicyKind,
};
pub use report::{emit_report, ReportFormat};
pub use tensor::Matrix;
pub use trace::{generate_synthetic_trace, load_trace, save_trace, GeneratorProfile, Trace};
pub use verify::{verify_property, verify_theorems, VerificationReport, VerifyCaps, VerifyOptions};

/// Runs `f` on a dedicated pool of `workers` threads, or on the global pool
/// when `workers` is `None`.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}
