//! Reference multi-head attention for a single layer, before and after
//! eviction.
//!
//! A layer has `h` query heads. Key/value heads may be shared by groups of
//! consecutive query heads (grouped-query attention); with a group size of 1
//! every query head owns its cache. Attention weights are indexed by query
//! head, caches and eviction decisions by key/value head.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{dim_err, Error, Result};
use crate::tensor::{dot, Matrix};

/// Tolerance on the unit row sum of attention weights.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Whether attention logits are divided by `sqrt(d_h)` before the softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LogitScale {
    #[default]
    InvSqrtHeadDim,
    Unscaled,
}

impl LogitScale {
    pub fn factor(self, head_dim: usize) -> f64 {
        match self {
            LogitScale::InvSqrtHeadDim => 1.0 / (head_dim as f64).sqrt(),
            LogitScale::Unscaled => 1.0,
        }
    }
}

/// Projection matrices of one attention head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
}

impl HeadParams {
    pub fn new(wq: Matrix, wk: Matrix, wv: Matrix, wo: Matrix) -> Result<Self> {
        let (d, dh) = (wq.rows(), wq.cols());
        for (name, m) in [("wk", &wk), ("wv", &wv)] {
            if m.rows() != d || m.cols() != dh {
                return Err(dim_err(format!(
                    "{name} is {}x{}, expected {d}x{dh}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        if wo.rows() != dh || wo.cols() != d {
            return Err(dim_err(format!(
                "wo is {}x{}, expected {dh}x{d}",
                wo.rows(),
                wo.cols()
            )));
        }
        if ![&wq, &wk, &wv, &wo].iter().all(|m| m.is_finite()) {
            return Err(dim_err("head parameters contain non-finite entries"));
        }
        Ok(Self { wq, wk, wv, wo })
    }

    /// Gaussian parameters with the given entry standard deviation.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, d: usize, head_dim: usize, std: f64) -> Self {
        let normal = Normal::new(0.0, std).expect("finite std");
        let mut draw = |r, c| {
            Matrix::from_vec(r, c, (0..r * c).map(|_| normal.sample(rng)).collect())
                .expect("sized buffer")
        };
        let wq = draw(d, head_dim);
        let wk = draw(d, head_dim);
        let wv = draw(d, head_dim);
        let wo = draw(head_dim, d);
        Self { wq, wk, wv, wo }
    }

    pub fn model_dim(&self) -> usize {
        self.wq.rows()
    }

    pub fn head_dim(&self) -> usize {
        self.wq.cols()
    }
}

/// All heads of one attention layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    heads: Vec<HeadParams>,
    kv_group_size: usize,
}

impl LayerParams {
    pub fn new(heads: Vec<HeadParams>) -> Result<Self> {
        Self::grouped(heads, 1)
    }

    /// Grouped-query layer: consecutive runs of `group_size` query heads share
    /// one key/value head, projected with the first member's `wk` and `wv`.
    pub fn grouped(heads: Vec<HeadParams>, group_size: usize) -> Result<Self> {
        let first = heads
            .first()
            .ok_or_else(|| dim_err("a layer needs at least one head"))?;
        let (d, dh) = (first.model_dim(), first.head_dim());
        if heads
            .iter()
            .any(|p| p.model_dim() != d || p.head_dim() != dh)
        {
            return Err(dim_err("heads disagree on d or d_h"));
        }
        if group_size == 0 || !heads.len().is_multiple_of(group_size) {
            return Err(Error::InvalidConfig(format!(
                "{} heads cannot be split into groups of {group_size}",
                heads.len()
            )));
        }
        Ok(Self {
            heads,
            kv_group_size: group_size,
        })
    }

    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        num_heads: usize,
        d: usize,
        head_dim: usize,
        std: f64,
    ) -> Self {
        let heads = (0..num_heads)
            .map(|_| HeadParams::random(rng, d, head_dim, std))
            .collect();
        Self::new(heads).expect("consistent random heads")
    }

    pub fn heads(&self) -> &[HeadParams] {
        &self.heads
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn kv_group_size(&self) -> usize {
        self.kv_group_size
    }

    pub fn num_kv_heads(&self) -> usize {
        self.heads.len() / self.kv_group_size
    }

    pub fn kv_head_of(&self, query_head: usize) -> usize {
        query_head / self.kv_group_size
    }

    pub fn model_dim(&self) -> usize {
        self.heads[0].model_dim()
    }

    pub fn head_dim(&self) -> usize {
        self.heads[0].head_dim()
    }

    /// Keys and values of every token row in `x` (n x d), one cache head per
    /// key/value group.
    pub fn project_cache(&self, x: &Matrix) -> Result<LayerCache> {
        let heads = (0..self.num_kv_heads())
            .map(|j| {
                let p = &self.heads[j * self.kv_group_size];
                Ok(HeadKv {
                    keys: x.matmul(&p.wk)?,
                    values: x.matmul(&p.wv)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LayerCache {
            heads,
            head_dim: self.head_dim(),
        })
    }

    /// Query states of every row of `x` for one query head.
    pub fn project_queries(&self, query_head: usize, x: &Matrix) -> Result<Matrix> {
        x.matmul(&self.heads[query_head].wq)
    }
}

/// Keys and values of one cache head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadKv {
    pub keys: Matrix,
    pub values: Matrix,
}

impl HeadKv {
    pub fn len(&self) -> usize {
        self.keys.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.rows() == 0
    }
}

/// Per-head key/value cache of one layer. Heads may hold different numbers
/// of elements.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCache {
    heads: Vec<HeadKv>,
    head_dim: usize,
}

impl LayerCache {
    pub fn new(num_heads: usize, head_dim: usize) -> Self {
        let heads = (0..num_heads)
            .map(|_| HeadKv {
                keys: Matrix::empty(head_dim),
                values: Matrix::empty(head_dim),
            })
            .collect();
        Self { heads, head_dim }
    }

    pub fn from_heads(head_dim: usize, heads: Vec<HeadKv>) -> Result<Self> {
        for (i, h) in heads.iter().enumerate() {
            if h.keys.cols() != head_dim || h.values.cols() != head_dim {
                return Err(dim_err(format!(
                    "head {i} width differs from d_h={head_dim}"
                )));
            }
            if h.keys.rows() != h.values.rows() {
                return Err(dim_err(format!(
                    "head {i} has {} keys but {} values",
                    h.keys.rows(),
                    h.values.rows()
                )));
            }
            if !h.keys.is_finite() || !h.values.is_finite() {
                return Err(dim_err(format!("head {i} has non-finite entries")));
            }
        }
        Ok(Self { heads, head_dim })
    }

    /// Appends one key/value row to the end of head `head`.
    pub fn append_kv(&mut self, head: usize, k: &[f64], v: &[f64]) -> Result<()> {
        let len = self.heads.len();
        let slot = self
            .heads
            .get_mut(head)
            .ok_or(Error::HeadOutOfRange { index: head, len })?;
        if k.len() != self.head_dim || v.len() != self.head_dim {
            return Err(dim_err("appended row width differs from d_h"));
        }
        slot.keys.push_row(k)?;
        slot.values.push_row(v)?;
        Ok(())
    }

    pub fn heads(&self) -> &[HeadKv] {
        &self.heads
    }

    pub fn head(&self, i: usize) -> Result<&HeadKv> {
        self.heads.get(i).ok_or(Error::HeadOutOfRange {
            index: i,
            len: self.heads.len(),
        })
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.heads.iter().map(HeadKv::len).collect()
    }

    pub fn total_len(&self) -> usize {
        self.heads.iter().map(HeadKv::len).sum()
    }

    /// Keeps the rows marked in `decision`, preserving order within each head.
    pub fn select(&self, decision: &EvictionDecision) -> Result<LayerCache> {
        decision.check_lengths(&self.lengths())?;
        let heads = self
            .heads
            .iter()
            .zip(decision.heads())
            .map(|(h, mask)| HeadKv {
                keys: h.keys.select_rows(mask),
                values: h.values.select_rows(mask),
            })
            .collect();
        Ok(LayerCache {
            heads,
            head_dim: self.head_dim,
        })
    }

    /// Appends `other`'s rows after this cache's rows, head by head.
    pub fn concat(&self, other: &LayerCache) -> Result<LayerCache> {
        if self.num_heads() != other.num_heads() || self.head_dim != other.head_dim {
            return Err(dim_err("concatenated caches differ in shape"));
        }
        let heads = self
            .heads
            .iter()
            .zip(&other.heads)
            .map(|(a, b)| {
                Ok(HeadKv {
                    keys: a.keys.stack(&b.keys)?,
                    values: a.values.stack(&b.values)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LayerCache {
            heads,
            head_dim: self.head_dim,
        })
    }
}

/// One attention row per query head, each non-negative and summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    rows: Vec<Vec<f64>>,
}

impl AttentionWeights {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            if row.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(dim_err(format!(
                    "head {i} has negative or non-finite weights"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(dim_err(format!("head {i} weights sum to {sum}, not 1")));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn head(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn num_heads(&self) -> usize {
        self.rows.len()
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.rows.iter().map(Vec::len).collect()
    }

    pub fn into_rows(self) -> Vec<Vec<f64>> {
        self.rows
    }
}

/// Retain (`true`) or evict (`false`) flags for every element of every cache
/// head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvictionDecision {
    heads: Vec<Vec<bool>>,
}

impl EvictionDecision {
    pub fn new(heads: Vec<Vec<bool>>) -> Self {
        Self { heads }
    }

    pub fn all_retained(lengths: &[usize]) -> Self {
        Self::new(lengths.iter().map(|&n| vec![true; n]).collect())
    }

    pub fn heads(&self) -> &[Vec<bool>] {
        &self.heads
    }

    pub fn head(&self, i: usize) -> &[bool] {
        &self.heads[i]
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    /// Retained element count per head.
    pub fn counts(&self) -> Vec<usize> {
        self.heads
            .iter()
            .map(|h| h.iter().filter(|&&b| b).count())
            .collect()
    }

    pub fn total(&self) -> usize {
        self.counts().iter().sum()
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.heads.iter().map(Vec::len).collect()
    }

    /// Marks `extra[i]` additional trailing elements of head `i` as retained.
    pub fn append_retained(&self, extra: &[usize]) -> Result<EvictionDecision> {
        if extra.len() != self.heads.len() {
            return Err(dim_err("one extension length per head required"));
        }
        Ok(Self::new(
            self.heads
                .iter()
                .zip(extra)
                .map(|(h, &n)| {
                    let mut h = h.clone();
                    h.extend(std::iter::repeat_n(true, n));
                    h
                })
                .collect(),
        ))
    }

    /// Replicates each head's flags across `group_size` query heads.
    pub fn expand_groups(&self, group_size: usize) -> EvictionDecision {
        Self::new(
            self.heads
                .iter()
                .flat_map(|h| std::iter::repeat_n(h.clone(), group_size))
                .collect(),
        )
    }

    pub(crate) fn check_lengths(&self, lengths: &[usize]) -> Result<()> {
        if self.lengths() != lengths {
            return Err(dim_err(format!(
                "decision lengths {:?} do not match {:?}",
                self.lengths(),
                lengths
            )));
        }
        Ok(())
    }
}

/// Number of query heads sharing each decision head, validating that the
/// grouping is consecutive and even.
pub(crate) fn group_size(query_heads: usize, decision_heads: usize) -> Result<usize> {
    if decision_heads == 0 || !query_heads.is_multiple_of(decision_heads) {
        return Err(dim_err(format!(
            "{query_heads} query heads cannot map onto {decision_heads} cache heads"
        )));
    }
    Ok(query_heads / decision_heads)
}

/// Query, key and value states of a single embedding row for one head.
pub fn project_qkv(x: &[f64], params: &HeadParams) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(dim_err("embedding contains non-finite values"));
    }
    Ok((
        params.wq.left_mul(x)?,
        params.wk.left_mul(x)?,
        params.wv.left_mul(x)?,
    ))
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::EmptySoftmax);
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Softmax restricted to the retained positions; evicted positions are
/// excluded from the normalizer and receive exactly zero.
pub fn masked_softmax(logits: &[f64], retained: &[bool]) -> Result<Vec<f64>> {
    if logits.len() != retained.len() {
        return Err(dim_err("mask length differs from logits"));
    }
    let max = logits
        .iter()
        .zip(retained)
        .filter(|(_, &r)| r)
        .map(|(l, _)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::EmptySoftmax);
    }
    let exps: Vec<f64> = logits
        .iter()
        .zip(retained)
        .map(|(l, &r)| if r { (l - max).exp() } else { 0.0 })
        .collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

fn logits(q: &[f64], keys: &Matrix, scale: LogitScale) -> Result<Vec<f64>> {
    if q.len() != keys.cols() {
        return Err(dim_err(format!(
            "query width {} differs from key width {}",
            q.len(),
            keys.cols()
        )));
    }
    let s = scale.factor(keys.cols());
    Ok(keys.row_iter().map(|k| dot(q, k) * s).collect())
}

/// Row-wise softmax of `queries · keysᵀ` (m x n).
pub fn attention_weights(queries: &Matrix, keys: &Matrix, scale: LogitScale) -> Result<Matrix> {
    if keys.rows() == 0 {
        return Err(Error::EmptySoftmax);
    }
    let mut data = Vec::with_capacity(queries.rows() * keys.rows());
    for q in queries.row_iter() {
        data.extend(softmax(&logits(q, keys, scale)?)?);
    }
    Matrix::from_vec(queries.rows(), keys.rows(), data)
}

/// Attention row of a single query after eviction, computed by masking the
/// softmax.
pub fn masked_attention_weights(
    q: &[f64],
    keys: &Matrix,
    retained: &[bool],
    scale: LogitScale,
) -> Result<Vec<f64>> {
    if retained.len() != keys.rows() {
        return Err(dim_err("decision length differs from key count"));
    }
    masked_softmax(&logits(q, keys, scale)?, retained)
}

/// Post-eviction attention row derived from the pre-eviction row by dropping
/// evicted entries and dividing by the retained mass.
pub fn renormalized_weights(a: &[f64], retained: &[bool]) -> Result<Vec<f64>> {
    if a.len() != retained.len() {
        return Err(dim_err("decision length differs from weight row"));
    }
    if retained.iter().all(|&r| r) {
        return Ok(a.to_vec());
    }
    let mass: f64 = a
        .iter()
        .zip(retained)
        .filter(|(_, &r)| r)
        .map(|(w, _)| w)
        .sum();
    if mass <= 0.0 {
        return Err(Error::ZeroRetainedMass(0));
    }
    Ok(a.iter()
        .zip(retained)
        .map(|(w, &r)| if r { w / mass } else { 0.0 })
        .collect())
}

fn output_from_rows(
    rows: &[Vec<f64>],
    cache: &LayerCache,
    params: &LayerParams,
) -> Result<Vec<f64>> {
    if rows.len() != params.num_heads() {
        return Err(dim_err(format!(
            "{} weight rows for {} heads",
            rows.len(),
            params.num_heads()
        )));
    }
    if cache.num_heads() != params.num_kv_heads() {
        return Err(dim_err(format!(
            "cache has {} heads, layer expects {}",
            cache.num_heads(),
            params.num_kv_heads()
        )));
    }
    let mut y = vec![0.0; params.model_dim()];
    for (i, (a, p)) in rows.iter().zip(params.heads()).enumerate() {
        let kv = cache.head(params.kv_head_of(i))?;
        if a.len() != kv.len() {
            return Err(dim_err(format!(
                "head {i}: {} weights for {} cached elements",
                a.len(),
                kv.len()
            )));
        }
        let mixed = kv.values.left_mul(a)?;
        let out = p.wo.left_mul(&mixed)?;
        for (acc, o) in y.iter_mut().zip(out) {
            *acc += o;
        }
    }
    Ok(y)
}

/// Layer output `Σ_i A_i V_i W_i^O` for one query position.
pub fn attention_output(
    weights: &AttentionWeights,
    cache: &LayerCache,
    params: &LayerParams,
) -> Result<Vec<f64>> {
    output_from_rows(weights.rows(), cache, params)
}

/// Layer output after eviction, computed from the pre-eviction weights by
/// renormalizing over each head's retained elements. `decision` is indexed by
/// cache head.
pub fn post_eviction_output(
    weights: &AttentionWeights,
    decision: &EvictionDecision,
    cache: &LayerCache,
    params: &LayerParams,
) -> Result<Vec<f64>> {
    decision.check_lengths(&cache.lengths())?;
    let rows = (0..weights.num_heads())
        .map(|i| {
            let mask = decision.head(params.kv_head_of(i));
            renormalized_weights(weights.head(i), mask).map_err(|e| match e {
                Error::ZeroRetainedMass(_) => Error::ZeroRetainedMass(i),
                e => e,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    output_from_rows(&rows, cache, params)
}

/// Pre-eviction attention rows of one query per head: `queries[i]` is the
/// query state of head `i`.
pub fn query_weights(
    queries: &[Vec<f64>],
    cache: &LayerCache,
    params: &LayerParams,
    scale: LogitScale,
) -> Result<AttentionWeights> {
    let rows = queries
        .iter()
        .enumerate()
        .map(|(i, q)| softmax(&logits(q, &cache.head(params.kv_head_of(i))?.keys, scale)?))
        .collect::<Result<Vec<_>>>()?;
    AttentionWeights::new(rows)
}

/// Layer output after eviction computed through the masked softmax of the
/// raw query states.
pub fn masked_post_eviction_output(
    queries: &[Vec<f64>],
    decision: &EvictionDecision,
    cache: &LayerCache,
    params: &LayerParams,
    scale: LogitScale,
) -> Result<Vec<f64>> {
    decision.check_lengths(&cache.lengths())?;
    let rows = queries
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let kv = params.kv_head_of(i);
            masked_attention_weights(q, &cache.head(kv)?.keys, decision.head(kv), scale)
        })
        .collect::<Result<Vec<_>>>()?;
    output_from_rows(&rows, cache, params)
}
