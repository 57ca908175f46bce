//! Attention traces: synthetic generation and on-disk storage.
//!
//! A trace is a list of samples, each holding one entry per layer. A
//! `weights_only` trace stores one attention row per head and is enough for
//! allocation and bound experiments. A `full` trace stores token embeddings,
//! observation-window embeddings and layer parameters so the forward pass,
//! and with it the actual eviction loss, can be recomputed.
//!
//! On disk a trace is a JSON envelope. The matrices either sit inline in the
//! envelope or in a binary sidecar whose SHA-256 is recorded in the envelope:
//!
//! ```text
//! magic  b"AKVT"
//! u32    version (1)
//! u64    matrix count
//! per matrix: u64 rows, u64 cols, rows*cols f64 values (row-major)
//! ```
//!
//! Matrices are listed sample by sample, layer by layer. A `weights_only`
//! layer is one `h x n` matrix; a `full` layer is the `n x d` embeddings, the
//! `window x d` window embeddings, then `wq, wk, wv, wo` for each head.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attention::{
    query_weights, AttentionWeights, HeadParams, LayerCache, LayerParams, LogitScale,
};
use crate::error::{dim_err, Error, Result};
use crate::layout::{read_exact, read_u32, read_u64};
use crate::tensor::Matrix;

pub const TRACE_VERSION: u32 = 1;
const SIDECAR_MAGIC: &[u8; 4] = b"AKVT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    Full,
    WeightsOnly,
}

/// Shape and head-concentration mix of a synthetic trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorProfile {
    pub kind: TraceKind,
    pub samples: usize,
    pub layers: usize,
    /// Query heads per layer.
    pub heads: usize,
    /// Cache elements per head outside the observation window.
    pub n: usize,
    pub head_dim: usize,
    /// Embedding width (full traces only).
    pub model_dim: usize,
    /// Observation window length (full traces only).
    pub window: usize,
    pub kv_group_size: usize,
    /// Fraction of (key/value) heads that are attention-sparse.
    pub fraction_sparse_heads: f64,
    /// Attention mass a sparse head puts on its critical positions.
    pub sparse_top_mass: f64,
    /// Fraction of positions that are critical for a sparse head.
    pub sparse_support: f64,
    /// Logit spread of dispersed heads; 0 gives exactly uniform rows.
    pub dispersed_temperature: f64,
}

impl Default for GeneratorProfile {
    fn default() -> Self {
        Self {
            kind: TraceKind::Full,
            samples: 200,
            layers: 1,
            heads: 8,
            n: 480,
            head_dim: 16,
            model_dim: 48,
            window: 32,
            kv_group_size: 1,
            fraction_sparse_heads: 0.75,
            sparse_top_mass: 0.95,
            sparse_support: 0.05,
            dispersed_temperature: 0.5,
        }
    }
}

impl GeneratorProfile {
    pub fn kv_heads(&self) -> usize {
        self.heads / self.kv_group_size.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.samples == 0
            || self.layers == 0
            || self.heads == 0
            || self.n == 0
            || self.head_dim == 0
        {
            return bad("samples, layers, heads, n and head_dim must all be positive".into());
        }
        if self.kv_group_size == 0 || !self.heads.is_multiple_of(self.kv_group_size) {
            return bad(format!(
                "{} heads cannot form groups of {}",
                self.heads, self.kv_group_size
            ));
        }
        if !(0.0..=1.0).contains(&self.fraction_sparse_heads) {
            return bad(format!(
                "fraction_sparse_heads {} outside [0, 1]",
                self.fraction_sparse_heads
            ));
        }
        if !(self.sparse_top_mass > 0.0 && self.sparse_top_mass < 1.0) {
            return bad(format!(
                "sparse_top_mass {} outside (0, 1)",
                self.sparse_top_mass
            ));
        }
        if !(self.sparse_support > 0.0 && self.sparse_support <= 1.0) {
            return bad(format!(
                "sparse_support {} outside (0, 1]",
                self.sparse_support
            ));
        }
        if !(self.dispersed_temperature.is_finite() && self.dispersed_temperature >= 0.0) {
            return bad(format!(
                "dispersed_temperature {} must be >= 0",
                self.dispersed_temperature
            ));
        }
        if self.kind == TraceKind::Full {
            if self.window == 0 {
                return bad("full traces need a window of at least one token".into());
            }
            if self.model_dim <= 2 * self.kv_heads() {
                return bad(format!(
                    "model_dim must exceed twice the key/value head count ({})",
                    2 * self.kv_heads()
                ));
            }
        }
        Ok(())
    }

    /// Positions a sparse head concentrates on.
    pub fn critical_positions(&self) -> usize {
        ((self.sparse_support * self.n as f64).ceil() as usize).clamp(1, self.n)
    }

    fn sparse_head_count(&self, heads: usize) -> usize {
        ((self.fraction_sparse_heads * heads as f64).round() as usize).min(heads)
    }
}

/// Everything needed to replay one layer's prefill and eviction.
#[derive(Debug, Clone, PartialEq)]
pub struct FullLayer {
    /// Tokens outside the observation window (n x d).
    pub embeddings: Matrix,
    /// Observation-window tokens (window x d); the last row is the query whose
    /// output is compared before and after eviction.
    pub window_embeddings: Matrix,
    pub params: LayerParams,
}

impl FullLayer {
    pub fn outside_cache(&self) -> Result<LayerCache> {
        self.params.project_cache(&self.embeddings)
    }

    pub fn window_cache(&self) -> Result<LayerCache> {
        self.params.project_cache(&self.window_embeddings)
    }

    /// Query state of the last window token for every query head.
    pub fn last_queries(&self) -> Result<Vec<Vec<f64>>> {
        let last = self
            .window_embeddings
            .row(self.window_embeddings.rows() - 1)
            .to_vec();
        self.params
            .heads()
            .iter()
            .map(|p| p.wq.left_mul(&last))
            .collect()
    }

    /// Attention of the last window token over the whole cache (outside
    /// elements then window), one row per query head.
    pub fn last_query_weights(
        &self,
        full_cache: &LayerCache,
        scale: LogitScale,
    ) -> Result<AttentionWeights> {
        query_weights(&self.last_queries()?, full_cache, &self.params, scale)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TracePayload {
    /// `[sample][layer]` attention rows.
    WeightsOnly(Vec<Vec<AttentionWeights>>),
    /// `[sample][layer]` replayable layers.
    Full(Vec<Vec<FullLayer>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub seed: u64,
    pub profile: GeneratorProfile,
    pub payload: TracePayload,
}

impl Trace {
    pub fn kind(&self) -> TraceKind {
        match self.payload {
            TracePayload::WeightsOnly(_) => TraceKind::WeightsOnly,
            TracePayload::Full(_) => TraceKind::Full,
        }
    }

    pub fn num_samples(&self) -> usize {
        match &self.payload {
            TracePayload::WeightsOnly(s) => s.len(),
            TracePayload::Full(s) => s.len(),
        }
    }
}

/// Independent random stream for one sample of a seeded trace.
pub(crate) fn sample_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normalize(mut row: Vec<f64>) -> Vec<f64> {
    let sum: f64 = row.iter().sum();
    row.iter_mut().for_each(|w| *w /= sum);
    row
}

fn positive_draws<R: Rng + ?Sized>(rng: &mut R, count: usize, spread: f64) -> Vec<f64> {
    (0..count)
        .map(|_| (spread * rng.sample::<f64, _>(StandardNormal)).exp())
        .collect()
}

fn sparse_row<R: Rng + ?Sized>(rng: &mut R, profile: &GeneratorProfile) -> Vec<f64> {
    let n = profile.n;
    let k = profile.critical_positions();
    if k == n {
        return normalize(positive_draws(rng, n, 0.5));
    }
    let critical = sample_indices(rng, n, k).into_vec();
    let heavy = normalize(positive_draws(rng, k, 0.5));
    let light = normalize(positive_draws(rng, n - k, 0.5));
    let mut row = vec![0.0; n];
    let mut is_critical = vec![false; n];
    for (&j, w) in critical.iter().zip(&heavy) {
        row[j] = profile.sparse_top_mass * w;
        is_critical[j] = true;
    }
    let mut light = light.into_iter();
    for j in 0..n {
        if !is_critical[j] {
            row[j] = (1.0 - profile.sparse_top_mass) * light.next().expect("n - k draws");
        }
    }
    normalize(row)
}

fn dispersed_row<R: Rng + ?Sized>(rng: &mut R, profile: &GeneratorProfile) -> Vec<f64> {
    normalize(positive_draws(
        rng,
        profile.n,
        profile.dispersed_temperature,
    ))
}

fn sparse_mask<R: Rng + ?Sized>(rng: &mut R, heads: usize, sparse: usize) -> Vec<bool> {
    let mut mask = vec![false; heads];
    for i in sample_indices(rng, heads, sparse) {
        mask[i] = true;
    }
    mask
}

fn weights_layer<R: Rng + ?Sized>(
    rng: &mut R,
    profile: &GeneratorProfile,
    mask: &[bool],
) -> AttentionWeights {
    let rows = mask
        .iter()
        .map(|&sparse| {
            if sparse {
                sparse_row(rng, profile)
            } else {
                dispersed_row(rng, profile)
            }
        })
        .collect();
    AttentionWeights::new(rows).expect("generated rows are normalized")
}

/// Builds a layer whose key/value group `g` reads a query flag from
/// embedding column `2g` and a key flag from column `2g + 1`. Window tokens
/// raise every query flag; a sparse group's critical tokens (one contiguous
/// run) raise its key flag, and the flag gain is set so the window queries
/// put roughly `sparse_top_mass` of their attention on that run. Remaining
/// columns and all weights are Gaussian, with the logit noise of every head
/// on the order of `dispersed_temperature`.
fn full_layer<R: Rng + ?Sized>(
    rng: &mut R,
    profile: &GeneratorProfile,
    sparse: &[bool],
) -> FullLayer {
    let (d, dh, n, m) = (
        profile.model_dim,
        profile.head_dim,
        profile.n,
        profile.window,
    );
    let groups = profile.kv_heads();
    let g = profile.kv_group_size;
    let k = profile.critical_positions();

    let flag_cols = 2 * groups;
    let mut embeddings = Matrix::zeros(n, d);
    let mut window = Matrix::zeros(m, d);
    for mat in [&mut embeddings, &mut window] {
        for i in 0..mat.rows() {
            for j in flag_cols..d {
                mat.set(i, j, rng.sample(StandardNormal));
            }
        }
    }
    for (grp, &is_sparse) in sparse.iter().enumerate() {
        for t in 0..m {
            window.set(t, 2 * grp, 1.0);
        }
        if is_sparse {
            let start = rng.random_range(0..=n - k);
            for j in start..start + k {
                embeddings.set(j, 2 * grp + 1, 1.0);
            }
        }
    }

    let p = profile.sparse_top_mass;
    let gain = if k < n {
        (p * (n - k) as f64 / ((1.0 - p) * k as f64)).ln().max(0.0)
    } else {
        0.0
    };
    let flag_weight = (gain * (dh as f64).sqrt()).sqrt();
    let qk_std = (profile.dispersed_temperature / d as f64).sqrt();
    let qk = Normal::new(0.0, qk_std).expect("finite std");
    let v_std = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("finite std");
    let o_std = Normal::new(0.0, 1.0 / (dh as f64).sqrt()).expect("finite std");
    let mut draw = |rows: usize, cols: usize, dist: &Normal<f64>| {
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| dist.sample(rng)).collect(),
        )
        .expect("sized buffer")
    };
    let heads = (0..profile.heads)
        .map(|i| {
            let grp = i / g;
            let mut wq = draw(d, dh, &qk);
            let mut wk = draw(d, dh, &qk);
            let wv = draw(d, dh, &v_std);
            let wo = draw(dh, d, &o_std);
            for j in 0..flag_cols {
                for c in 0..dh {
                    wq.set(j, c, 0.0);
                    wk.set(j, c, 0.0);
                }
            }
            if sparse[grp] {
                wq.set(2 * grp, 0, flag_weight);
                wk.set(2 * grp + 1, 0, flag_weight);
            }
            HeadParams::new(wq, wk, wv, wo).expect("consistent shapes")
        })
        .collect();
    FullLayer {
        embeddings,
        window_embeddings: window,
        params: LayerParams::grouped(heads, g).expect("valid grouping"),
    }
}

/// Which heads of each layer are sparse. Fixed for the whole trace, drawn
/// from a stream no sample uses.
fn layer_masks(profile: &GeneratorProfile, seed: u64) -> Vec<Vec<bool>> {
    let heads = match profile.kind {
        TraceKind::WeightsOnly => profile.heads,
        TraceKind::Full => profile.kv_heads(),
    };
    let mut rng = sample_rng(seed, u64::MAX);
    (0..profile.layers)
        .map(|_| sparse_mask(&mut rng, heads, profile.sparse_head_count(heads)))
        .collect()
}

/// Deterministic synthetic trace. Each sample draws from its own stream of
/// the seeded generator, so the result does not depend on thread count.
pub fn generate_synthetic_trace(profile: &GeneratorProfile, seed: u64) -> Result<Trace> {
    profile.validate()?;
    let masks = layer_masks(profile, seed);
    let payload = match profile.kind {
        TraceKind::WeightsOnly => TracePayload::WeightsOnly(
            (0..profile.samples)
                .into_par_iter()
                .map(|s| {
                    let mut rng = sample_rng(seed, s as u64);
                    masks
                        .iter()
                        .map(|m| weights_layer(&mut rng, profile, m))
                        .collect()
                })
                .collect(),
        ),
        TraceKind::Full => TracePayload::Full(
            (0..profile.samples)
                .into_par_iter()
                .map(|s| {
                    let mut rng = sample_rng(seed, s as u64);
                    masks
                        .iter()
                        .map(|m| full_layer(&mut rng, profile, m))
                        .collect()
                })
                .collect(),
        ),
    };
    Ok(Trace {
        seed,
        profile: profile.clone(),
        payload,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Dims {
    h: usize,
    n: usize,
    d_h: usize,
    layers: usize,
    samples: usize,
    d: usize,
    window: usize,
    kv_group_size: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Envelope {
    version: u32,
    kind: TraceKind,
    dims: Dims,
    seed: u64,
    profile: GeneratorProfile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    payload_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    payload_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    inline: Option<Vec<Matrix>>,
}

/// Where `save_trace` puts the matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PayloadStorage {
    /// Binary file next to the envelope, named after it with a `.bin`
    /// extension.
    #[default]
    Sidecar,
    Inline,
}

fn dims_of(trace: &Trace) -> Dims {
    let p = &trace.profile;
    Dims {
        h: p.heads,
        n: p.n,
        d_h: p.head_dim,
        layers: p.layers,
        samples: trace.num_samples(),
        d: if trace.kind() == TraceKind::Full {
            p.model_dim
        } else {
            0
        },
        window: if trace.kind() == TraceKind::Full {
            p.window
        } else {
            0
        },
        kv_group_size: p.kv_group_size,
    }
}

fn payload_matrices(payload: &TracePayload) -> Vec<Matrix> {
    let mut out = Vec::new();
    match payload {
        TracePayload::WeightsOnly(samples) => {
            for w in samples.iter().flatten() {
                let rows: Vec<&[f64]> = w.rows().iter().map(Vec::as_slice).collect();
                out.push(Matrix::from_rows(&rows));
            }
        }
        TracePayload::Full(samples) => {
            for layer in samples.iter().flatten() {
                out.push(layer.embeddings.clone());
                out.push(layer.window_embeddings.clone());
                for p in layer.params.heads() {
                    out.extend([p.wq.clone(), p.wk.clone(), p.wv.clone(), p.wo.clone()]);
                }
            }
        }
    }
    out
}

fn expect_shape(m: &Matrix, rows: usize, cols: usize, what: &str) -> Result<()> {
    m.check_consistent()?;
    if m.rows() != rows || m.cols() != cols {
        return Err(dim_err(format!(
            "{what} is {}x{}, header says {rows}x{cols}",
            m.rows(),
            m.cols()
        )));
    }
    Ok(())
}

fn payload_from_matrices(kind: TraceKind, dims: &Dims, mats: Vec<Matrix>) -> Result<TracePayload> {
    let per_layer = match kind {
        TraceKind::WeightsOnly => 1,
        TraceKind::Full => 2 + 4 * dims.h,
    };
    let expected = dims.samples * dims.layers * per_layer;
    if mats.len() != expected {
        return Err(dim_err(format!(
            "payload holds {} matrices, header implies {expected}",
            mats.len()
        )));
    }
    let mut it = mats.into_iter();
    let mut next = || it.next().expect("count checked");
    match kind {
        TraceKind::WeightsOnly => {
            let mut samples = Vec::with_capacity(dims.samples);
            for _ in 0..dims.samples {
                let mut layers = Vec::with_capacity(dims.layers);
                for _ in 0..dims.layers {
                    let m = next();
                    expect_shape(&m, dims.h, dims.n, "weights")?;
                    layers.push(AttentionWeights::new(
                        m.row_iter().map(<[f64]>::to_vec).collect(),
                    )?);
                }
                samples.push(layers);
            }
            Ok(TracePayload::WeightsOnly(samples))
        }
        TraceKind::Full => {
            let mut samples = Vec::with_capacity(dims.samples);
            for _ in 0..dims.samples {
                let mut layers = Vec::with_capacity(dims.layers);
                for _ in 0..dims.layers {
                    let embeddings = next();
                    expect_shape(&embeddings, dims.n, dims.d, "embeddings")?;
                    let window_embeddings = next();
                    expect_shape(&window_embeddings, dims.window, dims.d, "window embeddings")?;
                    let mut heads = Vec::with_capacity(dims.h);
                    for _ in 0..dims.h {
                        let (wq, wk, wv, wo) = (next(), next(), next(), next());
                        for (m, name) in [(&wq, "wq"), (&wk, "wk"), (&wv, "wv")] {
                            expect_shape(m, dims.d, dims.d_h, name)?;
                        }
                        expect_shape(&wo, dims.d_h, dims.d, "wo")?;
                        heads.push(HeadParams::new(wq, wk, wv, wo)?);
                    }
                    layers.push(FullLayer {
                        embeddings,
                        window_embeddings,
                        params: LayerParams::grouped(heads, dims.kv_group_size)?,
                    });
                }
                samples.push(layers);
            }
            Ok(TracePayload::Full(samples))
        }
    }
}

fn encode_sidecar(mats: &[Matrix]) -> Vec<u8> {
    let values: usize = mats.iter().map(|m| m.as_slice().len()).sum();
    let mut out = Vec::with_capacity(16 + 16 * mats.len() + 8 * values);
    out.extend_from_slice(SIDECAR_MAGIC);
    out.extend_from_slice(&TRACE_VERSION.to_le_bytes());
    out.extend_from_slice(&(mats.len() as u64).to_le_bytes());
    for m in mats {
        out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
        for v in m.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn decode_sidecar(mut bytes: &[u8]) -> Result<Vec<Matrix>> {
    let r = &mut bytes;
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, "sidecar magic")?;
    if &magic != SIDECAR_MAGIC {
        return Err(Error::Header(format!("bad sidecar magic {magic:?}")));
    }
    let version = read_u32(r, "sidecar version")?;
    if version != TRACE_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: TRACE_VERSION,
        });
    }
    let count = read_u64(r, "matrix count")? as usize;
    let mut mats = Vec::with_capacity(count.min(1 << 20));
    for i in 0..count {
        let rows = read_u64(r, "matrix rows")? as usize;
        let cols = read_u64(r, "matrix cols")? as usize;
        let len = rows
            .checked_mul(cols)
            .and_then(|v| v.checked_mul(8))
            .ok_or_else(|| Error::Header(format!("matrix {i} size overflows")))?;
        if r.len() < len {
            return Err(Error::Header(format!("truncated while reading matrix {i}")));
        }
        let (body, rest) = r.split_at(len);
        let data = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        mats.push(Matrix::from_vec(rows, cols, data)?);
        *r = rest;
    }
    if !r.is_empty() {
        return Err(Error::Header(format!("{} trailing sidecar bytes", r.len())));
    }
    Ok(mats)
}

fn sidecar_path_for(path: &Path) -> PathBuf {
    path.with_extension("bin")
}

/// Writes the envelope to `path` (and the sidecar next to it).
pub fn save_trace(trace: &Trace, path: &Path, storage: PayloadStorage) -> Result<()> {
    let mats = payload_matrices(&trace.payload);
    let mut envelope = Envelope {
        version: TRACE_VERSION,
        kind: trace.kind(),
        dims: dims_of(trace),
        seed: trace.seed,
        profile: trace.profile.clone(),
        payload_path: None,
        payload_sha256: None,
        inline: None,
    };
    match storage {
        PayloadStorage::Inline => envelope.inline = Some(mats),
        PayloadStorage::Sidecar => {
            let sidecar = sidecar_path_for(path);
            let bytes = encode_sidecar(&mats);
            envelope.payload_sha256 = Some(hex::encode(Sha256::digest(&bytes)));
            envelope.payload_path = Some(
                sidecar
                    .file_name()
                    .expect("derived from a file path")
                    .to_string_lossy()
                    .into_owned(),
            );
            fs::write(&sidecar, bytes)?;
        }
    }
    let mut f = fs::File::create(path)?;
    serde_json::to_writer(&mut f, &envelope)?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn load_trace(path: &Path) -> Result<Trace> {
    let mut text = String::new();
    fs::File::open(path)?.read_to_string(&mut text)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Header(format!("trace envelope: {e}")))?;
    let version = value
        .get("version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::Header("trace envelope has no numeric version".into()))?;
    if version != TRACE_VERSION as u64 {
        return Err(Error::UnsupportedVersion {
            found: u32::try_from(version).unwrap_or(u32::MAX),
            supported: TRACE_VERSION,
        });
    }
    let env: Envelope =
        serde_json::from_value(value).map_err(|e| Error::Header(format!("trace envelope: {e}")))?;
    let mats = match (env.inline, &env.payload_path) {
        (Some(m), None) => m,
        (None, Some(rel)) => {
            let sidecar = path.parent().unwrap_or(Path::new(".")).join(rel);
            let bytes = fs::read(&sidecar)?;
            if let Some(expected) = &env.payload_sha256 {
                if hex::encode(Sha256::digest(&bytes)) != expected.to_ascii_lowercase() {
                    return Err(Error::Checksum(sidecar));
                }
            }
            decode_sidecar(&bytes)?
        }
        _ => {
            return Err(Error::Header(
                "trace envelope needs exactly one of inline or payload_path".into(),
            ))
        }
    };
    let payload = payload_from_matrices(env.kind, &env.dims, mats)?;
    Ok(Trace {
        seed: env.seed,
        profile: env.profile,
        payload,
    })
}

/// Fraction of a row's positions needed to accumulate `mass` of its weight.
pub fn positions_for_mass(row: &[f64], mass: f64) -> f64 {
    let mut v = row.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = v.iter().sum();
    let mut acc = 0.0;
    for (i, w) in v.iter().enumerate() {
        acc += w;
        if acc >= mass * total {
            return (i + 1) as f64 / row.len() as f64;
        }
    }
    1.0
}
