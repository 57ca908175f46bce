//! Per-head attention concentration of a trace: how much of the cache each
//! head needs to cover a given share of its attention.

use crate::attention::{AttentionWeights, LogitScale};
use crate::error::Result;
use crate::report::{Cell, Tabular};
use crate::trace::{positions_for_mass, Trace, TracePayload};

#[derive(Debug, Clone, PartialEq)]
pub struct HeadConcentration {
    pub layer: usize,
    pub head: usize,
    /// Mean over samples of the fraction of positions covering `mass`.
    pub mean_fraction: f64,
    pub min_fraction: f64,
    pub max_fraction: f64,
    /// Mean over samples of the largest single weight.
    pub mean_top_weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationReport {
    pub mass: f64,
    pub samples: usize,
    pub heads: Vec<HeadConcentration>,
}

/// Attention rows per sample and layer. Full traces use the last window
/// token attending over the whole cache.
fn sample_rows(trace: &Trace) -> Result<Vec<Vec<AttentionWeights>>> {
    match &trace.payload {
        TracePayload::WeightsOnly(s) => Ok(s.clone()),
        TracePayload::Full(s) => s
            .iter()
            .map(|layers| {
                layers
                    .iter()
                    .map(|l| {
                        let full = l.outside_cache()?.concat(&l.window_cache()?)?;
                        l.last_query_weights(&full, LogitScale::default())
                    })
                    .collect()
            })
            .collect(),
    }
}

pub fn head_concentration(trace: &Trace, mass: f64) -> Result<ConcentrationReport> {
    let rows = sample_rows(trace)?;
    let mut heads = Vec::new();
    if let Some(first) = rows.first() {
        for (layer, weights) in first.iter().enumerate() {
            for head in 0..weights.num_heads() {
                let fractions: Vec<f64> = rows
                    .iter()
                    .map(|s| positions_for_mass(s[layer].rows()[head].as_slice(), mass))
                    .collect();
                let tops = rows
                    .iter()
                    .map(|s| s[layer].rows()[head].iter().copied().fold(0.0, f64::max));
                let k = rows.len() as f64;
                heads.push(HeadConcentration {
                    layer,
                    head,
                    mean_fraction: fractions.iter().sum::<f64>() / k,
                    min_fraction: fractions.iter().copied().fold(f64::INFINITY, f64::min),
                    max_fraction: fractions.iter().copied().fold(0.0, f64::max),
                    mean_top_weight: tops.sum::<f64>() / k,
                });
            }
        }
    }
    Ok(ConcentrationReport {
        mass,
        samples: rows.len(),
        heads,
    })
}

impl Tabular for ConcentrationReport {
    fn columns(&self) -> Vec<&'static str> {
        vec![
            "layer",
            "head",
            "samples",
            "mass",
            "mean_fraction",
            "min_fraction",
            "max_fraction",
            "mean_top_weight",
        ]
    }

    fn records(&self) -> Vec<Vec<Cell>> {
        self.heads
            .iter()
            .map(|h| {
                vec![
                    Cell::Int(h.layer as u64),
                    Cell::Int(h.head as u64),
                    Cell::Int(self.samples as u64),
                    Cell::Float(self.mass),
                    Cell::Float(h.mean_fraction),
                    Cell::Float(h.min_fraction),
                    Cell::Float(h.max_fraction),
                    Cell::Float(h.mean_top_weight),
                ]
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{generate_synthetic_trace, GeneratorProfile, TraceKind};

    #[test]
    fn sparse_heads_need_fewer_positions() {
        let profile = GeneratorProfile {
            kind: TraceKind::WeightsOnly,
            samples: 5,
            heads: 4,
            n: 200,
            fraction_sparse_heads: 0.5,
            ..GeneratorProfile::default()
        };
        let trace = generate_synthetic_trace(&profile, 3).unwrap();
        let r = head_concentration(&trace, 0.95).unwrap();
        assert_eq!(r.heads.len(), 4);
        let mut f: Vec<f64> = r.heads.iter().map(|h| h.mean_fraction).collect();
        f.sort_by(f64::total_cmp);
        assert!(f[1] <= 0.1 && f[2] > 0.5, "{f:?}");
    }
}
