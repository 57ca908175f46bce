//! Flattened storage for a layer whose heads hold different numbers of
//! cache elements.
//!
//! One contiguous buffer holds, for each head in ascending order, all of the
//! head's key rows followed by all of its value rows. `offsets[i]` is the
//! number of elements stored before head `i`, so head `i`'s keys start at
//! value index `2 * offsets[i] * d_h`.
//!
//! Binary form (all integers little-endian):
//!
//! ```text
//! magic  b"AKVC"
//! u32    version (1)
//! u32    h
//! u32    d_h
//! u64    length of head 0 .. head h-1
//! f64    buffer values, 2 * Σ lengths * d_h of them
//! ```

use std::io::{Read, Write};

use crate::attention::{EvictionDecision, HeadKv, LayerCache};
use crate::error::{dim_err, Error, Result};
use crate::tensor::Matrix;

pub const MAGIC: &[u8; 4] = b"AKVC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FlattenedCache {
    data: Vec<f64>,
    offsets: Vec<usize>,
    lengths: Vec<usize>,
    head_dim: usize,
}

/// Element and byte counts of a flattened layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheStats {
    pub total_elements: usize,
    pub bytes: usize,
}

/// Borrowed rows of one head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadView<'a> {
    pub keys: &'a [f64],
    pub values: &'a [f64],
    pub head_dim: usize,
}

impl HeadView<'_> {
    pub fn len(&self) -> usize {
        self.keys.len().checked_div(self.head_dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn key(&self, j: usize) -> &[f64] {
        &self.keys[j * self.head_dim..(j + 1) * self.head_dim]
    }

    pub fn value(&self, j: usize) -> &[f64] {
        &self.values[j * self.head_dim..(j + 1) * self.head_dim]
    }
}

fn prefix_sums(lengths: &[usize]) -> Vec<usize> {
    lengths
        .iter()
        .scan(0, |acc, &l| {
            let start = *acc;
            *acc += l;
            Some(start)
        })
        .collect()
}

impl FlattenedCache {
    pub fn flatten(cache: &LayerCache) -> Result<Self> {
        let head_dim = cache.head_dim();
        let mut data = Vec::with_capacity(2 * cache.total_len() * head_dim);
        for (i, h) in cache.heads().iter().enumerate() {
            if h.keys.cols() != head_dim || h.values.cols() != head_dim {
                return Err(dim_err(format!(
                    "head {i} width differs from d_h={head_dim}"
                )));
            }
            data.extend_from_slice(h.keys.as_slice());
            data.extend_from_slice(h.values.as_slice());
        }
        let lengths = cache.lengths();
        Ok(Self {
            offsets: prefix_sums(&lengths),
            lengths,
            data,
            head_dim,
        })
    }

    pub fn num_heads(&self) -> usize {
        self.lengths.len()
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn total_elements(&self) -> usize {
        self.lengths.iter().sum()
    }

    pub fn head_slice(&self, i: usize) -> Result<HeadView<'_>> {
        if i >= self.num_heads() {
            return Err(Error::HeadOutOfRange {
                index: i,
                len: self.num_heads(),
            });
        }
        let start = 2 * self.offsets[i] * self.head_dim;
        let span = self.lengths[i] * self.head_dim;
        Ok(HeadView {
            keys: &self.data[start..start + span],
            values: &self.data[start + span..start + 2 * span],
            head_dim: self.head_dim,
        })
    }

    /// Rebuilds the per-head cache.
    pub fn unflatten(&self) -> LayerCache {
        let heads = (0..self.num_heads())
            .map(|i| {
                let v = self.head_slice(i).expect("index in range");
                let n = self.lengths[i];
                HeadKv {
                    keys: Matrix::from_vec(n, self.head_dim, v.keys.to_vec()).expect("sized"),
                    values: Matrix::from_vec(n, self.head_dim, v.values.to_vec()).expect("sized"),
                }
            })
            .collect();
        LayerCache::from_heads(self.head_dim, heads).expect("consistent layout")
    }

    /// New layout holding only the retained rows, in their original order.
    pub fn select_and_compact(&self, decision: &EvictionDecision) -> Result<FlattenedCache> {
        decision.check_lengths(&self.lengths)?;
        let dh = self.head_dim;
        let mut data = Vec::with_capacity(2 * decision.total() * dh);
        for i in 0..self.num_heads() {
            let view = self.head_slice(i)?;
            let mask = decision.head(i);
            for (j, _) in mask.iter().enumerate().filter(|(_, &k)| k) {
                data.extend_from_slice(view.key(j));
            }
            for (j, _) in mask.iter().enumerate().filter(|(_, &k)| k) {
                data.extend_from_slice(view.value(j));
            }
        }
        let lengths = decision.counts();
        Ok(FlattenedCache {
            offsets: prefix_sums(&lengths),
            lengths,
            data,
            head_dim: dh,
        })
    }

    pub fn memory_footprint(&self, bytes_per_value: usize) -> CacheStats {
        let total_elements = self.total_elements();
        CacheStats {
            total_elements,
            bytes: total_elements * self.head_dim * 2 * bytes_per_value,
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.num_heads() as u32).to_le_bytes())?;
        w.write_all(&(self.head_dim as u32).to_le_bytes())?;
        for &l in &self.lengths {
            w.write_all(&(l as u64).to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * (self.num_heads() + self.data.len()));
        self.write_to(&mut out)
            .expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "magic")?;
        if &magic != MAGIC {
            return Err(Error::Header(format!("bad magic {magic:?}")));
        }
        let version = read_u32(&mut r, "version")?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let h = read_u32(&mut r, "head count")? as usize;
        let head_dim = read_u32(&mut r, "head width")? as usize;
        let mut lengths = Vec::with_capacity(h.min(1 << 16));
        for _ in 0..h {
            lengths.push(read_u64(&mut r, "head length")? as usize);
        }
        let count = lengths
            .iter()
            .try_fold(0usize, |acc, &l| acc.checked_add(l))
            .and_then(|t| t.checked_mul(2 * head_dim))
            .ok_or_else(|| Error::Header("buffer size overflows".into()))?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != count * 8 {
            return Err(Error::Header(format!(
                "expected {} buffer bytes, found {}",
                count * 8,
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Self {
            offsets: prefix_sums(&lengths),
            lengths,
            data,
            head_dim,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }
}

pub(crate) fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => {
            Error::Header(format!("truncated while reading {what}"))
        }
        _ => Error::Io(e),
    })
}

pub(crate) fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}
