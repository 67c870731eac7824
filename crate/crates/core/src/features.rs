//! Bag-of-tokens documents and per-chunk feature hashing.

use serde::{Deserialize, Serialize};

use crate::codes::LabelId;
use crate::error::{Result, SolarError};
use crate::hash::{derive_seed, hash_u64};

pub type TokenId = u64;

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: u64,
    /// `(token, weight)` pairs; token ids unique, weights finite and positive.
    pub tokens: Vec<(TokenId, f32)>,
    /// Ascending, unique. Empty at inference time.
    pub labels: Vec<LabelId>,
}

impl Document {
    pub fn new(id: u64, tokens: Vec<(TokenId, f32)>, labels: Vec<LabelId>) -> Self {
        Self { id, tokens, labels }
    }

    /// Checks the token and label invariants against a label count.
    pub fn validate(&self, num_labels: usize) -> Result<()> {
        let mut ids: Vec<TokenId> = self.tokens.iter().map(|t| t.0).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(SolarError::Format(format!("document {}: duplicate token id", self.id)));
        }
        if self.tokens.iter().any(|&(_, v)| !(v.is_finite() && v > 0.0)) {
            return Err(SolarError::Format(format!(
                "document {}: token weights must be finite and positive",
                self.id
            )));
        }
        if self.labels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SolarError::Format(format!("document {}: labels not strictly increasing", self.id)));
        }
        if let Some(&l) = self.labels.last() {
            if l as usize >= num_labels {
                return Err(SolarError::OutOfRange {
                    what: "label",
                    value: l as usize,
                    limit: num_labels,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    /// Colliding tokens sum their weights.
    #[default]
    Counts,
    /// Every touched slot is 1.
    Binary,
}

impl std::str::FromStr for FeatureMode {
    type Err = SolarError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "counts" => Ok(FeatureMode::Counts),
            "binary" => Ok(FeatureMode::Binary),
            other => Err(SolarError::config(format!("unknown feature mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FeatureMode::Counts => "counts",
            FeatureMode::Binary => "binary",
        })
    }
}

/// Sparse vector in `[0, dim)` with strictly increasing indices.
#[derive(Debug, Clone, PartialEq)]
pub struct HashedFeatures {
    pub dim: usize,
    pub indices: Vec<u32>,
    pub values: Vec<f32>,
}

impl HashedFeatures {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f32)> + '_ {
        self.indices.iter().map(|&i| i as usize).zip(self.values.iter().copied())
    }
}

/// Seed for chunk `chunk`; the same split the codebook uses.
pub fn derive_chunk_seed(base_seed: u64, chunk: usize) -> u64 {
    derive_seed(base_seed, chunk as u64)
}

/// Unsigned hashing trick: token `t` lands in slot `murmur3(t, seed) mod dim`.
pub fn hash_features(doc: &Document, chunk_seed: u64, dim: usize, mode: FeatureMode) -> Result<HashedFeatures> {
    if dim == 0 {
        return Err(SolarError::config("feature dimension must be at least 1"));
    }
    if dim > u32::MAX as usize {
        return Err(SolarError::config("feature dimension must fit in 32 bits"));
    }
    let mut slots: Vec<(u32, f32)> = doc
        .tokens
        .iter()
        .map(|&(t, v)| ((hash_u64(t, chunk_seed) % dim as u32), v))
        .collect();
    slots.sort_unstable_by_key(|s| s.0);

    let mut indices = Vec::with_capacity(slots.len());
    let mut values: Vec<f32> = Vec::with_capacity(slots.len());
    for (slot, v) in slots {
        let v = match mode {
            FeatureMode::Counts => v,
            FeatureMode::Binary => 1.0,
        };
        if indices.last() == Some(&slot) {
            let last = values.last_mut().expect("parallel vectors");
            match mode {
                FeatureMode::Counts => *last += v,
                FeatureMode::Binary => *last = 1.0,
            }
        } else {
            indices.push(slot);
            values.push(v);
        }
    }
    Ok(HashedFeatures { dim, indices, values })
}
