//! Deterministic feature-hashing embedder.
//!
//! Lowercased text is split on runs of non-alphanumeric characters. Each token
//! adds 1.0 at `fnv1a64(token) % dim` and each character trigram of the token
//! adds 0.5 at `fnv1a64(trigram) % dim`; the accumulator is then L2-normalized.

use async_trait::async_trait;

use super::{require_text, EmbeddingError, EmbeddingProvider, EmbeddingVector};

pub const MIN_LOCAL_DIM: usize = 16;

const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

const TOKEN_WEIGHT: f64 = 1.0;
const TRIGRAM_WEIGHT: f64 = 0.5;

/// 64-bit FNV-1a over the UTF-8 bytes of `s`.
pub fn fnv1a64(s: &str) -> u64 {
    s.bytes().fold(FNV_OFFSET_BASIS, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

fn bucket(feature: &str, dim: usize) -> usize {
    (fnv1a64(feature) % dim as u64) as usize
}

/// Un-normalized feature counts.
pub(crate) fn accumulate(text: &str, dim: usize) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    for token in tokenize(text) {
        acc[bucket(&token, dim)] += TOKEN_WEIGHT;
        let chars: Vec<char> = token.chars().collect();
        for window in chars.windows(3) {
            let trigram: String = window.iter().collect();
            acc[bucket(&trigram, dim)] += TRIGRAM_WEIGHT;
        }
    }
    acc
}

pub fn local_hash_embed(text: &str, dim: usize) -> Result<EmbeddingVector, EmbeddingError> {
    if dim < MIN_LOCAL_DIM {
        return Err(EmbeddingError::InvalidDimension(dim));
    }
    require_text(text)?;
    EmbeddingVector::normalized(accumulate(text, dim))
}

#[derive(Debug, Clone, Copy)]
pub struct LocalHashEmbedder {
    dim: usize,
}

impl LocalHashEmbedder {
    pub fn new(dim: usize) -> Result<Self, EmbeddingError> {
        if dim < MIN_LOCAL_DIM {
            return Err(EmbeddingError::InvalidDimension(dim));
        }
        Ok(Self { dim })
    }
}

#[async_trait]
impl EmbeddingProvider for LocalHashEmbedder {
    fn dim(&self) -> Option<usize> {
        Some(self.dim)
    }

    fn describe(&self) -> String {
        format!("local_hash(dim={})", self.dim)
    }

    async fn embed_text(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        local_hash_embed(text, self.dim)
    }
}
