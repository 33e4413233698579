use super::{EmbeddingVector, TextEmbedder};
use crate::error::{Error, OracleError, Result};
use crate::text::tokenize;

pub const DEFAULT_EMBED_DIM: usize = 256;
const MIN_EMBED_DIM: usize = 8;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Signed feature hashing of lowercase alphanumeric tokens, L2-normalized.
pub fn hash_embed(text: &str, dim: usize) -> Result<EmbeddingVector> {
    if dim < MIN_EMBED_DIM {
        return Err(Error::InvalidArgument(format!("embedding dim must be >= {MIN_EMBED_DIM}, got {dim}")));
    }
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Ok(EmbeddingVector::zero(dim));
    }
    let mut acc = vec![0.0; dim];
    for tok in &tokens {
        let h = fnv1a64(tok.as_bytes());
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        acc[(h % dim as u64) as usize] += sign;
    }
    EmbeddingVector::normalized(acc)
}

/// Desk-scale text embedder backed by [`hash_embed`].
#[derive(Debug, Clone, Copy)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < MIN_EMBED_DIM {
            return Err(Error::InvalidArgument(format!("embedding dim must be >= {MIN_EMBED_DIM}, got {dim}")));
        }
        Ok(Self { dim })
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self { dim: DEFAULT_EMBED_DIM }
    }
}

impl TextEmbedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, OracleError> {
        Ok(hash_embed(text, self.dim).expect("dim validated at construction"))
    }
}
