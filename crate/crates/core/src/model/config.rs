use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerKind {
    #[default]
    Byte,
    Word,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_mult: usize,
    pub max_seq_len: usize,
    pub seed: u64,
    pub tokenizer: TokenizerKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 256,
            embed_dim: 64,
            num_layers: 8,
            num_heads: 4,
            ffn_mult: 4,
            max_seq_len: 64,
            seed: 0,
            tokenizer: TokenizerKind::Byte,
        }
    }
}

/// Seeds are stored in checkpoints as `f64`, so they must be exactly representable.
pub const MAX_SEED: u64 = 1 << 53;

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.vocab_size < 2 {
            return fail(format!("vocab_size must be >= 2, got {}", self.vocab_size));
        }
        if self.tokenizer == TokenizerKind::Byte && self.vocab_size < 256 {
            return fail(format!(
                "byte tokenizer needs vocab_size >= 256, got {}",
                self.vocab_size
            ));
        }
        if self.num_layers < 2 {
            return fail(format!("num_layers must be >= 2, got {}", self.num_layers));
        }
        if self.num_heads == 0 || self.embed_dim == 0 {
            return fail("embed_dim and num_heads must be positive".into());
        }
        if !self.embed_dim.is_multiple_of(self.num_heads) {
            return fail(format!(
                "embed_dim {} must be divisible by num_heads {}",
                self.embed_dim, self.num_heads
            ));
        }
        if self.ffn_mult == 0 || self.max_seq_len == 0 {
            return fail("ffn_mult and max_seq_len must be positive".into());
        }
        if self.seed >= MAX_SEED {
            return fail(format!("seed must be below 2^53, got {}", self.seed));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn ffn_dim(&self) -> usize {
        self.embed_dim * self.ffn_mult
    }

    /// Weight count of one layer's linear maps (attention projections and FFN).
    pub fn layer_linear_params(&self) -> usize {
        let d = self.embed_dim;
        4 * d * d + 2 * d * self.ffn_dim()
    }
}
