use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a layer's sequence state becomes one sentence vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// Hidden state at position 0 (`[CLS]`).
    #[default]
    Cls,
    /// Mean over non-PAD positions.
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub n_layers: usize,
    pub hidden: usize,
    pub n_heads: usize,
    pub ff_dim: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub dropout_rate: f64,
    #[serde(default)]
    pub pooling: Pooling,
}

/// Number of segment (token type) embeddings.
pub const SEGMENT_TYPES: usize = 2;
pub const LAYER_NORM_EPS: f64 = 1e-12;
pub const INIT_STD: f64 = 0.02;

impl EncoderConfig {
    /// BERT-Base shape: 12 layers, 768 hidden units, 12 heads.
    pub fn reference(vocab_size: usize) -> Self {
        EncoderConfig {
            n_layers: 12,
            hidden: 768,
            n_heads: 12,
            ff_dim: 3072,
            vocab_size,
            max_positions: 512,
            dropout_rate: 0.1,
            pooling: Pooling::Cls,
        }
    }

    /// Desk-scale shape used throughout the tests.
    pub fn toy(vocab_size: usize, max_positions: usize) -> Self {
        EncoderConfig {
            n_layers: 2,
            hidden: 32,
            n_heads: 4,
            ff_dim: 64,
            vocab_size,
            max_positions,
            dropout_rate: 0.1,
            pooling: Pooling::Cls,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_layers == 0 || self.hidden == 0 || self.n_heads == 0 || self.ff_dim == 0 {
            return bad("encoder sizes must be positive".into());
        }
        if self.hidden % self.n_heads != 0 {
            return bad(format!("hidden {} is not divisible by {} heads", self.hidden, self.n_heads));
        }
        if self.vocab_size < crate::tokenizer::SPECIAL_TOKENS.len() {
            return bad(format!("vocab_size {} cannot hold the special tokens", self.vocab_size));
        }
        if self.max_positions < 2 {
            return bad("max_positions must fit [CLS] and [SEP]".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} must lie in [0, 1)", self.dropout_rate));
        }
        Ok(())
    }

    /// Closed-form parameter count, with `V` vocab, `P` positions, `H` hidden,
    /// `F` feed-forward width and `N` layers:
    ///
    /// ```text
    /// embeddings  (V + P + 2)·H + 2H                 (token, position, segment, LayerNorm)
    /// per layer   4(H² + H) + 2H + (HF + F) + (FH + H) + 2H
    /// MLM head    H² + H + 2H + V                     (transform, LayerNorm, output bias; decoder tied)
    /// NSP head    H² + H + 2H + 2                     (pooler, 2-way classifier)
    /// ```
    pub fn param_count(&self) -> usize {
        let (v, p, h, f, n) = (self.vocab_size, self.max_positions, self.hidden, self.ff_dim, self.n_layers);
        let embeddings = (v + p + SEGMENT_TYPES) * h + 2 * h;
        let layer = 4 * (h * h + h) + 2 * h + (h * f + f) + (f * h + h) + 2 * h;
        let mlm = h * h + h + 2 * h + v;
        let nsp = h * h + h + 2 * h + 2;
        embeddings + n * layer + mlm + nsp
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn divisibility() {
        let mut c = EncoderConfig::toy(50, 16);
        c.hidden = 30;
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        c.hidden = 32;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn reference_is_bert_base_sized() {
        // 21128 is the Chinese BERT vocabulary size; ~1.02e8 plus the tied
        // decoder bias and heads lands near the 110M usually quoted.
        let n = EncoderConfig::reference(21128).param_count();
        assert!((100_000_000..115_000_000).contains(&n), "{n}");
    }
}
