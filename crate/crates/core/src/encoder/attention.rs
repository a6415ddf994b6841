use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::EncoderModel;
use crate::error::{Error, Result};
use crate::tokenizer::{tokens_of, TokenSequence, Vocab};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadAttention {
    /// 1-based head number.
    pub head: usize,
    /// `L × L` post-softmax weights; row = query position.
    pub weights: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerAttention {
    /// 1-based layer number, bottom layer first.
    pub layer: usize,
    pub heads: Vec<HeadAttention>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionDump {
    pub tokens: Vec<String>,
    pub layers: Vec<LayerAttention>,
}

/// Attention weights of every layer and head for one (pair-encoded) sequence.
pub fn export_attention(model: &EncoderModel, seq: &TokenSequence, vocab: &Vocab) -> Result<AttentionDump> {
    let out = model.forward(std::slice::from_ref(seq))?.pop().expect("one output per input");
    let layers = out
        .attention
        .iter()
        .enumerate()
        .map(|(l, heads)| LayerAttention {
            layer: l + 1,
            heads: heads
                .iter()
                .enumerate()
                .map(|(h, t)| HeadAttention {
                    head: h + 1,
                    weights: (0..seq.len()).map(|r| t.row(r).to_vec()).collect(),
                })
                .collect(),
        })
        .collect();
    Ok(AttentionDump {
        tokens: tokens_of(seq, vocab),
        layers,
    })
}

impl AttentionDump {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}
