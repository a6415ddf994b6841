//! Character vocabulary, fixed-length encoding and masked-LM corruption.
//!
//! Ids 0–4 are reserved for `[PAD] [UNK] [CLS] [SEP] [MASK]`. Ordinary
//! tokens follow in order of decreasing frequency, ties broken by the
//! token's code points, so the same corpus always yields the same ids.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const MASK: u32 = 4;
pub const SPECIAL_TOKENS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];
/// First id assigned to an ordinary token.
pub const FIRST_ORDINARY: u32 = 5;

/// Maximum sequence length used by the reference configuration.
pub const DEFAULT_MAX_LEN: usize = 200;
pub const DEFAULT_MASK_RATE: f64 = 0.15;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

fn from_counts(counts: HashMap<String, usize>, min_freq: usize) -> Vocab {
    let mut entries: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, n)| *n >= min_freq.max(1) && !SPECIAL_TOKENS.contains(&t.as_str()))
        .collect();
    entries.sort_by(|(ta, na), (tb, nb)| nb.cmp(na).then_with(|| ta.cmp(tb)));
    let tokens = SPECIAL_TOKENS
        .iter()
        .map(|s| s.to_string())
        .chain(entries.into_iter().map(|(t, _)| t))
        .collect();
    Vocab::from_tokens(tokens)
}

/// One entry per distinct character occurring at least `min_freq` times.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S], min_freq: usize) -> Result<Vocab> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for text in corpus {
        for ch in text.as_ref().chars() {
            *counts.entry(ch.to_string()).or_default() += 1;
        }
    }
    Ok(from_counts(counts, min_freq))
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Vocab {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocab { tokens, index }
    }

    /// Word-level vocabulary over pre-tokenized documents.
    pub fn from_token_lists<S: AsRef<str>>(docs: &[Vec<S>], min_freq: usize) -> Result<Vocab> {
        if docs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for doc in docs {
            for t in doc {
                *counts.entry(t.as_ref().to_string()).or_default() += 1;
            }
        }
        Ok(from_counts(counts, min_freq))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map_or(SPECIAL_TOKENS[UNK as usize], String::as_str)
    }

    fn char_ids(&self, text: &str) -> Vec<u32> {
        let mut buf = [0u8; 4];
        text.chars().map(|c| self.id(c.encode_utf8(&mut buf))).collect()
    }

    /// `{token: id}` in id order.
    pub fn to_json(&self) -> String {
        let mut out = String::from("{");
        for (i, t) in self.tokens.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&serde_json::to_string(t).expect("string serializes"));
            out.push(':');
            out.push_str(&i.to_string());
        }
        out.push('}');
        out
    }

    pub fn from_json(json: &str) -> Result<Vocab> {
        let map: HashMap<String, u32> = serde_json::from_str(json)?;
        let mut tokens = vec![None; map.len()];
        for (t, id) in map {
            let slot = tokens
                .get_mut(id as usize)
                .ok_or_else(|| Error::InvalidConfig(format!("vocab id {id} out of range")))?;
            if slot.replace(t).is_some() {
                return Err(Error::InvalidConfig(format!("vocab id {id} assigned twice")));
            }
        }
        let tokens: Vec<String> = tokens
            .into_iter()
            .collect::<Option<_>>()
            .ok_or_else(|| Error::InvalidConfig("vocab ids are not contiguous".into()))?;
        if tokens.len() < SPECIAL_TOKENS.len() || tokens[..5] != SPECIAL_TOKENS {
            return Err(Error::InvalidConfig("vocab must start with the five special tokens".into()));
        }
        Ok(Vocab::from_tokens(tokens))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocab::from_json(&s)
    }
}

/// Fixed-length id sequence fed to the encoder.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub segment_ids: Vec<u8>,
    /// Number of leading non-PAD positions.
    pub true_len: usize,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Positions holding ordinary (or UNK) tokens.
    pub fn content_positions(&self) -> Vec<usize> {
        (0..self.true_len)
            .filter(|&i| !matches!(self.ids[i], PAD | CLS | SEP))
            .collect()
    }

    /// `true` for every non-PAD position.
    pub fn attention_mask(&self) -> Vec<bool> {
        (0..self.ids.len()).map(|i| i < self.true_len).collect()
    }

    fn padded(mut ids: Vec<u32>, mut segment_ids: Vec<u8>, len: usize) -> Self {
        let true_len = ids.len();
        ids.resize(len, PAD);
        segment_ids.resize(len, 0);
        TokenSequence {
            ids,
            segment_ids,
            true_len,
        }
    }
}

/// `[CLS] c₁…c_k [SEP] [PAD]…` with the tail truncated to `k ≤ max_len − 2`.
pub fn encode(text: &str, vocab: &Vocab, max_len: usize) -> TokenSequence {
    assert!(max_len >= 2, "sequence length must fit [CLS] and [SEP]");
    let mut content = vocab.char_ids(text);
    content.truncate(max_len - 2);
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS);
    ids.extend(content);
    ids.push(SEP);
    let segs = vec![0; ids.len()];
    TokenSequence::padded(ids, segs, max_len)
}

/// `[CLS] A [SEP] B [SEP] [PAD]…`; when too long, one token is dropped from
/// the end of the longer segment (A on ties) until it fits.
pub fn encode_pair(a: &str, b: &str, vocab: &Vocab, max_len: usize) -> TokenSequence {
    assert!(max_len >= 3, "sequence length must fit [CLS] and two [SEP]");
    let mut a = vocab.char_ids(a);
    let mut b = vocab.char_ids(b);
    while a.len() + b.len() > max_len - 3 {
        if a.len() >= b.len() {
            a.pop();
        } else {
            b.pop();
        }
    }
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS);
    ids.extend(&a);
    ids.push(SEP);
    let first = ids.len();
    ids.extend(&b);
    ids.push(SEP);
    let mut segs = vec![0u8; first];
    segs.resize(ids.len(), 1);
    TokenSequence::padded(ids, segs, max_len)
}

/// Content tokens of `seq` joined back into text, segments concatenated.
pub fn decode(seq: &TokenSequence, vocab: &Vocab) -> String {
    seq.content_positions().into_iter().map(|i| vocab.token(seq.ids[i])).collect()
}

/// Token strings for every position, specials included.
pub fn tokens_of(seq: &TokenSequence, vocab: &Vocab) -> Vec<String> {
    seq.ids.iter().map(|&id| vocab.token(id).to_string()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NspLabel {
    IsNext,
    NotNext,
}

impl NspLabel {
    pub fn index(self) -> usize {
        match self {
            NspLabel::IsNext => 0,
            NspLabel::NotNext => 1,
        }
    }
}

/// Masked-LM training example.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlmBatchItem {
    pub input: TokenSequence,
    /// Original id at each selected position; `None` elsewhere.
    pub labels: Vec<Option<u32>>,
    pub nsp_label: NspLabel,
}

impl MlmBatchItem {
    pub fn selected_positions(&self) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i].is_some()).collect()
    }
}

/// Number of positions [`mask_for_mlm`] selects from `content_len` tokens.
pub fn mask_count(content_len: usize, rate: f64) -> usize {
    ((rate * content_len as f64).round() as usize).clamp(1, content_len.max(1))
}

/// Selects `round(rate · content_len)` (at least one) content positions.
/// Each selected position becomes `[MASK]` with probability 0.8, a random
/// ordinary token with probability 0.1, and stays as is otherwise.
pub fn mask_for_mlm(seq: &TokenSequence, vocab: &Vocab, rate: f64, seed: u64) -> MlmBatchItem {
    let content = seq.content_positions();
    assert!(!content.is_empty(), "masking needs at least one content token");
    let mut rng = seeded(seed);
    let k = mask_count(content.len(), rate);
    let chosen = rand::seq::index::sample(&mut rng, content.len(), k);
    let mut input = seq.clone();
    let mut labels = vec![None; seq.len()];
    let ordinary = vocab.len() as u32 > FIRST_ORDINARY;
    let mut positions: Vec<usize> = chosen.into_iter().map(|j| content[j]).collect();
    positions.sort_unstable();
    for pos in positions {
        labels[pos] = Some(seq.ids[pos]);
        let u: f64 = rng.random();
        if u < 0.8 {
            input.ids[pos] = MASK;
        } else if u < 0.9 {
            input.ids[pos] = if ordinary {
                rng.random_range(FIRST_ORDINARY..vocab.len() as u32)
            } else {
                UNK
            };
        }
    }
    MlmBatchItem {
        input,
        labels,
        nsp_label: NspLabel::IsNext,
    }
}
