//! Masked-LM and next-sentence objectives.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::LAYER_NORM_EPS;
use super::model::EncoderModel;
use crate::error::{Error, Result};
use crate::numerics::{mean_gradients, AdamConfig, AdamState, Binding, Tape, Var};
use crate::rng::{derive_seed, seeded, ChaCha8Rng};
use crate::tokenizer::{encode_pair, mask_for_mlm, MlmBatchItem, NspLabel, Vocab};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainLosses {
    pub mlm_loss: f64,
    pub nsp_loss: f64,
}

impl PretrainLosses {
    pub fn total(&self) -> f64 {
        self.mlm_loss + self.nsp_loss
    }
}

const SENTENCE_ENDS: [char; 4] = ['。', '；', '！', '？'];

/// Splits after each sentence-final mark, keeping the mark; empty pieces dropped.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        cur.push(ch);
        if SENTENCE_ENDS.contains(&ch) {
            if !cur.trim().is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            cur.clear();
        }
    }
    if !cur.trim().is_empty() {
        out.push(cur);
    }
    out
}

/// `(A, B)` halves of a document: a random sentence boundary when there
/// are several sentences, otherwise the character midpoint.
fn halves(text: &str, rng: &mut ChaCha8Rng) -> (String, String) {
    let sentences = split_sentences(text);
    if sentences.len() >= 2 {
        let k = rng.random_range(1..sentences.len());
        (sentences[..k].concat(), sentences[k..].concat())
    } else {
        let chars: Vec<char> = text.chars().collect();
        let mid = chars.len() / 2;
        (chars[..mid].iter().collect(), chars[mid..].iter().collect())
    }
}

/// One MLM+NSP example per document. With probability ½ the second
/// segment is replaced by the second half of a different document.
pub fn build_pretraining_items<S: AsRef<str>>(
    texts: &[S],
    vocab: &Vocab,
    max_len: usize,
    mask_rate: f64,
    seed: u64,
) -> Vec<MlmBatchItem> {
    let mut rng = seeded(seed);
    let mut out = Vec::with_capacity(texts.len());
    for (i, text) in texts.iter().enumerate() {
        let (a, mut b) = halves(text.as_ref(), &mut rng);
        let mut label = NspLabel::IsNext;
        if texts.len() > 1 && rng.random_bool(0.5) {
            let mut j = rng.random_range(0..texts.len() - 1);
            if j >= i {
                j += 1;
            }
            b = halves(texts[j].as_ref(), &mut rng).1;
            label = NspLabel::NotNext;
        }
        let seq = encode_pair(&a, &b, vocab, max_len);
        if seq.content_positions().is_empty() {
            continue;
        }
        let mut item = mask_for_mlm(&seq, vocab, mask_rate, derive_seed(seed, &[i as u64]));
        item.nsp_label = label;
        out.push(item);
    }
    out
}

/// Records both objectives for one example and returns `(mlm, nsp)` loss nodes.
pub fn pretraining_losses_on_tape(
    model: &EncoderModel,
    tape: &mut Tape,
    bind: &Binding,
    item: &MlmBatchItem,
    dropout: Option<&mut ChaCha8Rng>,
) -> Result<(Var, Var)> {
    let enc = model.encode_on_tape(tape, bind, &item.input, dropout)?;
    let top = *enc.layer_states.last().expect("validated config has layers");
    let h = model.head_ids().clone();

    let positions = item.selected_positions();
    if positions.is_empty() {
        return Err(Error::InvalidConfig("MLM example has no selected position".into()));
    }
    let targets: Vec<Option<usize>> = positions.iter().map(|&p| item.labels[p].map(|id| id as usize)).collect();
    let x = tape.select_rows(top, &positions)?;
    let x = tape.matmul(x, bind[h.mlm_w])?;
    let x = tape.add_bias(x, bind[h.mlm_b])?;
    let x = tape.gelu(x)?;
    let x = tape.layer_norm(x, bind[h.mlm_ln_g], bind[h.mlm_ln_b], LAYER_NORM_EPS)?;
    let logits = tape.matmul_bt(x, bind[model.token_embedding_id()])?;
    let logits = tape.add_bias(logits, bind[h.mlm_out_b])?;
    let mlm = tape.cross_entropy(logits, &targets)?;

    let cls = tape.select_rows(top, &[0])?;
    let pooled = tape.matmul(cls, bind[h.pool_w])?;
    let pooled = tape.add_bias(pooled, bind[h.pool_b])?;
    let pooled = tape.tanh(pooled)?;
    let nsp_logits = tape.matmul(pooled, bind[h.nsp_w])?;
    let nsp_logits = tape.add_bias(nsp_logits, bind[h.nsp_b])?;
    let nsp = tape.cross_entropy(nsp_logits, &[Some(item.nsp_label.index())])?;
    Ok((mlm, nsp))
}

/// Mean losses over `batch` without dropout; the model is not changed.
pub fn pretrain_loss(model: &EncoderModel, batch: &[MlmBatchItem]) -> Result<PretrainLosses> {
    if batch.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let per: Vec<PretrainLosses> = batch
        .par_iter()
        .map(|item| {
            let mut tape = Tape::new();
            let bind = model.params().bind(&mut tape);
            let (m, n) = pretraining_losses_on_tape(model, &mut tape, &bind, item, None)?;
            Ok(PretrainLosses {
                mlm_loss: tape.value(m).data()[0],
                nsp_loss: tape.value(n).data()[0],
            })
        })
        .collect::<Result<_>>()?;
    Ok(mean_losses(&per))
}

fn mean_losses(per: &[PretrainLosses]) -> PretrainLosses {
    let n = per.len() as f64;
    PretrainLosses {
        mlm_loss: per.iter().map(|l| l.mlm_loss).sum::<f64>() / n,
        nsp_loss: per.iter().map(|l| l.nsp_loss).sum::<f64>() / n,
    }
}

/// One Adam step on the batch-mean of `mlm_loss + nsp_loss`. Returns the
/// losses measured before the update (dropout active).
pub fn pretrain_step(
    model: &mut EncoderModel,
    batch: &[MlmBatchItem],
    adam: &mut AdamState,
    seed: u64,
) -> Result<PretrainLosses> {
    if batch.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let results: Vec<(PretrainLosses, Vec<_>)> = batch
        .par_iter()
        .enumerate()
        .map(|(i, item)| {
            let mut rng = seeded(derive_seed(seed, &[i as u64]));
            let mut tape = Tape::new();
            let bind = model.params().bind(&mut tape);
            let (m, n) = pretraining_losses_on_tape(model, &mut tape, &bind, item, Some(&mut rng))?;
            let total = tape.add(m, n)?;
            let mut grads = tape.backward(total)?;
            let losses = PretrainLosses {
                mlm_loss: tape.value(m).data()[0],
                nsp_loss: tape.value(n).data()[0],
            };
            Ok((losses, bind.gradients(&mut grads)?))
        })
        .collect::<Result<_>>()?;
    let (losses, grads): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let grads = mean_gradients(grads).expect("non-empty batch");
    adam.step_params(model.params_mut(), &grads)?;
    let out = mean_losses(&losses);
    if !out.total().is_finite() {
        return Err(Error::InvalidConfig("pretraining loss diverged".into()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainOptions {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub max_len: usize,
    pub mask_rate: f64,
    pub seed: u64,
}

/// Per-step record of a pretraining run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainRecord {
    pub step: usize,
    pub mlm_loss: f64,
    pub nsp_loss: f64,
}

/// Runs `opts.steps` updates, cycling through the corpus in shuffled
/// passes; masking and pairing are redrawn every pass.
pub fn pretrain<S: AsRef<str> + Sync>(
    model: &mut EncoderModel,
    texts: &[S],
    vocab: &Vocab,
    opts: &PretrainOptions,
) -> Result<Vec<PretrainRecord>> {
    if texts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if opts.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be positive".into()));
    }
    let mut adam = AdamState::new(AdamConfig::with_lr(opts.lr), model.params());
    let mut records = Vec::with_capacity(opts.steps);
    let mut pass = 0u64;
    let mut items: Vec<MlmBatchItem> = Vec::new();
    let mut cursor = 0;
    for step in 0..opts.steps {
        if cursor >= items.len() {
            let pass_seed = derive_seed(opts.seed, &[pass]);
            items = build_pretraining_items(texts, vocab, opts.max_len, opts.mask_rate, pass_seed);
            if items.is_empty() {
                return Err(Error::EmptyCorpus);
            }
            items.shuffle(&mut seeded(derive_seed(pass_seed, &[u64::MAX])));
            pass += 1;
            cursor = 0;
        }
        let end = (cursor + opts.batch_size).min(items.len());
        let losses = pretrain_step(model, &items[cursor..end], &mut adam, derive_seed(opts.seed, &[pass, step as u64]))?;
        cursor = end;
        records.push(PretrainRecord {
            step,
            mlm_loss: losses.mlm_loss,
            nsp_loss: losses.nsp_loss,
        });
    }
    Ok(records)
}
