use rand::Rng;
use rayon::prelude::*;

use super::config::{EncoderConfig, Pooling, INIT_STD, LAYER_NORM_EPS, SEGMENT_TYPES};
use crate::error::{Error, Result};
use crate::numerics::{dropout_mask, truncated_normal, Binding, ParamId, ParamSet, Tape, Tensor, Var};
use crate::rng::{seeded, ChaCha8Rng};
use crate::tokenizer::TokenSequence;

#[derive(Clone, Debug)]
struct LayerIds {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln1_g: ParamId,
    ln1_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
}

#[derive(Clone, Debug)]
pub(crate) struct HeadIds {
    pub mlm_w: ParamId,
    pub mlm_b: ParamId,
    pub mlm_ln_g: ParamId,
    pub mlm_ln_b: ParamId,
    pub mlm_out_b: ParamId,
    pub pool_w: ParamId,
    pub pool_b: ParamId,
    pub nsp_w: ParamId,
    pub nsp_b: ParamId,
}

#[derive(Clone, Debug)]
struct Ids {
    tok: ParamId,
    pos: ParamId,
    seg: ParamId,
    emb_ln_g: ParamId,
    emb_ln_b: ParamId,
    layers: Vec<LayerIds>,
    heads: HeadIds,
}

/// Parameter names and shapes in registration order.
fn layout(c: &EncoderConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (h, f) = (c.hidden, c.ff_dim);
    let mut out = vec![
        ("embeddings.token".to_string(), vec![c.vocab_size, h], Init::Normal),
        ("embeddings.position".to_string(), vec![c.max_positions, h], Init::Normal),
        ("embeddings.segment".to_string(), vec![SEGMENT_TYPES, h], Init::Normal),
        ("embeddings.ln.gain".to_string(), vec![h], Init::One),
        ("embeddings.ln.bias".to_string(), vec![h], Init::Zero),
    ];
    for l in 0..c.n_layers {
        let p = |s: &str| format!("layer.{l}.{s}");
        for m in ["query", "key", "value", "output"] {
            out.push((p(&format!("attn.{m}.weight")), vec![h, h], Init::Normal));
            out.push((p(&format!("attn.{m}.bias")), vec![h], Init::Zero));
        }
        out.push((p("attn.ln.gain"), vec![h], Init::One));
        out.push((p("attn.ln.bias"), vec![h], Init::Zero));
        out.push((p("ff.in.weight"), vec![h, f], Init::Normal));
        out.push((p("ff.in.bias"), vec![f], Init::Zero));
        out.push((p("ff.out.weight"), vec![f, h], Init::Normal));
        out.push((p("ff.out.bias"), vec![h], Init::Zero));
        out.push((p("ff.ln.gain"), vec![h], Init::One));
        out.push((p("ff.ln.bias"), vec![h], Init::Zero));
    }
    out.extend([
        ("mlm.transform.weight".to_string(), vec![h, h], Init::Normal),
        ("mlm.transform.bias".to_string(), vec![h], Init::Zero),
        ("mlm.ln.gain".to_string(), vec![h], Init::One),
        ("mlm.ln.bias".to_string(), vec![h], Init::Zero),
        ("mlm.output.bias".to_string(), vec![c.vocab_size], Init::Zero),
        ("nsp.pooler.weight".to_string(), vec![h, h], Init::Normal),
        ("nsp.pooler.bias".to_string(), vec![h], Init::Zero),
        ("nsp.classifier.weight".to_string(), vec![h, 2], Init::Normal),
        ("nsp.classifier.bias".to_string(), vec![2], Init::Zero),
    ]);
    out
}

#[derive(Clone, Copy)]
enum Init {
    Normal,
    Zero,
    One,
}

fn resolve_ids(c: &EncoderConfig, params: &ParamSet) -> Result<Ids> {
    let get = |name: &str| -> Result<ParamId> {
        params
            .id_of(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
    };
    for (name, shape, _) in layout(c) {
        params.expect(&name, &shape)?;
    }
    let layers = (0..c.n_layers)
        .map(|l| {
            let p = |s: &str| get(&format!("layer.{l}.{s}"));
            Ok(LayerIds {
                wq: p("attn.query.weight")?,
                bq: p("attn.query.bias")?,
                wk: p("attn.key.weight")?,
                bk: p("attn.key.bias")?,
                wv: p("attn.value.weight")?,
                bv: p("attn.value.bias")?,
                wo: p("attn.output.weight")?,
                bo: p("attn.output.bias")?,
                ln1_g: p("attn.ln.gain")?,
                ln1_b: p("attn.ln.bias")?,
                w1: p("ff.in.weight")?,
                b1: p("ff.in.bias")?,
                w2: p("ff.out.weight")?,
                b2: p("ff.out.bias")?,
                ln2_g: p("ff.ln.gain")?,
                ln2_b: p("ff.ln.bias")?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Ids {
        tok: get("embeddings.token")?,
        pos: get("embeddings.position")?,
        seg: get("embeddings.segment")?,
        emb_ln_g: get("embeddings.ln.gain")?,
        emb_ln_b: get("embeddings.ln.bias")?,
        layers,
        heads: HeadIds {
            mlm_w: get("mlm.transform.weight")?,
            mlm_b: get("mlm.transform.bias")?,
            mlm_ln_g: get("mlm.ln.gain")?,
            mlm_ln_b: get("mlm.ln.bias")?,
            mlm_out_b: get("mlm.output.bias")?,
            pool_w: get("nsp.pooler.weight")?,
            pool_b: get("nsp.pooler.bias")?,
            nsp_w: get("nsp.classifier.weight")?,
            nsp_b: get("nsp.classifier.bias")?,
        },
    })
}

/// Bidirectional transformer encoder with MLM and NSP heads.
#[derive(Clone, Debug)]
pub struct EncoderModel {
    config: EncoderConfig,
    params: ParamSet,
    ids: Ids,
}

/// Tape handles produced by one forward pass over a single sequence.
#[derive(Clone, Debug)]
pub struct TapeEncoding {
    /// `L × hidden` output of each layer, bottom first.
    pub layer_states: Vec<Var>,
    /// `1 × hidden` sentence vector of each layer.
    pub sentence_vectors: Vec<Var>,
    /// `[layer][head]` post-softmax `L × L` attention.
    pub attention: Vec<Vec<Var>>,
}

/// Plain values of a forward pass over a single sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    pub layer_states: Vec<Tensor>,
    /// One hidden-dim vector per layer (the `[CLS]` state unless mean pooling is configured).
    pub sentence_vectors: Vec<Vec<f64>>,
    pub attention: Vec<Vec<Tensor>>,
}

fn maybe_dropout(tape: &mut Tape, x: Var, rate: f64, rng: &mut Option<&mut ChaCha8Rng>) -> Result<Var> {
    match rng {
        Some(r) if rate > 0.0 => {
            let mask = dropout_mask(tape.value(x).shape(), rate, *r);
            tape.mul_const(x, mask)
        }
        _ => Ok(x),
    }
}

impl EncoderModel {
    /// Truncated-normal(0, 0.02) weights, zero biases, unit LayerNorm gains.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(seed);
        let mut params = ParamSet::new();
        for (name, shape, init) in layout(&config) {
            let t = match init {
                Init::Normal => truncated_normal(shape, INIT_STD, &mut rng),
                Init::Zero => Tensor::zeros(shape),
                Init::One => Tensor::filled(shape, 1.0),
            };
            params.add(name, t);
        }
        let ids = resolve_ids(&config, &params)?;
        Ok(EncoderModel { config, params, ids })
    }

    pub fn from_params(config: EncoderConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let ids = resolve_ids(&config, &params)?;
        Ok(EncoderModel { config, params, ids })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub(crate) fn head_ids(&self) -> &HeadIds {
        &self.ids.heads
    }

    pub(crate) fn token_embedding_id(&self) -> ParamId {
        self.ids.tok
    }

    fn check_input(&self, seq: &TokenSequence) -> Result<()> {
        if seq.len() > self.config.max_positions || seq.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "sequence length {} outside 1..={}",
                seq.len(),
                self.config.max_positions
            )));
        }
        if let Some(&id) = seq.ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return Err(Error::TokenOutOfRange {
                id,
                vocab_size: self.config.vocab_size,
            });
        }
        if seq.segment_ids.len() != seq.len() || seq.segment_ids.iter().any(|&s| s as usize >= SEGMENT_TYPES) {
            return Err(Error::InvalidConfig("segment ids must be 0 or 1, one per position".into()));
        }
        if seq.true_len == 0 || seq.true_len > seq.len() {
            return Err(Error::InvalidConfig("sequence has no non-PAD position".into()));
        }
        Ok(())
    }

    /// Records the forward pass of one sequence. Dropout is active iff `rng` is given.
    pub fn encode_on_tape(
        &self,
        tape: &mut Tape,
        bind: &Binding,
        seq: &TokenSequence,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<TapeEncoding> {
        self.check_input(seq)?;
        let c = &self.config;
        let rate = c.dropout_rate;
        let ids: Vec<usize> = seq.ids.iter().map(|&i| i as usize).collect();
        let positions: Vec<usize> = (0..seq.len()).collect();
        let segments: Vec<usize> = seq.segment_ids.iter().map(|&s| s as usize).collect();
        let keep = seq.attention_mask();

        let tok = tape.embedding(bind[self.ids.tok], &ids)?;
        let pos = tape.embedding(bind[self.ids.pos], &positions)?;
        let seg = tape.embedding(bind[self.ids.seg], &segments)?;
        let sum = tape.add(tok, pos)?;
        let sum = tape.add(sum, seg)?;
        let mut x = tape.layer_norm(sum, bind[self.ids.emb_ln_g], bind[self.ids.emb_ln_b], LAYER_NORM_EPS)?;

        let dh = c.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = TapeEncoding {
            layer_states: Vec::with_capacity(c.n_layers),
            sentence_vectors: Vec::with_capacity(c.n_layers),
            attention: Vec::with_capacity(c.n_layers),
        };
        for l in &self.ids.layers {
            let proj = |tape: &mut Tape, w: ParamId, b: ParamId| -> Result<Var> {
                let y = tape.matmul(x, bind[w])?;
                tape.add_bias(y, bind[b])
            };
            let q = proj(tape, l.wq, l.bq)?;
            let k = proj(tape, l.wk, l.bk)?;
            let v = proj(tape, l.wv, l.bv)?;
            let mut heads = Vec::with_capacity(c.n_heads);
            let mut contexts = Vec::with_capacity(c.n_heads);
            for h in 0..c.n_heads {
                let (lo, hi) = (h * dh, (h + 1) * dh);
                let qh = tape.slice_cols(q, lo, hi)?;
                let kh = tape.slice_cols(k, lo, hi)?;
                let vh = tape.slice_cols(v, lo, hi)?;
                let scores = tape.matmul_bt(qh, kh)?;
                let scores = tape.scale(scores, scale)?;
                let probs = tape.masked_softmax(scores, 1, Some(&keep))?;
                heads.push(probs);
                let probs = maybe_dropout(tape, probs, rate, &mut rng)?;
                contexts.push(tape.matmul(probs, vh)?);
            }
            let ctx = tape.concat_cols(&contexts)?;
            let attn = tape.matmul(ctx, bind[l.wo])?;
            let attn = tape.add_bias(attn, bind[l.bo])?;
            let res = tape.add(x, attn)?;
            let x1 = tape.layer_norm(res, bind[l.ln1_g], bind[l.ln1_b], LAYER_NORM_EPS)?;

            let ff = tape.matmul(x1, bind[l.w1])?;
            let ff = tape.add_bias(ff, bind[l.b1])?;
            let ff = tape.gelu(ff)?;
            let ff = tape.matmul(ff, bind[l.w2])?;
            let ff = tape.add_bias(ff, bind[l.b2])?;
            let ff = maybe_dropout(tape, ff, rate, &mut rng)?;
            let res = tape.add(x1, ff)?;
            x = tape.layer_norm(res, bind[l.ln2_g], bind[l.ln2_b], LAYER_NORM_EPS)?;

            let sentence = match c.pooling {
                Pooling::Cls => tape.select_rows(x, &[0])?,
                Pooling::Mean => tape.mean_rows(x, seq.true_len)?,
            };
            out.layer_states.push(x);
            out.sentence_vectors.push(sentence);
            out.attention.push(heads);
        }
        Ok(out)
    }

    /// Inference-mode forward pass over a batch of sequences.
    pub fn forward(&self, batch: &[TokenSequence]) -> Result<Vec<EncoderOutput>> {
        batch
            .par_iter()
            .map(|seq| {
                let mut tape = Tape::new();
                let bind = self.params.bind(&mut tape);
                let enc = self.encode_on_tape(&mut tape, &bind, seq, None)?;
                Ok(EncoderOutput {
                    layer_states: enc.layer_states.iter().map(|&v| tape.value(v).clone()).collect(),
                    sentence_vectors: enc
                        .sentence_vectors
                        .iter()
                        .map(|&v| tape.value(v).data().to_vec())
                        .collect(),
                    attention: enc
                        .attention
                        .iter()
                        .map(|hs| hs.iter().map(|&v| tape.value(v).clone()).collect())
                        .collect(),
                })
            })
            .collect()
    }

    /// Re-draws every parameter from the init distribution with `rng`.
    pub fn reinit(&mut self, rng: &mut impl Rng) {
        for (t, (_, _, init)) in self.params.tensors_mut().iter_mut().zip(layout(&self.config)) {
            if let Init::Normal = init {
                *t = truncated_normal(t.shape().to_vec(), INIT_STD, rng);
            }
        }
    }
}

/// `hidden × n` matrix whose column `j` is the sentence vector of layer
/// `n_layers − j` (1-based): the topmost layer comes first.
pub fn extract_top_layers(output: &EncoderOutput, n: usize) -> Result<Tensor> {
    let available = output.sentence_vectors.len();
    if n == 0 || n > available {
        return Err(Error::NotEnoughLayers { requested: n, available });
    }
    let h = output.sentence_vectors[0].len();
    let mut data = vec![0.0; h * n];
    for j in 0..n {
        let layer = &output.sentence_vectors[available - 1 - j];
        for r in 0..h {
            data[r * n + j] = layer[r];
        }
    }
    Tensor::new(vec![h, n], data)
}

/// Tape counterpart of [`extract_top_layers`].
pub fn stack_top_layers(tape: &mut Tape, enc: &TapeEncoding, n: usize) -> Result<Var> {
    let available = enc.sentence_vectors.len();
    if n == 0 || n > available {
        return Err(Error::NotEnoughLayers { requested: n, available });
    }
    let cols: Vec<Var> = (0..n).map(|j| enc.sentence_vectors[available - 1 - j]).collect();
    tape.stack_columns(&cols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{build_vocab, encode, Vocab};

    fn setup(l: usize) -> (Vocab, EncoderModel) {
        let vocab = build_vocab(&["一种集成电路塑封设备及方法"], 1).unwrap();
        let model = EncoderModel::init(EncoderConfig::toy(vocab.len(), l), 11).unwrap();
        (vocab, model)
    }

    #[test]
    fn param_count_matches_formula() {
        let (_, model) = setup(16);
        assert_eq!(model.params().numel(), model.config().param_count());
    }

    #[test]
    fn init_is_deterministic() {
        let (_, a) = setup(16);
        let (_, b) = setup(16);
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn toy_shapes() {
        let (vocab, model) = setup(16);
        let out = model.forward(&[encode("集成电路", &vocab, 16)]).unwrap().pop().unwrap();
        assert_eq!(out.layer_states.len(), 2);
        assert!(out.layer_states.iter().all(|s| s.shape() == [16, 32]));
        assert_eq!(out.attention.len(), 2);
        assert!(out.attention.iter().all(|l| l.len() == 4 && l.iter().all(|a| a.shape() == [16, 16])));
        assert_ne!(out.sentence_vectors[0], out.sentence_vectors[1]);
    }

    #[test]
    fn pad_keys_get_zero_weight_and_do_not_leak() {
        let (vocab, mut model) = setup(16);
        let seq = encode("集成电路", &vocab, 16);
        let before = model.forward(std::slice::from_ref(&seq)).unwrap().pop().unwrap();
        for heads in &before.attention {
            for a in heads {
                for r in 0..16 {
                    assert!(a.row(r)[seq.true_len..].iter().all(|&w| w == 0.0));
                    let s: f64 = a.row(r).iter().sum();
                    assert!((s - 1.0).abs() < 1e-9);
                }
            }
        }
        // perturb the position embedding of a PAD position
        let pos = model.params().id_of("embeddings.position").unwrap();
        let t = model.params_mut().get_mut(pos);
        for v in &mut t.data_mut()[15 * 32..16 * 32] {
            *v += 0.5;
        }
        let after = model.forward(&[seq.clone()]).unwrap().pop().unwrap();
        for (a, b) in before.layer_states.iter().zip(&after.layer_states) {
            for r in 0..seq.true_len {
                for (x, y) in a.row(r).iter().zip(b.row(r)) {
                    assert!((x - y).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn out_of_range_token() {
        let (vocab, model) = setup(8);
        let mut seq = encode("集", &vocab, 8);
        seq.ids[1] = 999;
        assert!(matches!(model.forward(&[seq]), Err(Error::TokenOutOfRange { id: 999, .. })));
    }

    #[test]
    fn top_layer_columns() {
        let out = EncoderOutput {
            layer_states: vec![],
            sentence_vectors: vec![vec![1.0, 2.0], vec![3.0, 4.0]],
            attention: vec![],
        };
        let m = extract_top_layers(&out, 2).unwrap();
        assert_eq!(m.shape(), [2, 2]);
        assert_eq!(m.data(), &[3.0, 1.0, 4.0, 2.0]);
        assert_eq!(extract_top_layers(&out, 1).unwrap().data(), &[3.0, 4.0]);
        assert!(matches!(
            extract_top_layers(&out, 3),
            Err(Error::NotEnoughLayers { requested: 3, available: 2 })
        ));
    }

    #[test]
    fn mean_pooling_averages_true_positions() {
        let vocab = build_vocab(&["集成电路"], 1).unwrap();
        let mut c = EncoderConfig::toy(vocab.len(), 8);
        c.pooling = Pooling::Mean;
        let model = EncoderModel::init(c, 2).unwrap();
        let seq = encode("集成", &vocab, 8);
        let out = model.forward(&[seq.clone()]).unwrap().pop().unwrap();
        let top = &out.layer_states[1];
        for j in 0..32 {
            let m: f64 = (0..seq.true_len).map(|r| top.at2(r, j)).sum::<f64>() / seq.true_len as f64;
            assert!((m - out.sentence_vectors[1][j]).abs() < 1e-12);
        }
    }
}
