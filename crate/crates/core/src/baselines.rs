//! Static-embedding CNN and GRU text classifiers.

use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{softmax_row, TextClassifier};
use crate::error::{Error, Result};
use crate::numerics::{argmax, truncated_normal, Binding, ParamId, ParamSet, Tape, Tensor, Var};
use crate::rng::{derive_seed, ChaCha8Rng};
use crate::tokenizer::{Vocab, PAD};
use crate::train::{fit, EpochMetrics, FitOptions, Trainable};

/// Whitespace-separated words; text without any whitespace falls back to
/// its characters.
pub fn tokenize_words(text: &str) -> Vec<String> {
    if text.chars().any(char::is_whitespace) {
        text.split_whitespace().map(str::to_string).collect()
    } else {
        text.chars().map(String::from).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Cnn,
    Rnn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    pub embed_dim: usize,
    /// GRU state size.
    pub hidden: usize,
    pub n_filters: usize,
    pub filter_width: usize,
    pub max_len: usize,
    pub fit: FitOptions,
}

impl BaselineConfig {
    pub fn new(kind: BaselineKind) -> Self {
        BaselineConfig {
            kind,
            embed_dim: 300,
            hidden: 128,
            n_filters: 32,
            filter_width: 3,
            max_len: 200,
            fit: FitOptions {
                lr: 2e-5,
                batch_size: 20,
                epochs: 20,
                seed: 0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [self.embed_dim, self.hidden, self.n_filters, self.filter_width, self.max_len];
        if sizes.contains(&0) {
            return Err(Error::InvalidConfig("baseline sizes must be positive".into()));
        }
        if self.kind == BaselineKind::Cnn && self.max_len < self.filter_width {
            return Err(Error::InvalidConfig("max_len is shorter than the filter width".into()));
        }
        Ok(())
    }
}

/// A trained (or freshly initialised) baseline model.
#[derive(Clone, Debug)]
pub struct BaselineClassifier {
    config: BaselineConfig,
    vocab: Vocab,
    n_classes: usize,
    params: ParamSet,
    ids: Ids,
}

#[derive(Clone, Debug)]
enum Ids {
    Cnn {
        embed: ParamId,
        filters: ParamId,
        filter_bias: ParamId,
        dense_w: ParamId,
        dense_b: ParamId,
    },
    Rnn {
        embed: ParamId,
        /// Input weights, recurrent weights and biases for the update, reset and candidate gates.
        w: [ParamId; 3],
        u: [ParamId; 3],
        b: [ParamId; 3],
        dense_w: ParamId,
        dense_b: ParamId,
    },
}

fn layout(c: &BaselineConfig, vocab_size: usize, n_classes: usize) -> Vec<(String, Vec<usize>, f64)> {
    let d = c.embed_dim;
    let mut out = vec![("embedding".to_string(), vec![vocab_size, d], 0.1)];
    match c.kind {
        BaselineKind::Cnn => {
            let (f, w) = (c.n_filters, c.filter_width);
            out.push(("conv.filters".into(), vec![f, w, d], (1.0 / (w * d) as f64).sqrt()));
            out.push(("conv.bias".into(), vec![f], 0.0));
            out.push(("dense.weight".into(), vec![f, n_classes], (1.0 / f as f64).sqrt()));
        }
        BaselineKind::Rnn => {
            let h = c.hidden;
            for g in ["update", "reset", "candidate"] {
                out.push((format!("gru.{g}.input"), vec![d, h], (1.0 / d as f64).sqrt()));
                out.push((format!("gru.{g}.recurrent"), vec![h, h], (1.0 / h as f64).sqrt()));
                out.push((format!("gru.{g}.bias"), vec![h], 0.0));
            }
            out.push(("dense.weight".into(), vec![h, n_classes], (1.0 / h as f64).sqrt()));
        }
    }
    out.push(("dense.bias".into(), vec![n_classes], 0.0));
    out
}

impl BaselineClassifier {
    /// Random init: truncated normal with the std listed per parameter, zero
    /// biases, and a zero PAD embedding row.
    pub fn init(config: BaselineConfig, vocab: Vocab, n_classes: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if n_classes < 2 {
            return Err(Error::InvalidConfig(format!("classifier needs at least 2 classes, got {n_classes}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        for (name, shape, std) in layout(&config, vocab.len(), n_classes) {
            let t = if std == 0.0 {
                Tensor::zeros(shape)
            } else {
                truncated_normal(shape, std, &mut rng)
            };
            params.add(name, t);
        }
        let embed = params.id_of("embedding").expect("just added");
        params.get_mut(embed).data_mut()[..config.embed_dim].fill(0.0);
        Self::from_params(config, vocab, n_classes, params)
    }

    pub fn from_params(config: BaselineConfig, vocab: Vocab, n_classes: usize, params: ParamSet) -> Result<Self> {
        config.validate()?;
        for (name, shape, _) in layout(&config, vocab.len(), n_classes) {
            params.expect(&name, &shape)?;
        }
        let id = |n: &str| params.id_of(n).expect("checked above");
        let ids = match config.kind {
            BaselineKind::Cnn => Ids::Cnn {
                embed: id("embedding"),
                filters: id("conv.filters"),
                filter_bias: id("conv.bias"),
                dense_w: id("dense.weight"),
                dense_b: id("dense.bias"),
            },
            BaselineKind::Rnn => {
                let gate = |s: &str| ["update", "reset", "candidate"].map(|g| id(&format!("gru.{g}.{s}")));
                Ids::Rnn {
                    embed: id("embedding"),
                    w: gate("input"),
                    u: gate("recurrent"),
                    b: gate("bias"),
                    dense_w: id("dense.weight"),
                    dense_b: id("dense.bias"),
                }
            }
        };
        Ok(BaselineClassifier {
            config,
            vocab,
            n_classes,
            params,
            ids,
        })
    }

    pub fn config(&self) -> &BaselineConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Word ids: CNN input is PAD-filled to `max_len`, RNN input holds only
    /// the (truncated) words.
    pub fn word_ids(&self, text: &str) -> Vec<usize> {
        let mut ids: Vec<usize> = tokenize_words(text)
            .iter()
            .take(self.config.max_len)
            .map(|w| self.vocab.id(w) as usize)
            .collect();
        if self.config.kind == BaselineKind::Cnn {
            ids.resize(self.config.max_len, PAD as usize);
        }
        ids
    }

    pub fn fit_texts(
        &mut self,
        train: &[(&str, usize)],
        eval: Option<&[(&str, usize)]>,
        opts: &FitOptions,
    ) -> Result<Vec<EpochMetrics>> {
        let enc = |d: &[(&str, usize)]| -> Vec<(Vec<usize>, usize)> {
            d.par_iter().map(|(t, y)| (self.word_ids(t), *y)).collect()
        };
        let train = enc(train);
        let eval = eval.map(enc);
        fit(self, &train, eval.as_deref(), opts)
    }

    pub fn predict(&self, text: &str) -> Result<(usize, Vec<f64>)> {
        let p = self.predict_proba(text)?;
        Ok((argmax(&p), p))
    }
}

impl Trainable for BaselineClassifier {
    type Input = Vec<usize>;

    fn param_sets(&self) -> Vec<&ParamSet> {
        vec![&self.params]
    }

    fn param_sets_mut(&mut self) -> Vec<&mut ParamSet> {
        vec![&mut self.params]
    }

    fn logits(&self, tape: &mut Tape, binds: &[Binding], ids: &Vec<usize>, _rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        let bind = &binds[0];
        match &self.ids {
            Ids::Cnn {
                embed,
                filters,
                filter_bias,
                dense_w,
                dense_b,
            } => {
                let x = tape.embedding(bind[*embed], ids)?;
                let maps = tape.conv2d_valid(x, bind[*filters])?;
                let maps = tape.channel_bias(maps, bind[*filter_bias])?;
                let maps = tape.relu(maps)?;
                let pooled = tape.max_pool_full(maps)?;
                let row = tape.reshape(pooled, &[1, self.config.n_filters])?;
                let logits = tape.matmul(row, bind[*dense_w])?;
                tape.add_bias(logits, bind[*dense_b])
            }
            Ids::Rnn {
                embed,
                w,
                u,
                b,
                dense_w,
                dense_b,
            } => {
                let mut h = tape.leaf(Tensor::zeros(vec![1, self.config.hidden]));
                if !ids.is_empty() {
                    let x = tape.embedding(bind[*embed], ids)?;
                    // input projections for every step at once
                    let mut proj = [h; 3];
                    for g in 0..3 {
                        let p = tape.matmul(x, bind[w[g]])?;
                        proj[g] = tape.add_bias(p, bind[b[g]])?;
                    }
                    for t in 0..ids.len() {
                        let xz = tape.select_rows(proj[0], &[t])?;
                        let xr = tape.select_rows(proj[1], &[t])?;
                        let xn = tape.select_rows(proj[2], &[t])?;
                        let hz = tape.matmul(h, bind[u[0]])?;
                        let z = tape.add(xz, hz)?;
                        let z = tape.sigmoid(z)?;
                        let hr = tape.matmul(h, bind[u[1]])?;
                        let r = tape.add(xr, hr)?;
                        let r = tape.sigmoid(r)?;
                        let rh = tape.mul(r, h)?;
                        let hn = tape.matmul(rh, bind[u[2]])?;
                        let n = tape.add(xn, hn)?;
                        let n = tape.tanh(n)?;
                        // h' = n + z ⊙ (h − n)
                        let diff = tape.sub(h, n)?;
                        let keep = tape.mul(z, diff)?;
                        h = tape.add(n, keep)?;
                    }
                }
                let logits = tape.matmul(h, bind[*dense_w])?;
                tape.add_bias(logits, bind[*dense_b])
            }
        }
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Keeps the PAD embedding row fixed at zero.
    fn adjust_gradients(&self, grads: &mut [Vec<Tensor>]) {
        let embed = match &self.ids {
            Ids::Cnn { embed, .. } | Ids::Rnn { embed, .. } => *embed,
        };
        let d = self.config.embed_dim;
        grads[0][embed.0].data_mut()[PAD as usize * d..(PAD as usize + 1) * d].fill(0.0);
    }
}

impl TextClassifier for BaselineClassifier {
    fn n_labels(&self) -> usize {
        self.n_classes
    }

    fn predict_proba(&self, text: &str) -> Result<Vec<f64>> {
        let ids = self.word_ids(text);
        let mut tape = Tape::new();
        let bind = self.params.bind(&mut tape);
        let logits = self.logits(&mut tape, &[bind], &ids, None)?;
        Ok(softmax_row(tape.value(logits).data()))
    }
}

/// Builds a word vocabulary from the training texts and trains a baseline.
/// Seeds: init `[0]`, training `[1]` below `seed`.
pub fn train_baseline(
    config: &BaselineConfig,
    train: &[(&str, usize)],
    eval: Option<&[(&str, usize)]>,
    n_classes: usize,
    seed: u64,
) -> Result<(BaselineClassifier, Vec<EpochMetrics>)> {
    let docs: Vec<Vec<String>> = train.iter().map(|(t, _)| tokenize_words(t)).collect();
    let vocab = Vocab::from_token_lists(&docs, 1)?;
    let mut clf = BaselineClassifier::init(config.clone(), vocab, n_classes, derive_seed(seed, &[0]))?;
    let opts = FitOptions {
        seed: derive_seed(seed, &[1]),
        ..config.fit
    };
    let metrics = clf.fit_texts(train, eval, &opts)?;
    Ok((clf, metrics))
}
