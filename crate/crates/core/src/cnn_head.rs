//! Convolutional head over the stacked per-layer sentence vectors, and the
//! joint encoder + head classifier.

use std::sync::Arc;

use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{softmax_row, TextClassifier};
use crate::encoder::{stack_top_layers, EncoderConfig, EncoderModel};
use crate::error::{Error, Result};
use crate::numerics::{argmax, truncated_normal, Binding, ParamId, ParamSet, Tape, Tensor, Var};
use crate::rng::{derive_seed, ChaCha8Rng};
use crate::tokenizer::{build_vocab, encode, TokenSequence, Vocab};
use crate::train::{fit, EpochMetrics, FitOptions, Trainable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub n_filters: usize,
    pub filter_rows: usize,
    /// Must equal the number of stacked layers.
    pub filter_cols: usize,
    pub n_classes: usize,
}

impl HeadConfig {
    /// 32 filters of 3 × `n_top`.
    pub fn new(n_top: usize, n_classes: usize) -> Self {
        HeadConfig {
            n_filters: 32,
            filter_rows: 3,
            filter_cols: n_top,
            n_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_filters == 0 || self.filter_rows == 0 || self.filter_cols == 0 {
            return Err(Error::InvalidConfig("head filter sizes must be positive".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::InvalidConfig(format!("head needs at least 2 classes, got {}", self.n_classes)));
        }
        Ok(())
    }
}

/// Filters `[F, rows, cols]`, one bias per filter, and a dense `F → C` layer.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadModel {
    config: HeadConfig,
    params: ParamSet,
    filters: ParamId,
    filter_bias: ParamId,
    dense_w: ParamId,
    dense_b: ParamId,
}

impl HeadModel {
    /// Filters and dense weights ~ truncated normal with std `1/√fan_in`; zero biases.
    pub fn init(config: HeadConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let HeadConfig { n_filters: f, filter_rows: r, filter_cols: c, n_classes } = config;
        let mut params = ParamSet::new();
        params.add("filters", truncated_normal(vec![f, r, c], (1.0 / (r * c) as f64).sqrt(), &mut rng));
        params.add("filter_bias", Tensor::zeros(vec![f]));
        params.add("dense.weight", truncated_normal(vec![f, n_classes], (1.0 / f as f64).sqrt(), &mut rng));
        params.add("dense.bias", Tensor::zeros(vec![n_classes]));
        Self::from_params(config, params)
    }

    pub fn from_params(config: HeadConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let HeadConfig { n_filters: f, filter_rows: r, filter_cols: c, n_classes } = config;
        Ok(HeadModel {
            filters: params.expect("filters", &[f, r, c])?,
            filter_bias: params.expect("filter_bias", &[f])?,
            dense_w: params.expect("dense.weight", &[f, n_classes])?,
            dense_b: params.expect("dense.bias", &[n_classes])?,
            config,
            params,
        })
    }

    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Convolution, ReLU and per-map max pooling: the `[F]` feature vector.
    pub fn pooled_on_tape(&self, tape: &mut Tape, bind: &Binding, input: Var) -> Result<Var> {
        let cols = tape.value(input).shape().get(1).copied();
        if tape.value(input).ndim() != 2 || cols != Some(self.config.filter_cols) {
            return Err(Error::shape(
                "head_forward",
                tape.value(input).shape(),
                &[self.config.filter_rows, self.config.filter_cols],
            ));
        }
        let maps = tape.conv2d_valid(input, bind[self.filters])?;
        let maps = tape.channel_bias(maps, bind[self.filter_bias])?;
        let maps = tape.relu(maps)?;
        tape.max_pool_full(maps)
    }

    /// `[1, n_classes]` logits for a `hidden × n` input.
    pub fn logits_on_tape(&self, tape: &mut Tape, bind: &Binding, input: Var) -> Result<Var> {
        let pooled = self.pooled_on_tape(tape, bind, input)?;
        let row = tape.reshape(pooled, &[1, self.config.n_filters])?;
        let logits = tape.matmul(row, bind[self.dense_w])?;
        tape.add_bias(logits, bind[self.dense_b])
    }

    /// Class probabilities for a `hidden × n` matrix.
    pub fn forward(&self, input: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bind = self.params.bind(&mut tape);
        let x = tape.leaf(input.clone());
        let logits = self.logits_on_tape(&mut tape, &bind, x)?;
        Ok(softmax_row(tape.value(logits).data()))
    }
}

/// Encoder whose top `n_top` sentence vectors feed a [`HeadModel`].
#[derive(Clone, Debug)]
pub struct BertCnnClassifier {
    pub encoder: EncoderModel,
    pub head: HeadModel,
    pub vocab: Vocab,
    pub max_len: usize,
    pub n_top: usize,
    /// Ablation: train the head only.
    pub freeze_encoder: bool,
}

impl BertCnnClassifier {
    pub fn new(encoder: EncoderModel, head: HeadModel, vocab: Vocab, max_len: usize) -> Result<Self> {
        let n_top = head.config().filter_cols;
        if n_top > encoder.config().n_layers {
            return Err(Error::NotEnoughLayers {
                requested: n_top,
                available: encoder.config().n_layers,
            });
        }
        if max_len > encoder.config().max_positions || max_len < 2 {
            return Err(Error::InvalidConfig(format!(
                "max_len {max_len} must lie in 2..={}",
                encoder.config().max_positions
            )));
        }
        if head.config().filter_rows > encoder.config().hidden {
            return Err(Error::InvalidConfig("filter rows exceed the hidden size".into()));
        }
        Ok(BertCnnClassifier {
            encoder,
            head,
            vocab,
            max_len,
            n_top,
            freeze_encoder: false,
        })
    }

    pub fn encode_text(&self, text: &str) -> TokenSequence {
        encode(text, &self.vocab, self.max_len)
    }

    /// Joint fine-tuning on `(text, label)` pairs.
    pub fn finetune(
        &mut self,
        train: &[(&str, usize)],
        eval: Option<&[(&str, usize)]>,
        opts: &FitOptions,
    ) -> Result<Vec<EpochMetrics>> {
        let enc = |d: &[(&str, usize)]| -> Vec<(TokenSequence, usize)> {
            d.par_iter().map(|(t, y)| (self.encode_text(t), *y)).collect()
        };
        let train = enc(train);
        let eval = eval.map(enc);
        fit(self, &train, eval.as_deref(), opts)
    }

    /// `hidden × n_top` matrix fed to the head, for inspection.
    pub fn layer_matrix(&self, text: &str) -> Result<Tensor> {
        let out = self.encoder.forward(&[self.encode_text(text)])?.pop().expect("one output");
        crate::encoder::extract_top_layers(&out, self.n_top)
    }

    /// Predicted class (lowest index on ties) and the probability vector.
    pub fn predict(&self, text: &str) -> Result<(usize, Vec<f64>)> {
        let p = self.predict_proba(text)?;
        Ok((argmax(&p), p))
    }
}

impl Trainable for BertCnnClassifier {
    type Input = TokenSequence;

    fn param_sets(&self) -> Vec<&ParamSet> {
        vec![self.encoder.params(), self.head.params()]
    }

    fn param_sets_mut(&mut self) -> Vec<&mut ParamSet> {
        vec![self.encoder.params_mut(), self.head.params_mut()]
    }

    fn logits(&self, tape: &mut Tape, binds: &[Binding], input: &TokenSequence, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        let enc = self.encoder.encode_on_tape(tape, &binds[0], input, rng)?;
        let matrix = stack_top_layers(tape, &enc, self.n_top)?;
        self.head.logits_on_tape(tape, &binds[1], matrix)
    }

    fn n_classes(&self) -> usize {
        self.head.config().n_classes
    }

    fn frozen(&self) -> Vec<bool> {
        vec![self.freeze_encoder, false]
    }
}

impl TextClassifier for BertCnnClassifier {
    fn n_labels(&self) -> usize {
        self.head.config().n_classes
    }

    fn predict_proba(&self, text: &str) -> Result<Vec<f64>> {
        let seq = self.encode_text(text);
        let mut tape = Tape::new();
        let binds: Vec<Binding> = self.param_sets().into_iter().map(|p| p.bind(&mut tape)).collect();
        let logits = self.logits(&mut tape, &binds, &seq, None)?;
        Ok(softmax_row(tape.value(logits).data()))
    }
}

/// Recipe for building and fine-tuning a [`BertCnnClassifier`].
#[derive(Clone, Debug)]
pub struct BertCnnSpec {
    /// Shape of a fresh encoder; `vocab_size` is taken from the vocabulary.
    pub encoder: EncoderConfig,
    pub n_top: usize,
    pub n_filters: usize,
    pub filter_rows: usize,
    pub max_len: usize,
    pub fit: FitOptions,
    pub freeze_encoder: bool,
    /// Start from this vocabulary and encoder instead of a random init.
    pub pretrained: Option<Arc<(Vocab, EncoderModel)>>,
}

impl BertCnnSpec {
    /// Builds the untrained classifier. Seeds: encoder `[0]`, head `[1]` below `seed`.
    pub fn build<S: AsRef<str>>(&self, texts: &[S], n_classes: usize, seed: u64) -> Result<BertCnnClassifier> {
        let (vocab, encoder) = match &self.pretrained {
            Some(p) => (p.0.clone(), p.1.clone()),
            None => {
                let vocab = build_vocab(texts, 1)?;
                let mut config = self.encoder.clone();
                config.vocab_size = vocab.len();
                config.max_positions = config.max_positions.max(self.max_len);
                let encoder = EncoderModel::init(config, derive_seed(seed, &[0]))?;
                (vocab, encoder)
            }
        };
        let head_config = HeadConfig {
            n_filters: self.n_filters,
            filter_rows: self.filter_rows,
            filter_cols: self.n_top,
            n_classes,
        };
        let head = HeadModel::init(head_config, derive_seed(seed, &[1]))?;
        let mut clf = BertCnnClassifier::new(encoder, head, vocab, self.max_len)?;
        clf.freeze_encoder = self.freeze_encoder;
        Ok(clf)
    }

    pub fn train(
        &self,
        train: &[(&str, usize)],
        eval: Option<&[(&str, usize)]>,
        n_classes: usize,
        seed: u64,
    ) -> Result<(BertCnnClassifier, Vec<EpochMetrics>)> {
        let texts: Vec<&str> = train.iter().map(|(t, _)| *t).collect();
        let mut clf = self.build(&texts, n_classes, seed)?;
        let opts = FitOptions {
            seed: derive_seed(seed, &[2]),
            ..self.fit
        };
        let metrics = clf.finetune(train, eval, &opts)?;
        Ok((clf, metrics))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input_gives_uniform_distribution() {
        let mut head = HeadModel::init(HeadConfig::new(4, 5), 1).unwrap();
        // zero biases are the init; zeroing filters makes every pooled value 0
        let f = head.params().id_of("filters").unwrap();
        head.params_mut().get_mut(f).data_mut().fill(0.0);
        let p = head.forward(&Tensor::zeros(vec![768, 4])).unwrap();
        assert!(p.iter().all(|&x| (x - 0.2).abs() < 1e-15));
        let p = HeadModel::init(HeadConfig::new(4, 5), 1).unwrap().forward(&Tensor::zeros(vec![768, 4])).unwrap();
        assert!(p.iter().all(|&x| (x - 0.2).abs() < 1e-15));
    }

    #[test]
    fn pooled_vector_has_n_filters_entries() {
        let head = HeadModel::init(HeadConfig::new(4, 3), 2).unwrap();
        for hidden in [8, 33, 768] {
            let mut tape = Tape::new();
            let bind = head.params().bind(&mut tape);
            let x = tape.leaf(Tensor::filled(vec![hidden, 4], 0.5));
            let pooled = head.pooled_on_tape(&mut tape, &bind, x).unwrap();
            assert_eq!(tape.value(pooled).shape(), [32]);
        }
    }

    #[test]
    fn wrong_column_count() {
        let head = HeadModel::init(HeadConfig::new(4, 3), 2).unwrap();
        let err = head.forward(&Tensor::zeros(vec![16, 3])).unwrap_err();
        assert!(err.to_string().contains("[16, 3]"), "{err}");
    }

    #[test]
    fn one_class_head_is_rejected() {
        assert!(HeadModel::init(HeadConfig::new(4, 1), 0).is_err());
    }
}
