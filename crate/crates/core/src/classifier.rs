//! Common classifier interface, persistence, and the factory used by the hierarchy.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{train_baseline, BaselineClassifier, BaselineConfig};
use crate::cnn_head::{BertCnnClassifier, BertCnnSpec, HeadConfig, HeadModel};
use crate::encoder::{EncoderConfig, EncoderModel};
use crate::error::{Error, Result};
use crate::numerics::{argmax, checkpoint, ParamSet};
use crate::tokenizer::Vocab;
use crate::train::EpochMetrics;

/// Numerically stable softmax of one row of logits.
pub fn softmax_row(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / z).collect()
}

pub trait TextClassifier: Send + Sync {
    fn n_labels(&self) -> usize;

    fn predict_proba(&self, text: &str) -> Result<Vec<f64>>;

    /// Index of the most probable class; the lowest index wins ties.
    fn predict_label(&self, text: &str) -> Result<usize> {
        Ok(argmax(&self.predict_proba(text)?))
    }
}

/// Always predicts the same class: used for one-class branches.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstantClassifier {
    pub n_classes: usize,
    pub class: usize,
}

impl TextClassifier for ConstantClassifier {
    fn n_labels(&self) -> usize {
        self.n_classes
    }

    fn predict_proba(&self, _text: &str) -> Result<Vec<f64>> {
        let mut p = vec![0.0; self.n_classes];
        p[self.class] = 1.0;
        Ok(p)
    }
}

#[derive(Clone, Debug)]
pub enum AnyClassifier {
    BertCnn(Box<BertCnnClassifier>),
    Baseline(Box<BaselineClassifier>),
    Constant(ConstantClassifier),
}

impl TextClassifier for AnyClassifier {
    fn n_labels(&self) -> usize {
        match self {
            AnyClassifier::BertCnn(c) => c.n_labels(),
            AnyClassifier::Baseline(c) => c.n_labels(),
            AnyClassifier::Constant(c) => c.n_labels(),
        }
    }

    fn predict_proba(&self, text: &str) -> Result<Vec<f64>> {
        match self {
            AnyClassifier::BertCnn(c) => c.predict_proba(text),
            AnyClassifier::Baseline(c) => c.predict_proba(text),
            AnyClassifier::Constant(c) => c.predict_proba(text),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum Meta {
    BertCnn {
        encoder: EncoderConfig,
        head: HeadConfig,
        max_len: usize,
        freeze_encoder: bool,
    },
    Baseline {
        config: BaselineConfig,
        n_classes: usize,
    },
    Constant(ConstantClassifier),
}

const META: &str = "classifier.json";
const PARAMS: &str = "params.bin";
const VOCAB: &str = "vocab.json";

fn prefixed(sets: &[(&str, &ParamSet)]) -> ParamSet {
    let mut out = ParamSet::new();
    for (prefix, set) in sets {
        for (name, t) in set.iter() {
            out.add(format!("{prefix}/{name}"), t.clone());
        }
    }
    out
}

fn unprefixed(all: &ParamSet, prefix: &str) -> ParamSet {
    let mut out = ParamSet::new();
    let p = format!("{prefix}/");
    for (name, t) in all.iter() {
        if let Some(rest) = name.strip_prefix(&p) {
            out.add(rest, t.clone());
        }
    }
    out
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn read_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

impl AnyClassifier {
    /// Writes `classifier.json`, plus `params.bin` and `vocab.json` for trained models.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = match self {
            AnyClassifier::BertCnn(c) => {
                let params = prefixed(&[("encoder", c.encoder.params()), ("head", c.head.params())]);
                checkpoint::save(&dir.join(PARAMS), &params)?;
                c.vocab.save(&dir.join(VOCAB))?;
                Meta::BertCnn {
                    encoder: c.encoder.config().clone(),
                    head: *c.head.config(),
                    max_len: c.max_len,
                    freeze_encoder: c.freeze_encoder,
                }
            }
            AnyClassifier::Baseline(c) => {
                checkpoint::save(&dir.join(PARAMS), c.params())?;
                c.vocab().save(&dir.join(VOCAB))?;
                Meta::Baseline {
                    config: c.config().clone(),
                    n_classes: c.n_labels(),
                }
            }
            AnyClassifier::Constant(c) => Meta::Constant(c.clone()),
        };
        write_json(&dir.join(META), &meta)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: Meta = serde_json::from_str(&read_string(&dir.join(META))?)?;
        Ok(match meta {
            Meta::Constant(c) => AnyClassifier::Constant(c),
            Meta::BertCnn {
                encoder,
                head,
                max_len,
                freeze_encoder,
            } => {
                let all = checkpoint::load(&dir.join(PARAMS))?;
                let vocab = Vocab::load(&dir.join(VOCAB))?;
                let enc = EncoderModel::from_params(encoder, unprefixed(&all, "encoder"))?;
                let head = HeadModel::from_params(head, unprefixed(&all, "head"))?;
                let mut c = BertCnnClassifier::new(enc, head, vocab, max_len)?;
                c.freeze_encoder = freeze_encoder;
                AnyClassifier::BertCnn(Box::new(c))
            }
            Meta::Baseline { config, n_classes } => {
                let params = checkpoint::load(&dir.join(PARAMS))?;
                let vocab = Vocab::load(&dir.join(VOCAB))?;
                AnyClassifier::Baseline(Box::new(BaselineClassifier::from_params(config, vocab, n_classes, params)?))
            }
        })
    }
}

pub struct TrainedClassifier {
    pub model: AnyClassifier,
    pub metrics: Vec<EpochMetrics>,
}

/// Anything that can train a classifier over `n_classes ≥ 2` labels.
pub trait ClassifierFactory: Sync {
    fn train(
        &self,
        train: &[(&str, usize)],
        eval: Option<&[(&str, usize)]>,
        n_classes: usize,
        seed: u64,
    ) -> Result<TrainedClassifier>;
}

/// The classifier families available to flat and hierarchical training.
#[derive(Clone, Debug)]
pub enum ClassifierSpec {
    BertCnn(BertCnnSpec),
    Baseline(BaselineConfig),
}

impl ClassifierFactory for ClassifierSpec {
    fn train(
        &self,
        train: &[(&str, usize)],
        eval: Option<&[(&str, usize)]>,
        n_classes: usize,
        seed: u64,
    ) -> Result<TrainedClassifier> {
        let (model, metrics) = match self {
            ClassifierSpec::BertCnn(spec) => {
                let (c, m) = spec.train(train, eval, n_classes, seed)?;
                (AnyClassifier::BertCnn(Box::new(c)), m)
            }
            ClassifierSpec::Baseline(cfg) => {
                let (c, m) = train_baseline(cfg, train, eval, n_classes, seed)?;
                (AnyClassifier::Baseline(Box::new(c)), m)
            }
        };
        Ok(TrainedClassifier { model, metrics })
    }
}
