//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default (the published hyperparameters where they exist); unknown keys
//! and unparsable values are errors. [`RunConfig::to_kv`] writes every key,
//! so an echoed file reproduces the run on its own.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::baselines::{BaselineConfig, BaselineKind};
use crate::cnn_head::BertCnnSpec;
use crate::corpus::{IngestOptions, LabelColumns, SyntheticSpec, TextEncoding};
use crate::encoder::{EncoderConfig, Pooling, PretrainOptions};
use crate::error::{Error, Result};
use crate::train::FitOptions;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    BertCnn,
    Cnn,
    Rnn,
}

impl FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "bert-cnn" => Ok(ModelKind::BertCnn),
            "cnn" => Ok(ModelKind::Cnn),
            "rnn" => Ok(ModelKind::Rnn),
            _ => Err(format!("expected bert-cnn, cnn or rnn, got {s:?}")),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::BertCnn => "bert-cnn",
            ModelKind::Cnn => "cnn",
            ModelKind::Rnn => "rnn",
        })
    }
}

/// Label granularity of a flat (single-model) run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlatLevel {
    Section,
    Class,
}

impl FromStr for FlatLevel {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "section" => Ok(FlatLevel::Section),
            "class" => Ok(FlatLevel::Class),
            _ => Err(format!("expected section or class, got {s:?}")),
        }
    }
}

impl fmt::Display for FlatLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlatLevel::Section => "section",
            FlatLevel::Class => "class",
        })
    }
}

/// Wrapper giving `Pooling` and `TextEncoding` a text form.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Text<T>(pub T);

impl FromStr for Text<Pooling> {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "cls" => Ok(Text(Pooling::Cls)),
            "mean" => Ok(Text(Pooling::Mean)),
            _ => Err(format!("expected cls or mean, got {s:?}")),
        }
    }
}

impl fmt::Display for Text<Pooling> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self.0 {
            Pooling::Cls => "cls",
            Pooling::Mean => "mean",
        })
    }
}

impl FromStr for Text<TextEncoding> {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        TextEncoding::parse(s).map(Text).ok_or_else(|| format!("expected utf-8 or gbk, got {s:?}"))
    }
}

impl fmt::Display for Text<TextEncoding> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self.0 {
            TextEncoding::Utf8 => "utf-8",
            TextEncoding::Gbk => "gbk",
        })
    }
}

macro_rules! run_config {
    ($( $key:literal => $field:ident : $ty:ty = $default:expr ; $doc:literal )*) => {
        /// Every tunable of a run. See [`RunConfig::SCHEMA`] for the keys.
        #[derive(Clone, Debug, PartialEq)]
        pub struct RunConfig {
            $( #[doc = $doc] pub $field: $ty, )*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                RunConfig { $( $field: $default, )* }
            }
        }

        impl RunConfig {
            /// `(key, description)` for every accepted key.
            pub const SCHEMA: &'static [(&'static str, &'static str)] = &[ $( ($key, $doc), )* ];

            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $( $key => {
                        self.$field = value.parse::<$ty>().map_err(|e| {
                            Error::InvalidConfig(format!("{key} = {value:?}: {e}"))
                        })?;
                    } )*
                    _ => return Err(Error::InvalidConfig(format!("unknown key {key:?}"))),
                }
                Ok(())
            }

            /// Every key and its current value, in schema order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![ $( ($key, self.$field.to_string()), )* ]
            }
        }
    };
}

run_config! {
    "seed" => seed: u64 = 0; "Base seed of every random stream."
    "model" => model: ModelKind = ModelKind::BertCnn; "Classifier family: bert-cnn, cnn or rnn."
    "split_ratio" => split_ratio: f64 = 0.9; "Training fraction of the train/test split."
    "max_len" => max_len: usize = 200; "Sequence length L for the encoder (characters incl. specials)."
    "n_top_layers" => n_top_layers: usize = 4; "Number of top encoder layers stacked for the head."
    "lr" => lr: f64 = 2e-5; "Fine-tuning learning rate."
    "batch_size" => batch_size: usize = 24; "Fine-tuning batch size."
    "epochs" => epochs: usize = 20; "Training epochs (all classifier families)."
    "freeze_encoder" => freeze_encoder: bool = false; "Train the head only (ablation)."
    "flat.level" => flat_level: FlatLevel = FlatLevel::Class; "Labels of train-flat and layer-sweep: section or class."
    "flat.section" => flat_section: String = String::new(); "Restrict train-flat and layer-sweep to one section (empty: all)."
    "encoder.n_layers" => n_layers: usize = 12; "Transformer layers."
    "encoder.hidden" => hidden: usize = 768; "Hidden size."
    "encoder.n_heads" => n_heads: usize = 12; "Attention heads (must divide hidden)."
    "encoder.ff_dim" => ff_dim: usize = 3072; "Feed-forward width."
    "encoder.max_positions" => max_positions: usize = 512; "Position embeddings (at least max_len)."
    "encoder.dropout" => dropout: f64 = 0.1; "Dropout on attention probabilities and feed-forward output."
    "encoder.pooling" => pooling: Text<Pooling> = Text(Pooling::Cls); "Per-layer sentence vector: cls or mean."
    "head.n_filters" => n_filters: usize = 32; "Convolution filters of the head."
    "head.filter_rows" => filter_rows: usize = 3; "Filter height of the head (columns = n_top_layers)."
    "pretrain.steps" => pretrain_steps: usize = 0; "MLM+NSP updates of the pretrain command."
    "pretrain.batch_size" => pretrain_batch_size: usize = 16; "Pretraining batch size."
    "pretrain.lr" => pretrain_lr: f64 = 1e-4; "Pretraining learning rate."
    "pretrain.mask_rate" => mask_rate: f64 = 0.15; "Fraction of content tokens selected for MLM."
    "pretrained" => pretrained: String = String::new(); "Directory written by pretrain; empty: random encoder init."
    "baseline.embed_dim" => embed_dim: usize = 300; "Word embedding size."
    "baseline.hidden" => baseline_hidden: usize = 128; "GRU state size."
    "baseline.n_filters" => baseline_filters: usize = 32; "CNN baseline filters."
    "baseline.filter_width" => filter_width: usize = 3; "CNN baseline filter width in words."
    "baseline.max_len" => baseline_max_len: usize = 200; "Words kept per document."
    "baseline.batch_size" => baseline_batch_size: usize = 20; "Baseline batch size."
    "baseline.lr" => baseline_lr: f64 = 2e-5; "Baseline learning rate."
    "synth.sections" => synth_sections: usize = 8; "Synthetic corpus: sections."
    "synth.classes_per_section" => synth_classes: usize = 3; "Synthetic corpus: classes per section."
    "synth.docs_per_class" => synth_docs: usize = 60; "Synthetic corpus: documents per class."
    "synth.doc_len" => synth_doc_len: usize = 8; "Synthetic corpus: words per document."
    "synth.vocab_overlap" => synth_overlap: f64 = 0.0; "Synthetic corpus: fraction of keywords shared across classes."
    "ingest.encoding" => encoding: Text<TextEncoding> = Text(TextEncoding::Utf8); "CSV text encoding: utf-8 or gbk."
    "ingest.delimiter" => delimiter: char = ','; "CSV delimiter."
    "ingest.abstract_column" => abstract_column: String = "摘要".into(); "Header of the abstract column."
    "ingest.ipc_column" => ipc_column: String = "专利分类".into(); "Header of the IPC code column (unused when level columns are set)."
    "ingest.section_column" => section_column: String = String::new(); "Header of a level-1 label column (with ingest.class_column)."
    "ingest.class_column" => class_column: String = String::new(); "Header of a level-2 label column."
    "ingest.id_column" => id_column: String = "申请号".into(); "Header of the id column; empty or absent: row numbers."
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key = value", n + 1)))?;
            c.set(k.trim(), v.trim())?;
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// `key=value` override as given on the command line.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("override {kv:?} is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn to_kv(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn encoder_config(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            n_layers: self.n_layers,
            hidden: self.hidden,
            n_heads: self.n_heads,
            ff_dim: self.ff_dim,
            vocab_size,
            max_positions: self.max_positions,
            dropout_rate: self.dropout,
            pooling: self.pooling.0,
        }
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            lr: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
        }
    }

    pub fn bert_cnn_spec(&self) -> BertCnnSpec {
        BertCnnSpec {
            encoder: self.encoder_config(0),
            n_top: self.n_top_layers,
            n_filters: self.n_filters,
            filter_rows: self.filter_rows,
            max_len: self.max_len,
            fit: self.fit_options(),
            freeze_encoder: self.freeze_encoder,
            pretrained: None,
        }
    }

    pub fn baseline_config(&self, kind: BaselineKind) -> BaselineConfig {
        BaselineConfig {
            kind,
            embed_dim: self.embed_dim,
            hidden: self.baseline_hidden,
            n_filters: self.baseline_filters,
            filter_width: self.filter_width,
            max_len: self.baseline_max_len,
            fit: FitOptions {
                lr: self.baseline_lr,
                batch_size: self.baseline_batch_size,
                epochs: self.epochs,
                seed: self.seed,
            },
        }
    }

    pub fn pretrain_options(&self) -> PretrainOptions {
        PretrainOptions {
            steps: self.pretrain_steps,
            batch_size: self.pretrain_batch_size,
            lr: self.pretrain_lr,
            max_len: self.max_len,
            mask_rate: self.mask_rate,
            seed: self.seed,
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            sections: self.synth_sections,
            classes_per_section: self.synth_classes,
            docs_per_class: self.synth_docs,
            doc_len: self.synth_doc_len,
            vocab_overlap: self.synth_overlap,
        }
    }

    pub fn ingest_options(&self) -> Result<IngestOptions> {
        let label = match (self.section_column.is_empty(), self.class_column.is_empty()) {
            (true, true) => LabelColumns::Ipc(self.ipc_column.clone()),
            (false, false) => LabelColumns::Levels {
                section: self.section_column.clone(),
                class: self.class_column.clone(),
            },
            _ => {
                return Err(Error::InvalidConfig(
                    "ingest.section_column and ingest.class_column must be set together".into(),
                ))
            }
        };
        if !self.delimiter.is_ascii() {
            return Err(Error::InvalidConfig("ingest.delimiter must be a single ASCII character".into()));
        }
        Ok(IngestOptions {
            encoding: self.encoding.0,
            delimiter: self.delimiter as u8,
            abstract_column: self.abstract_column.clone(),
            label,
            id_column: (!self.id_column.is_empty()).then(|| self.id_column.clone()),
        })
    }
}
