use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::{FlatLevel, ModelKind, RunConfig};
use super::{Command, ConfigArgs};
use crate::baselines::BaselineKind;
use crate::classifier::{AnyClassifier, ClassifierFactory, ClassifierSpec, TextClassifier};
use crate::corpus::{generate_synthetic, ingest_csv, read_jsonl, split, write_jsonl, LabelTaxonomy, PatentRecord};
use crate::encoder::{export_attention, pretrain, EncoderConfig, EncoderModel, PretrainRecord};
use crate::error::{Error, Result};
use crate::hierarchy::{evaluate, predict_hierarchical, reference, train_hierarchical, HierarchicalModel};
use crate::numerics::checkpoint;
use crate::rng::derive_seed;
use crate::tokenizer::{build_vocab, encode_pair, Vocab};
use crate::train::{write_metrics_jsonl, EpochMetrics, Split};

const CONFIG_ECHO: &str = "config.cfg";

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|e| Error::io(path, e))
}

fn say(out: &mut dyn Write, line: impl AsRef<str>) -> Result<()> {
    writeln!(out, "{}", line.as_ref()).map_err(|e| Error::io(Path::new("<stdout>"), e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    io(path, fs::write(path, serde_json::to_string_pretty(value)? + "\n"))
}

fn write_jsonl_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    io(path, fs::write(path, text))
}

fn resolve(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &args.overrides {
        cfg.apply_override(kv)?;
    }
    Ok(cfg)
}

fn prepare_dir(dir: &Path, cfg: &RunConfig) -> Result<()> {
    io(dir, fs::create_dir_all(dir))?;
    let path = dir.join(CONFIG_ECHO);
    io(&path, fs::write(&path, cfg.to_kv()))
}

/// Echo next to a single-file output: `corpus.jsonl` → `corpus.config.cfg`.
fn echo_beside(output: &Path, cfg: &RunConfig) -> Result<()> {
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        io(parent, fs::create_dir_all(parent))?;
    }
    let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let path = output.with_file_name(format!("{stem}.config.cfg"));
    io(&path, fs::write(&path, cfg.to_kv()))
}

pub(super) fn execute(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Ingest { cfg, input, output } => {
            let cfg = resolve(&cfg)?;
            let ingested = ingest_csv(&input, &cfg.ingest_options()?)?;
            echo_beside(&output, &cfg)?;
            write_jsonl(&output, &ingested.records)?;
            say(out, serde_json::to_string(&ingested.stats)?)
        }
        Command::Synth { cfg, output } => {
            let cfg = resolve(&cfg)?;
            let records = generate_synthetic(&cfg.synthetic_spec(), cfg.seed)?;
            echo_beside(&output, &cfg)?;
            write_jsonl(&output, &records)?;
            say(out, format!("{} records", records.len()))
        }
        Command::Pretrain { cfg, corpus, out: dir } => {
            let cfg = resolve(&cfg)?;
            let records = read_jsonl(&corpus)?;
            prepare_dir(&dir, &cfg)?;
            let (model, vocab, log) = run_pretrain(&cfg, &records)?;
            save_pretrained(&dir, &vocab, &model)?;
            write_jsonl_rows(&dir.join("pretrain.jsonl"), &log)?;
            if let (Some(first), Some(last)) = (log.first(), log.last()) {
                say(out, format!("mlm_loss {} -> {}, nsp_loss {} -> {}", first.mlm_loss, last.mlm_loss, first.nsp_loss, last.nsp_loss))?;
            }
            Ok(())
        }
        Command::TrainFlat { cfg, corpus, out: dir } => {
            let cfg = resolve(&cfg)?;
            let records = read_jsonl(&corpus)?;
            prepare_dir(&dir, &cfg)?;
            let run = run_flat(&cfg, &records)?;
            run.model.save(&dir.join("model"))?;
            write_json(&dir.join("model").join("labels.json"), &run.labels)?;
            write_metrics_jsonl(&dir.join("metrics.jsonl"), &run.metrics)?;
            write_json(&dir.join("result.json"), &run.summary)?;
            say(out, serde_json::to_string(&run.summary)?)
        }
        Command::TrainHier { cfg, corpus, out: dir } => {
            let cfg = resolve(&cfg)?;
            let records = read_jsonl(&corpus)?;
            prepare_dir(&dir, &cfg)?;
            let taxonomy = LabelTaxonomy::build(&records)?;
            let parts = split(&records, cfg.split_ratio, cfg.seed)?;
            write_jsonl(&dir.join("train.jsonl"), &parts.train)?;
            write_jsonl(&dir.join("test.jsonl"), &parts.test)?;
            let spec = classifier_spec(&cfg)?;
            let (model, log) = train_hierarchical(&parts.train, &taxonomy, &spec, derive_seed(cfg.seed, &[1]))?;
            model.save(&dir.join("model"))?;
            let mut rows = Vec::new();
            rows.extend(log.l1.iter().map(|m| LevelMetrics::new("L1", m)));
            for (s, ms) in &log.l2 {
                rows.extend(ms.iter().map(|m| LevelMetrics::new(&format!("L2/{s}"), m)));
            }
            write_jsonl_rows(&dir.join("training.jsonl"), &rows)?;
            say(
                out,
                format!(
                    "trained 1 + {} models over {} sections, {} classes",
                    model.l2.len(),
                    taxonomy.n_sections(),
                    taxonomy.n_classes()
                ),
            )
        }
        Command::Eval {
            model,
            test,
            out: dir,
            table2_check,
        } => {
            if table2_check {
                for row in &reference::TABLE2 {
                    let c = reference::table2_check(row);
                    say(
                        out,
                        format!(
                            "{:<9} acc_l2_avg {:.1} ({:.4}; printed {:.1})  acc_estimated {:.1} ({:.4}; from rounded avg {:.2}; printed {:.1})",
                            c.model,
                            c.acc_l2_avg,
                            c.acc_l2_avg,
                            c.printed_avg,
                            c.acc_estimated,
                            c.acc_estimated,
                            c.acc_estimated_from_rounded_avg,
                            c.printed_overall
                        ),
                    )?;
                }
                if model.is_none() {
                    return Ok(());
                }
            }
            let model_arg = model.expect("clap requires --model without --table2-check");
            let (run_dir, model_dir) = locate_model(&model_arg);
            let model = HierarchicalModel::load(&model_dir)?;
            let test = read_jsonl(&test.unwrap_or_else(|| run_dir.join("test.jsonl")))?;
            let metrics = evaluate(&model, &test)?;
            let dir = dir.unwrap_or(run_dir);
            io(&dir, fs::create_dir_all(&dir))?;
            metrics.save_json(&dir.join("metrics.json"))?;
            let name = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            metrics.save_csv(&dir.join("summary.csv"), &name)?;
            say(out, serde_json::to_string(&metrics)?)
        }
        Command::Predict { model, text } => {
            let (_, model_dir) = locate_model(&model);
            let result = if model_dir.join("taxonomy.json").exists() {
                let m = HierarchicalModel::load(&model_dir)?;
                let (s, c) = predict_hierarchical(&m, &text)?;
                serde_json::json!({ "section": s.to_string(), "class": c, "ipc": format!("{s}{c}") })
            } else {
                let m = AnyClassifier::load(&model_dir)?;
                let labels: Vec<String> = read_json(&model_dir.join("labels.json"))?;
                let p = m.predict_proba(&text)?;
                let k = crate::numerics::argmax(&p);
                serde_json::json!({ "label": labels[k], "probability": p[k] })
            };
            say(out, result.to_string())
        }
        Command::ExportAttention {
            model,
            text_a,
            text_b,
            max_len,
            output,
        } => {
            let (vocab, encoder) = load_any_encoder(&model)?;
            let cap = encoder.config().max_positions;
            let needed = text_a.chars().count() + text_b.chars().count() + 3;
            let len = max_len.unwrap_or(needed.min(cap));
            if len < 3 || len > cap {
                return Err(Error::InvalidConfig(format!("max_len {len} must lie in 3..={cap}")));
            }
            let seq = encode_pair(&text_a, &text_b, &vocab, len);
            let dump = export_attention(&encoder, &seq, &vocab)?;
            if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
                io(parent, fs::create_dir_all(parent))?;
            }
            dump.save(&output)?;
            say(out, format!("{} layers x {} heads over {} tokens", dump.layers.len(), encoder.config().n_heads, len))
        }
        Command::LayerSweep { cfg, corpus, out: dir } => {
            let cfg = resolve(&cfg)?;
            if cfg.model != ModelKind::BertCnn {
                return Err(Error::InvalidConfig("layer-sweep needs model = bert-cnn".into()));
            }
            let records = read_jsonl(&corpus)?;
            prepare_dir(&dir, &cfg)?;
            let rows = layer_sweep(&cfg, &records)?;
            write_jsonl_rows(&dir.join("layer_sweep.jsonl"), &rows)?;
            for r in &rows {
                say(out, serde_json::to_string(r)?)?;
            }
            Ok(())
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = io(path, fs::read_to_string(path))?;
    Ok(serde_json::from_str(&text)?)
}

/// Accepts a run directory (with `model/`) or the model directory itself.
fn locate_model(path: &Path) -> (PathBuf, PathBuf) {
    let inner = path.join("model");
    if inner.is_dir() {
        (path.to_path_buf(), inner)
    } else {
        let run = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        (run, path.to_path_buf())
    }
}

#[derive(Serialize)]
struct LevelMetrics<'a> {
    level: String,
    #[serde(flatten)]
    metrics: &'a EpochMetrics,
}

impl<'a> LevelMetrics<'a> {
    fn new(level: &str, metrics: &'a EpochMetrics) -> Self {
        LevelMetrics {
            level: level.to_string(),
            metrics,
        }
    }
}

fn run_pretrain(cfg: &RunConfig, records: &[PatentRecord]) -> Result<(EncoderModel, Vocab, Vec<PretrainRecord>)> {
    let texts: Vec<&str> = records.iter().map(|r| r.abstract_text.as_str()).collect();
    let vocab = build_vocab(&texts, 1)?;
    let mut config = cfg.encoder_config(vocab.len());
    config.max_positions = config.max_positions.max(cfg.max_len);
    let mut model = EncoderModel::init(config, derive_seed(cfg.seed, &[2]))?;
    let log = pretrain(&mut model, &texts, &vocab, &cfg.pretrain_options())?;
    Ok((model, vocab, log))
}

/// Writes `encoder.json`, `params.bin` and `vocab.json`.
pub fn save_pretrained(dir: &Path, vocab: &Vocab, model: &EncoderModel) -> Result<()> {
    io(dir, fs::create_dir_all(dir))?;
    write_json(&dir.join("encoder.json"), model.config())?;
    checkpoint::save(&dir.join("params.bin"), model.params())?;
    vocab.save(&dir.join("vocab.json"))
}

pub fn load_pretrained(dir: &Path) -> Result<(Vocab, EncoderModel)> {
    let config: EncoderConfig = read_json(&dir.join("encoder.json"))?;
    let params = checkpoint::load(&dir.join("params.bin"))?;
    let vocab = Vocab::load(&dir.join("vocab.json"))?;
    Ok((vocab, EncoderModel::from_params(config, params)?))
}

fn load_any_encoder(path: &Path) -> Result<(Vocab, EncoderModel)> {
    if path.join("encoder.json").exists() {
        return load_pretrained(path);
    }
    let (_, model_dir) = locate_model(path);
    let clf = if model_dir.join("taxonomy.json").exists() {
        AnyClassifier::load(&model_dir.join("l1"))?
    } else {
        AnyClassifier::load(&model_dir)?
    };
    match clf {
        AnyClassifier::BertCnn(c) => Ok((c.vocab, c.encoder)),
        _ => Err(Error::InvalidConfig(format!("{} holds no transformer encoder", path.display()))),
    }
}

fn classifier_spec(cfg: &RunConfig) -> Result<ClassifierSpec> {
    Ok(match cfg.model {
        ModelKind::BertCnn => {
            let mut spec = cfg.bert_cnn_spec();
            if !cfg.pretrained.is_empty() {
                spec.pretrained = Some(Arc::new(load_pretrained(Path::new(&cfg.pretrained))?));
            }
            ClassifierSpec::BertCnn(spec)
        }
        ModelKind::Cnn => ClassifierSpec::Baseline(cfg.baseline_config(BaselineKind::Cnn)),
        ModelKind::Rnn => ClassifierSpec::Baseline(cfg.baseline_config(BaselineKind::Rnn)),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatSummary {
    pub n_train: usize,
    pub n_test: usize,
    pub n_classes: usize,
    pub accuracy: f64,
}

pub struct FlatRun {
    pub model: AnyClassifier,
    pub labels: Vec<String>,
    pub metrics: Vec<EpochMetrics>,
    pub summary: FlatSummary,
}

fn flat_label(level: FlatLevel, r: &PatentRecord) -> String {
    match level {
        FlatLevel::Section => r.ipc.section().to_string(),
        FlatLevel::Class => r.ipc.level2(),
    }
}

/// Split, train one classifier with the test part as eval data, and report
/// the final test accuracy.
pub fn run_flat(cfg: &RunConfig, records: &[PatentRecord]) -> Result<FlatRun> {
    let records: Vec<PatentRecord> = match cfg.flat_section.as_str() {
        "" => records.to_vec(),
        s => records.iter().filter(|r| r.ipc.section().to_string() == s).cloned().collect(),
    };
    if records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let labels: Vec<String> = {
        let set: std::collections::BTreeSet<String> = records.iter().map(|r| flat_label(cfg.flat_level, r)).collect();
        set.into_iter().collect()
    };
    if labels.len() < 2 {
        return Err(Error::InvalidConfig(format!("flat training needs at least 2 labels, found {}", labels.len())));
    }
    let index: BTreeMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let parts = split(&records, cfg.split_ratio, cfg.seed)?;
    if parts.test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let pairs = |rs: &[PatentRecord]| -> Vec<(String, usize)> {
        rs.iter().map(|r| (r.abstract_text.clone(), index[flat_label(cfg.flat_level, r).as_str()])).collect()
    };
    let (train, test) = (pairs(&parts.train), pairs(&parts.test));
    let (train_refs, test_refs) = (as_refs(&train), as_refs(&test));
    let spec = classifier_spec(cfg)?;
    let trained = spec.train(&train_refs, Some(&test_refs), labels.len(), derive_seed(cfg.seed, &[1]))?;
    let accuracy = trained
        .metrics
        .iter()
        .rev()
        .find(|m| m.split == Split::Eval)
        .map_or(0.0, |m| m.accuracy);
    Ok(FlatRun {
        model: trained.model,
        summary: FlatSummary {
            n_train: train.len(),
            n_test: test.len(),
            n_classes: labels.len(),
            accuracy,
        },
        labels,
        metrics: trained.metrics,
    })
}

fn as_refs(v: &[(String, usize)]) -> Vec<(&str, usize)> {
    v.iter().map(|(t, y)| (t.as_str(), *y)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub accuracy: f64,
}

fn layer_sweep(cfg: &RunConfig, records: &[PatentRecord]) -> Result<Vec<SweepRow>> {
    (1..=cfg.n_layers)
        .map(|n| {
            let mut c = cfg.clone();
            c.n_top_layers = n;
            let run = run_flat(&c, records)?;
            Ok(SweepRow {
                n,
                accuracy: run.summary.accuracy,
            })
        })
        .collect()
}
