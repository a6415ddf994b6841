//! Mini-batch Adam training shared by every classifier.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{argmax, mean_gradients, AdamConfig, AdamState, Binding, ParamSet, Tape, Tensor, Var};
use crate::rng::{derive_seed, seeded, ChaCha8Rng};

/// A model whose logits can be recorded on a tape.
///
/// Parameters are grouped into sets (e.g. encoder and head) so groups can
/// be frozen independently.
pub trait Trainable: Sync {
    type Input: Sync;

    fn param_sets(&self) -> Vec<&ParamSet>;
    fn param_sets_mut(&mut self) -> Vec<&mut ParamSet>;

    /// `[1, n_classes]` logits for one input; dropout iff `rng` is given.
    fn logits(&self, tape: &mut Tape, binds: &[Binding], input: &Self::Input, rng: Option<&mut ChaCha8Rng>)
        -> Result<Var>;

    fn n_classes(&self) -> usize;

    /// Hook to edit raw gradients, one list per parameter set.
    fn adjust_gradients(&self, _grads: &mut [Vec<Tensor>]) {}

    /// Sets that keep their values during training.
    fn frozen(&self) -> Vec<bool> {
        vec![false; self.param_sets().len()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            lr: 2e-5,
            batch_size: 24,
            epochs: 20,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

/// One JSON Lines row of training progress.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
}

pub fn write_metrics_jsonl(path: &Path, rows: &[EpochMetrics]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for r in rows {
        let line = serde_json::to_string(r)?;
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

struct Pass {
    loss: f64,
    correct: bool,
    grads: Option<Vec<Vec<Tensor>>>,
}

fn run_one<M: Trainable>(model: &M, input: &M::Input, label: usize, rng: Option<&mut ChaCha8Rng>) -> Result<Pass> {
    let train = rng.is_some();
    let mut tape = Tape::new();
    let binds: Vec<Binding> = model.param_sets().into_iter().map(|p| p.bind(&mut tape)).collect();
    let logits = model.logits(&mut tape, &binds, input, rng)?;
    let loss = tape.cross_entropy(logits, &[Some(label)])?;
    let correct = argmax(tape.value(logits).data()) == label;
    let grads = if train {
        let mut g = tape.backward(loss)?;
        Some(binds.iter().map(|b| b.gradients(&mut g)).collect::<Result<_>>()?)
    } else {
        None
    };
    Ok(Pass {
        loss: tape.value(loss).data()[0],
        correct,
        grads,
    })
}

fn check_labels<M: Trainable, I>(model: &M, data: &[(I, usize)]) -> Result<()> {
    let n = model.n_classes();
    match data.iter().find(|(_, y)| *y >= n) {
        Some(&(_, label)) => Err(Error::LabelOutOfRange { label, n_classes: n }),
        None => Ok(()),
    }
}

/// Mean loss and accuracy without dropout or updates.
pub fn evaluate_loss<M: Trainable>(model: &M, data: &[(M::Input, usize)]) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    check_labels(model, data)?;
    let passes: Vec<Pass> = data.par_iter().map(|(x, y)| run_one(model, x, *y, None)).collect::<Result<_>>()?;
    let n = passes.len() as f64;
    Ok((
        passes.iter().map(|p| p.loss).sum::<f64>() / n,
        passes.iter().filter(|p| p.correct).count() as f64 / n,
    ))
}

/// Trains `model` with cross-entropy and Adam. Examples are reshuffled every
/// epoch and the final partial batch is kept. Train rows report the running
/// (dropout-on) loss and accuracy of the epoch; eval rows are measured after it.
pub fn fit<M: Trainable>(
    model: &mut M,
    train: &[(M::Input, usize)],
    eval: Option<&[(M::Input, usize)]>,
    opts: &FitOptions,
) -> Result<Vec<EpochMetrics>> {
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if opts.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be positive".into()));
    }
    if !(opts.lr >= 0.0 && opts.lr.is_finite()) {
        return Err(Error::InvalidConfig(format!("learning rate {} must be finite and non-negative", opts.lr)));
    }
    check_labels(model, train)?;
    if let Some(e) = eval {
        check_labels(model, e)?;
    }
    let config = AdamConfig::with_lr(opts.lr);
    let mut adams: Vec<AdamState> = model.param_sets().into_iter().map(|p| AdamState::new(config, p)).collect();
    let frozen = model.frozen();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rows = Vec::new();

    for epoch in 0..opts.epochs {
        let epoch_seed = derive_seed(opts.seed, &[epoch as u64]);
        order.shuffle(&mut seeded(epoch_seed));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, chunk) in order.chunks(opts.batch_size).enumerate() {
            let m: &M = model;
            let passes: Vec<Pass> = chunk
                .par_iter()
                .map(|&i| {
                    let mut rng = seeded(derive_seed(epoch_seed, &[b as u64, i as u64]));
                    let (x, y) = &train[i];
                    run_one(m, x, *y, Some(&mut rng))
                })
                .collect::<Result<_>>()?;
            let mut per_set: Vec<Vec<Vec<Tensor>>> = vec![Vec::with_capacity(chunk.len()); adams.len()];
            for p in passes {
                loss_sum += p.loss;
                correct += p.correct as usize;
                for (s, g) in p.grads.expect("training pass").into_iter().enumerate() {
                    per_set[s].push(g);
                }
            }
            let mut grads: Vec<Vec<Tensor>> = per_set
                .into_iter()
                .map(|g| mean_gradients(g).expect("non-empty batch"))
                .collect();
            model.adjust_gradients(&mut grads);
            for (((params, adam), g), &fz) in model.param_sets_mut().into_iter().zip(&mut adams).zip(&grads).zip(&frozen) {
                if !fz {
                    adam.step_params(params, g)?;
                }
            }
        }
        let n = train.len() as f64;
        let loss = loss_sum / n;
        if !loss.is_finite() {
            return Err(Error::InvalidConfig(format!("training loss diverged at epoch {}", epoch + 1)));
        }
        rows.push(EpochMetrics {
            epoch: epoch + 1,
            split: Split::Train,
            loss,
            accuracy: correct as f64 / n,
        });
        if let Some(e) = eval.filter(|e| !e.is_empty()) {
            let (loss, accuracy) = evaluate_loss(model, e)?;
            rows.push(EpochMetrics {
                epoch: epoch + 1,
                split: Split::Eval,
                loss,
                accuracy,
            });
        }
    }
    Ok(rows)
}
