//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use bertcnn::numerics::{ParamSet, Tape, Tensor, Var};
use bertcnn::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn scaled(mut t: Tensor, k: f64) -> Tensor {
    t.data_mut().iter_mut().for_each(|v| *v *= k);
    t
}

pub type OpFn = dyn Fn(&mut Tape, &[Var]) -> Result<Var>;

/// `Σ op(inputs) ⊙ R` for a fixed random `R`, so every output entry matters.
fn projected_loss(inputs: &[Tensor], op: &OpFn, r: Option<&Tensor>) -> (Tape, Vec<Var>, Var, Tensor) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = op(&mut tape, &vars).unwrap();
    let shape = tape.value(out).shape().to_vec();
    let r = match r {
        Some(r) => r.clone(),
        None => random_tensor(&shape, &mut ChaCha8Rng::seed_from_u64(99)),
    };
    let rv = tape.leaf(r.clone());
    let prod = tape.mul(out, rv).unwrap();
    let loss = tape.sum(prod).unwrap();
    (tape, vars, loss, r)
}

/// Largest relative error between reverse-mode and central-difference
/// gradients, over every entry of the inputs listed in `check`.
pub fn check_primitive(inputs: &[Tensor], check: &[usize], op: &OpFn) -> f64 {
    let (tape, vars, loss, r) = projected_loss(inputs, op, None);
    let grads = tape.backward(loss).unwrap();
    let value = |ins: &[Tensor]| {
        let (t, _, l, _) = projected_loss(ins, op, Some(&r));
        t.value(l).data()[0]
    };
    let mut worst: f64 = 0.0;
    for &i in check {
        let g = grads.wrt(vars[i]).unwrap();
        for k in 0..inputs[i].len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[k] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[k] -= FD_STEP;
            let numeric = (value(&plus) - value(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(g.data()[k], numeric));
        }
    }
    worst
}

/// Picks `n` (tensor, entry) coordinates: a tensor uniformly among those
/// accepted by `filter`, then an entry uniformly within it.
pub fn sample_coordinates(
    sets: &[&ParamSet],
    n: usize,
    filter: impl Fn(&str) -> bool,
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, usize, usize)> {
    let mut tensors = Vec::new();
    for (s, set) in sets.iter().enumerate() {
        for (t, (name, tensor)) in set.iter().enumerate() {
            if filter(name) {
                tensors.push((s, t, tensor.len()));
            }
        }
    }
    (0..n)
        .map(|_| {
            let (s, t, len) = tensors[rng.random_range(0..tensors.len())];
            (s, t, rng.random_range(0..len))
        })
        .collect()
}

/// Straight-line scalar Adam with moments updated from the previous second moment.
pub fn scalar_adam(theta0: f64, grads_of: impl Fn(f64) -> f64, steps: usize, lr: f64) -> Vec<f64> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
    let (mut theta, mut m, mut v) = (theta0, 0.0f64, 0.0f64);
    let mut trace = Vec::new();
    for t in 1..=steps {
        let g = grads_of(theta);
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1.powi(t as i32));
        let v_hat = v / (1.0 - b2.powi(t as i32));
        theta -= lr / (v_hat.sqrt() + eps) * m_hat;
        trace.push(theta);
    }
    trace
}

/// Row-by-row weighted sum, the way one would do it in a spreadsheet:
/// products of count and accuracy, summed, divided by the summed counts.
pub fn spreadsheet_weighted(rows: &[(char, usize, f64)]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for &(_, n, acc) in rows {
        num += n as f64 * acc;
        den += n as f64;
    }
    num / den
}

/// Words that occur under exactly one label in `train`, grouped by that label.
pub fn unique_words(train: &[(String, String)]) -> BTreeMap<String, BTreeSet<String>> {
    let mut owners: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for (doc, label) in train {
        for w in doc.split_whitespace() {
            owners.entry(w).or_default().insert(label);
        }
    }
    let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (w, labels) in owners {
        if labels.len() == 1 {
            let l = labels.into_iter().next().unwrap();
            out.entry(l.to_string()).or_default().insert(w.to_string());
        }
    }
    out
}

/// Keyword oracle for the synthetic corpus: the label owning the most of
/// the document's label-unique words (`None` when no such word occurs).
pub fn keyword_oracle(keywords: &BTreeMap<String, BTreeSet<String>>, text: &str) -> Option<String> {
    let words: Vec<&str> = text.split_whitespace().collect();
    keywords
        .iter()
        .map(|(l, ks)| (words.iter().filter(|w| ks.contains(**w)).count(), l))
        .filter(|(hits, _)| *hits > 0)
        .max_by_key(|(hits, _)| *hits)
        .map(|(_, l)| l.clone())
}
