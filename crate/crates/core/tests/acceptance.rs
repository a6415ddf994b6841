//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! A criterion listed in `KNOWN_RED` is reported as FAIL but does not fail
//! the process; any other failure does.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use bertcnn::baselines::{BaselineConfig, BaselineKind};
use bertcnn::classifier::{softmax_row, ClassifierSpec};
use bertcnn::cli;
use bertcnn::cnn_head::{BertCnnClassifier, BertCnnSpec, HeadConfig, HeadModel};
use bertcnn::corpus::{generate_synthetic, split, LabelTaxonomy, PatentRecord, SyntheticSpec};
use bertcnn::encoder::{
    build_pretraining_items, pretrain, pretrain_loss, EncoderConfig, EncoderModel, PretrainOptions,
};
use bertcnn::hierarchy::{evaluate, predict_hierarchical, route_by_section, HierarchicalMetrics, HierarchicalModel};
use bertcnn::hierarchy::{reference, train_hierarchical, weighted_accuracy};
use bertcnn::numerics::{AdamConfig, AdamState, Binding, Tape, Tensor, Var};
use bertcnn::tokenizer::{build_vocab, encode, mask_count, mask_for_mlm, TokenSequence, CLS, MASK, PAD, SEP};
use bertcnn::train::{FitOptions, Trainable};
use common::{check_primitive, random_tensor, rel_err, sample_coordinates, scalar_adam, scaled, spreadsheet_weighted, OpFn, FD_STEP};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria whose failure is understood and recorded; see the README.
const KNOWN_RED: &[usize] = &[1];

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict { pass, detail: detail.into() }
    }
}

/// Models trained for criterion 5 and reused by criterion 6.
struct Trained {
    taxonomy: LabelTaxonomy,
    train: Vec<PatentRecord>,
    test: Vec<PatentRecord>,
    models: Vec<(&'static str, HierarchicalModel, HierarchicalMetrics)>,
}

fn main() {
    let mut unexpected = Vec::new();
    let mut report = |n: usize, v: Verdict| {
        let status = if v.pass { "PASS" } else { "FAIL" };
        let note = if !v.pass && KNOWN_RED.contains(&n) { " [known red]" } else { "" };
        println!("criterion {n}: {status}{note} {}", v.detail);
        if !v.pass && !KNOWN_RED.contains(&n) {
            unexpected.push(n);
        }
    };
    report(1, criterion_1());
    report(2, criterion_2());
    report(3, criterion_3());
    report(4, criterion_4());
    let (v5, trained) = criterion_5();
    report(5, v5);
    report(6, criterion_6(&trained));
    report(7, criterion_7());
    report(8, criterion_8());
    report(9, criterion_9());
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- 1

fn criterion_1() -> Verdict {
    let row = reference::bert_cnn_row();
    let rows: Vec<(char, usize, f64)> = reference::TABLE1.iter().zip(row.acc_l2).map(|(&(s, _, n), a)| (s, n, a)).collect();
    let oracle_avg = spreadsheet_weighted(&rows);
    let oracle_est = row.acc_l1 * oracle_avg / 100.0;

    let acc: BTreeMap<String, f64> = reference::TABLE1
        .iter()
        .zip(row.acc_l2)
        .map(|(&(s, _, _), a)| (s.to_string(), a / 100.0))
        .collect();
    let (avg, est) = weighted_accuracy(row.acc_l1 / 100.0, &acc, &reference::table1_counts());
    let (avg, est) = (avg * 100.0, est * 100.0);

    let oracle_ok = (avg - oracle_avg).abs() < 1e-9 && (est - oracle_est).abs() < 1e-9;
    let avg_ok = (avg - 93.1).abs() <= 0.05;
    let est_ok = (est - 84.3).abs() <= 0.05;
    Verdict::new(
        oracle_ok && avg_ok && est_ok,
        format!(
            "acc_l2_avg {avg:.4}% (target 93.1 ± 0.05: {}), acc_estimated {est:.4}% (target 84.3 ± 0.05: {}), \
             oracle {oracle_avg:.4}/{oracle_est:.4} ({})",
            ok(avg_ok),
            ok(est_ok),
            if oracle_ok { "agrees" } else { "DISAGREES" }
        ),
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "miss"
    }
}

// ---------------------------------------------------------------- 2

fn primitive_cases() -> Vec<(&'static str, Vec<Tensor>, Vec<usize>, Box<OpFn>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut r = |shape: &[usize]| random_tensor(shape, &mut rng);
    let keep = [true, true, false, true, false];
    let dropout = Tensor::new(vec![3, 4], vec![2.0, 0.0, 2.0, 2.0, 0.0, 2.0, 2.0, 0.0, 2.0, 2.0, 2.0, 0.0]).unwrap();
    let wide = scaled(r(&[5, 4]), 3.0);
    vec![
        ("matmul", vec![r(&[3, 4]), r(&[4, 2])], vec![0, 1], Box::new(|t: &mut Tape, v: &[Var]| t.matmul(v[0], v[1]))),
        ("matmul_bt", vec![r(&[3, 4]), r(&[5, 4])], vec![0, 1], Box::new(|t: &mut Tape, v: &[Var]| t.matmul_bt(v[0], v[1]))),
        ("transpose", vec![r(&[3, 4])], vec![0], Box::new(|t: &mut Tape, v: &[Var]| t.transpose(v[0]))),
        ("add", vec![r(&[3, 4]), r(&[3, 4])], vec![0, 1], Box::new(|t: &mut Tape, v: &[Var]| t.add(v[0], v[1]))),
        ("sub", vec![r(&[3, 4]), r(&[3, 4])], vec![0, 1], Box::new(|t: &mut Tape, v: &[Var]| t.sub(v[0], v[1]))),
        ("mul", vec![r(&[3, 4]), r(&[3, 4])], vec![0, 1], Box::new(|t: &mut Tape, v: &[Var]| t.mul(v[0], v[1]))),
        ("add_bias", vec![r(&[3, 4]), r(&[4])], vec![0, 1], Box::new(|t: &mut Tape, v: &[Var]| t.add_bias(v[0], v[1]))),
        ("scale", vec![r(&[3, 4])], vec![0], Box::new(|t: &mut Tape, v: &[Var]| t.scale(v[0], -1.7))),
        ("mul_const", vec![r(&[3, 4])], vec![0], Box::new(move |t: &mut Tape, v: &[Var]| t.mul_const(v[0], dropout.clone()))),
        ("relu", vec![r(&[3, 4])], vec![0], Box::new(|t: &mut Tape, v: &[Var]| t.relu(v[0]))),
        ("gelu", vec![r(&[3, 4])], vec![0], Box::new(|t: &mut Tape, v: &[Var]| t.gelu(v[0]))),
        ("tanh", vec![r(&[3, 4])], vec![0], Box::new(|t: &mut Tape, v: &[Var]| t.tanh(v[0]))),
        ("sigmoid", vec![r(&[3, 4])], vec![0], Box::new(|t: &mut Tape, v: &[Var]| t.sigmoid(v[0]))),
        ("softmax(rows)", vec![r(&[3, 5])], vec![0], Box::new(|t: &mut Tape, v: &[Var]| t.softmax(v[0], 1))),
        ("softmax(cols)", vec![r(&[3, 5])], vec![0], Box::new(|t: &mut Tape, v: &[Var]| t.softmax(v[0], 0))),
        (
            "masked_softmax",
            vec![r(&[3, 5])],
            vec![0],
            Box::new(move |t: &mut Tape, v: &[Var]| t.masked_softmax(v[0], 1, Some(&keep))),
        ),
        (
            "layer_norm",
            vec![r(&[3, 5]), r(&[5]), r(&[5])],
            vec![0, 1, 2],
            Box::new(|t: &mut Tape, v: &[Var]| t.layer_norm(v[0], v[1], v[2], 1e-12)),
        ),
        ("conv2d_valid", vec![r(&[6, 4]), r(&[2, 3, 4])], vec![0, 1], Box::new(|t: &mut Tape, v: &[Var]| t.conv2d_valid(v[0], v[1]))),
        ("channel_bias", vec![r(&[2, 3, 2]), r(&[2])], vec![0, 1], Box::new(|t: &mut Tape, v: &[Var]| t.channel_bias(v[0], v[1]))),
        ("max_pool_full", vec![r(&[3, 4, 1])], vec![0], Box::new(|t: &mut Tape, v: &[Var]| t.max_pool_full(v[0]))),
        ("embedding", vec![r(&[6, 3])], vec![0], Box::new(|t: &mut Tape, v: &[Var]| t.embedding(v[0], &[0, 2, 2, 5]))),
        (
            "cross_entropy",
            vec![wide],
            vec![0],
            Box::new(|t: &mut Tape, v: &[Var]| t.cross_entropy(v[0], &[Some(1), None, Some(3), Some(0), Some(3)])),
        ),
        ("select_rows", vec![r(&[4, 3])], vec![0], Box::new(|t: &mut Tape, v: &[Var]| t.select_rows(v[0], &[3, 0, 3]))),
        ("slice_cols", vec![r(&[3, 5])], vec![0], Box::new(|t: &mut Tape, v: &[Var]| t.slice_cols(v[0], 1, 4))),
        ("concat_cols", vec![r(&[3, 2]), r(&[3, 3])], vec![0, 1], Box::new(|t: &mut Tape, v: &[Var]| t.concat_cols(&[v[0], v[1]]))),
        (
            "stack_columns",
            vec![r(&[1, 4]), r(&[4]), r(&[1, 4])],
            vec![0, 1, 2],
            Box::new(|t: &mut Tape, v: &[Var]| t.stack_columns(&[v[2], v[0], v[1]])),
        ),
        ("reshape", vec![r(&[3, 4])], vec![0], Box::new(|t: &mut Tape, v: &[Var]| t.reshape(v[0], &[2, 6]))),
        ("sum", vec![r(&[3, 4])], vec![0], Box::new(|t: &mut Tape, v: &[Var]| t.sum(v[0]))),
        ("mean", vec![r(&[3, 4])], vec![0], Box::new(|t: &mut Tape, v: &[Var]| t.mean(v[0]))),
        ("mean_rows", vec![r(&[5, 3])], vec![0], Box::new(|t: &mut Tape, v: &[Var]| t.mean_rows(v[0], 3))),
    ]
}

/// Toy BERT-CNN (2 layers, hidden 32, 4 heads, L = 16) with a 3-class head.
fn toy_bert_cnn() -> (BertCnnClassifier, TokenSequence) {
    let records = generate_synthetic(&SyntheticSpec { sections: 1, docs_per_class: 4, ..Default::default() }, 11).unwrap();
    let texts: Vec<&str> = records.iter().map(|r| r.abstract_text.as_str()).collect();
    let vocab = build_vocab(&texts, 1).unwrap();
    let encoder = EncoderModel::init(EncoderConfig::toy(vocab.len(), 16), 21).unwrap();
    let head = HeadModel::init(HeadConfig::new(2, 3), 22).unwrap();
    let clf = BertCnnClassifier::new(encoder, head, vocab, 16).unwrap();
    // Shorter than L so that PAD keys are exercised.
    let seq = clf.encode_text(&texts[0].chars().take(9).collect::<String>());
    (clf, seq)
}

fn bert_cnn_loss(clf: &BertCnnClassifier, seq: &TokenSequence, label: usize) -> (Tape, Vec<Binding>, Var) {
    let mut tape = Tape::new();
    let binds: Vec<Binding> = clf.param_sets().into_iter().map(|p| p.bind(&mut tape)).collect();
    let logits = clf.logits(&mut tape, &binds, seq, None).unwrap();
    let loss = tape.cross_entropy(logits, &[Some(label)]).unwrap();
    (tape, binds, loss)
}

fn criterion_2() -> Verdict {
    let t = Instant::now();
    let mut worst_primitive = ("", 0.0f64);
    for (name, inputs, check, op) in primitive_cases() {
        let e = check_primitive(&inputs, &check, op.as_ref());
        if e > worst_primitive.1 || worst_primitive.0.is_empty() {
            worst_primitive = (name, e);
        }
    }

    let (clf, seq) = toy_bert_cnn();
    let label = 1;
    let (tape, binds, loss) = bert_cnn_loss(&clf, &seq, label);
    let mut grads = tape.backward(loss).unwrap();
    let analytic: Vec<Vec<Tensor>> = binds.iter().map(|b| b.gradients(&mut grads).unwrap()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let coords = sample_coordinates(
        &[clf.encoder.params(), clf.head.params()],
        240,
        |name| !name.starts_with("mlm.") && !name.starts_with("nsp."),
        &mut rng,
    );
    let value_at = |set: usize, t: usize, k: usize, delta: f64| {
        let mut c = clf.clone();
        let params = if set == 0 { c.encoder.params_mut() } else { c.head.params_mut() };
        params.tensors_mut()[t].data_mut()[k] += delta;
        let (tape, _, loss) = bert_cnn_loss(&c, &seq, label);
        tape.value(loss).data()[0]
    };
    let mut worst_model: f64 = 0.0;
    let mut nonzero = 0;
    for &(s, t, k) in &coords {
        let numeric = (value_at(s, t, k, FD_STEP) - value_at(s, t, k, -FD_STEP)) / (2.0 * FD_STEP);
        let a = analytic[s][t].data()[k];
        if a.abs() > 1e-9 {
            nonzero += 1;
        }
        worst_model = worst_model.max(rel_err(a, numeric));
    }
    let pass = worst_primitive.1 < 1e-4 && worst_model < 1e-4;
    Verdict::new(
        pass,
        format!(
            "{} primitives, worst {} rel err {:.2e}; BERT-CNN loss on {} sampled parameters ({} with non-zero gradient), \
             worst rel err {:.2e} ({:.1?})",
            primitive_cases().len(),
            worst_primitive.0,
            worst_primitive.1,
            coords.len(),
            nonzero,
            worst_model,
            t.elapsed()
        ),
    )
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Verdict {
    let (a, c, theta0, lr) = (2.0, 3.0, 0.5, 0.1);
    let grad = |theta: f64| a * (theta - c);
    let expected = scalar_adam(theta0, grad, 3, lr);

    let mut params = vec![Tensor::scalar(theta0)];
    let mut adam = AdamState::for_tensors(AdamConfig::with_lr(lr), &params);
    let mut got = Vec::new();
    for _ in 0..3 {
        let g = grad(params[0].data()[0]);
        adam.step(&mut params, &[Tensor::scalar(g)]).unwrap();
        got.push(params[0].data()[0]);
    }
    let worst = got.iter().zip(&expected).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    Verdict::new(worst <= 1e-12, format!("θ after 3 steps {got:?}, oracle {expected:?}, max |Δ| {worst:.1e}"))
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let hidden = 768;
    let head = HeadModel::init(HeadConfig::new(4, 5), 4).unwrap();
    let mut tape = Tape::new();
    let bind = head.params().bind(&mut tape);
    let x = tape.leaf(random_tensor(&[hidden, 4], &mut rng));
    let pooled = head.pooled_on_tape(&mut tape, &bind, x).unwrap();
    let filters = tape.leaf(random_tensor(&[32, 3, 4], &mut rng));
    let maps = tape.conv2d_valid(x, filters).unwrap();
    let map_shape = tape.value(maps).shape().to_vec();
    let pooled_shape = tape.value(pooled).shape().to_vec();
    let shapes_ok = map_shape == [32, hidden - 2, 1] && pooled_shape == [32];

    // Attention over a padded input.
    let vocab = build_vocab(&["甲乙丙丁戊己庚辛"], 1).unwrap();
    let encoder = EncoderModel::init(EncoderConfig::toy(vocab.len(), 16), 4).unwrap();
    let seq = encode("甲乙丙丁戊", &vocab, 16);
    let keep = seq.attention_mask();
    let out = encoder.forward(std::slice::from_ref(&seq)).unwrap().pop().unwrap();
    let mut attn_dev: f64 = 0.0;
    let mut pad_mass: f64 = 0.0;
    for layer in &out.attention {
        for h in layer {
            let (rows, cols) = h.dims2().unwrap();
            for i in 0..rows {
                let mut s = 0.0;
                for j in 0..cols {
                    if keep[j] {
                        s += h.at2(i, j);
                    } else {
                        pad_mass = pad_mass.max(h.at2(i, j).abs());
                    }
                }
                attn_dev = attn_dev.max((s - 1.0).abs());
            }
        }
    }

    let mut softmax_dev: f64 = 0.0;
    for trial in 0..50 {
        let logits = scaled(random_tensor(&[4, 9], &mut rng), 10.0 * trial as f64);
        let mut t = Tape::new();
        let v = t.leaf(logits.clone());
        for axis in [0, 1] {
            let p = t.softmax(v, axis).unwrap();
            let p = t.value(p).clone();
            let (r, c) = p.dims2().unwrap();
            let (outer, inner) = if axis == 1 { (r, c) } else { (c, r) };
            for o in 0..outer {
                let s: f64 = (0..inner).map(|i| if axis == 1 { p.at2(o, i) } else { p.at2(i, o) }).sum();
                softmax_dev = softmax_dev.max((s - 1.0).abs());
            }
        }
        for row in 0..4 {
            let s: f64 = softmax_row(logits.row(row)).iter().sum();
            softmax_dev = softmax_dev.max((s - 1.0).abs());
        }
    }
    let probs: f64 = head.forward(&random_tensor(&[hidden, 4], &mut rng)).unwrap().iter().sum();
    softmax_dev = softmax_dev.max((probs - 1.0).abs());

    let pass = shapes_ok && attn_dev <= 1e-6 && pad_mass == 0.0 && softmax_dev <= 1e-9;
    Verdict::new(
        pass,
        format!(
            "{hidden}x4 input: maps {map_shape:?}, pooled {pooled_shape:?}; attention row sum max dev {attn_dev:.1e} \
             (PAD weight {pad_mass:.1e}); softmax sum max dev {softmax_dev:.1e}"
        ),
    )
}

// ---------------------------------------------------------------- 5

fn desk_bert_cnn() -> ClassifierSpec {
    ClassifierSpec::BertCnn(BertCnnSpec {
        encoder: EncoderConfig::toy(0, 32),
        n_top: 2,
        n_filters: 32,
        filter_rows: 3,
        max_len: 32,
        fit: FitOptions { lr: 1e-3, batch_size: 24, epochs: 20, seed: 0 },
        freeze_encoder: false,
        pretrained: None,
    })
}

fn desk_baseline(kind: BaselineKind) -> ClassifierSpec {
    ClassifierSpec::Baseline(BaselineConfig {
        embed_dim: 32,
        hidden: 32,
        max_len: 16,
        fit: FitOptions { lr: 3e-3, batch_size: 20, epochs: 20, seed: 0 },
        ..BaselineConfig::new(kind)
    })
}

fn criterion_5() -> (Verdict, Trained) {
    let records = generate_synthetic(&SyntheticSpec::default(), 7).unwrap();
    let taxonomy = LabelTaxonomy::build(&records).unwrap();
    let parts = split(&records, 0.9, 7).unwrap();
    let runs: [(&str, ClassifierSpec, f64); 3] = [
        ("bert-cnn", desk_bert_cnn(), 0.95),
        ("cnn", desk_baseline(BaselineKind::Cnn), 0.90),
        ("rnn", desk_baseline(BaselineKind::Rnn), 0.90),
    ];
    let mut pass = true;
    let mut parts_text = Vec::new();
    let mut models = Vec::new();
    for (name, spec, threshold) in runs {
        let t = Instant::now();
        let (model, _) = train_hierarchical(&parts.train, &taxonomy, &spec, 1).unwrap();
        let m = evaluate(&model, &parts.test).unwrap();
        pass &= m.acc_empirical >= threshold;
        parts_text.push(format!(
            "{name} acc_empirical {:.3} (≥ {threshold}, acc_l1 {:.3}, {:.0?})",
            m.acc_empirical,
            m.acc_l1,
            t.elapsed()
        ));
        models.push((name, model, m));
    }
    let detail = format!("{} test docs: {}", parts.test.len(), parts_text.join("; "));
    let trained = Trained {
        taxonomy,
        train: parts.train,
        test: parts.test,
        models,
    };
    (Verdict::new(pass, detail), trained)
}

// ---------------------------------------------------------------- 6

fn criterion_6(trained: &Trained) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let words: Vec<&str> = {
        let set: BTreeSet<&str> = trained.train.iter().flat_map(|r| r.abstract_text.split_whitespace()).collect();
        set.into_iter().collect()
    };
    let mut closure_violations = 0;
    let mut predictions = 0;
    for i in 0..1000 {
        let n = rng.random_range(1..12);
        let mut text: Vec<String> = (0..n).map(|_| words.choose(&mut rng).unwrap().to_string()).collect();
        if i % 10 == 0 {
            text.push("未见词".into());
        }
        let (_, model, _) = &trained.models[i % trained.models.len()];
        let (section, class) = predict_hierarchical(model, &text.join(" ")).unwrap();
        predictions += 1;
        let known = trained.taxonomy.sections().contains(&section);
        if !known || !trained.taxonomy.classes(section).contains(&class) {
            closure_violations += 1;
        }
    }

    // acc_empirical ≤ acc_l1 on the full test set and on random subsets.
    let mut evaluations = 0;
    let mut order_violations = 0;
    for (_, model, full) in &trained.models {
        let mut all = vec![full.clone()];
        for _ in 0..10 {
            let k = rng.random_range(1..=trained.test.len());
            let subset: Vec<PatentRecord> = trained.test.choose_multiple(&mut rng, k).cloned().collect();
            all.push(evaluate(model, &subset).unwrap());
        }
        for m in all {
            evaluations += 1;
            if m.acc_empirical > m.acc_l1 {
                order_violations += 1;
            }
        }
    }

    // Routing partitions the training set by true section.
    let groups = route_by_section(&trained.train);
    let routed: usize = groups.values().map(Vec::len).sum();
    let mut ids = BTreeSet::new();
    let mut misrouted = 0;
    for (s, rs) in &groups {
        for r in rs {
            ids.insert(r.id.as_str());
            if r.ipc.section() != *s {
                misrouted += 1;
            }
        }
    }
    let partition_ok = routed == trained.train.len() && ids.len() == trained.train.len() && misrouted == 0;

    let pass = closure_violations == 0 && order_violations == 0 && partition_ok;
    Verdict::new(
        pass,
        format!(
            "{predictions} random predictions, {closure_violations} outside the predicted section; \
             {evaluations} evaluations, {order_violations} with acc_empirical > acc_l1; \
             {} sections route {routed}/{} training records, {misrouted} misrouted",
            groups.len(),
            trained.train.len()
        ),
    )
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Verdict {
    let alphabet: String = (0..500u32).map(|i| char::from_u32(0x4E00 + i).unwrap()).collect();
    let vocab = build_vocab(&[alphabet.as_str()], 1).unwrap();

    let mut count_errors = 0;
    for n in 1..=150usize {
        let text: String = alphabet.chars().skip(n).take(n).collect();
        let seq = encode(&text, &vocab, 160);
        let item = mask_for_mlm(&seq, &vocab, 0.15, n as u64);
        let selected = item.selected_positions();
        // round half up of 15n/100, at least one.
        let expected = ((15 * n + 50) / 100).max(1);
        let specials_hit = selected.iter().any(|&p| [PAD, CLS, SEP].contains(&seq.ids[p]));
        if selected.len() != expected || mask_count(n, 0.15) != expected || specials_hit {
            count_errors += 1;
        }
    }

    let text: String = alphabet.chars().take(20).collect();
    let seq = encode(&text, &vocab, 32);
    let (mut masked, mut random, mut kept, mut total) = (0usize, 0usize, 0usize, 0usize);
    for seed in 0..10_000u64 {
        let item = mask_for_mlm(&seq, &vocab, 0.15, seed);
        for p in item.selected_positions() {
            total += 1;
            match item.input.ids[p] {
                MASK => masked += 1,
                id if id == seq.ids[p] => kept += 1,
                _ => random += 1,
            }
        }
    }
    let frac = |c: usize| c as f64 / total as f64;
    let (fm, fr, fk) = (frac(masked), frac(random), frac(kept));
    let mc_ok = (fm - 0.8).abs() <= 0.02 && (fr - 0.1).abs() <= 0.02 && (fk - 0.1).abs() <= 0.02;

    let records = generate_synthetic(&SyntheticSpec::default(), 7).unwrap();
    let texts: Vec<&str> = records.iter().map(|r| r.abstract_text.as_str()).collect();
    let vocab = build_vocab(&texts, 1).unwrap();
    let mut model = EncoderModel::init(EncoderConfig::toy(vocab.len(), 32), 70).unwrap();
    let probe: Vec<&str> = texts.iter().step_by(15).copied().collect();
    let batch = build_pretraining_items(&probe, &vocab, 32, 0.15, 71);
    let before = pretrain_loss(&model, &batch).unwrap().mlm_loss;
    let opts = PretrainOptions { steps: 200, batch_size: 16, lr: 1e-3, max_len: 32, mask_rate: 0.15, seed: 72 };
    let t = Instant::now();
    pretrain(&mut model, &texts, &vocab, &opts).unwrap();
    let after = pretrain_loss(&model, &batch).unwrap().mlm_loss;

    let pass = count_errors == 0 && mc_ok && after < before;
    Verdict::new(
        pass,
        format!(
            "mask counts for lengths 1..=150: {count_errors} wrong; {total} selections over 10000 seeds: \
             [MASK] {fm:.4}, random {fr:.4}, kept {fk:.4}; MLM loss on a fixed batch {before:.4} -> {after:.4} \
             after 200 steps ({:.0?})",
            t.elapsed()
        ),
    )
}

// ---------------------------------------------------------------- 8, 9

fn toy_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.cfg")
}

fn cli(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let mut argv = vec!["bertcnn"];
    argv.extend_from_slice(args);
    let code = cli::run_with(argv, &mut out);
    (code, String::from_utf8(out).unwrap())
}

fn criterion_8() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    let cfg = toy_config();
    let cfg = cfg.to_str().unwrap();
    let corpus_s = corpus.to_str().unwrap();
    let synth = ["--set", "synth.sections=2", "--set", "synth.docs_per_class=20"];
    let mut args = vec!["synth", "--config", cfg, "--output", corpus_s];
    args.extend(synth);
    let (code, _) = cli(&args);
    if code != 0 {
        return Verdict::new(false, format!("synth exited with {code}"));
    }
    let out = dir.path().join("sweep");
    let t = Instant::now();
    let (code, _) = cli(&[
        "layer-sweep",
        "--config",
        cfg,
        "--set",
        "encoder.n_layers=6",
        "--set",
        "epochs=2",
        "--corpus",
        corpus_s,
        "--out",
        out.to_str().unwrap(),
    ]);
    if code != 0 {
        return Verdict::new(false, format!("layer-sweep exited with {code}"));
    }
    let text = std::fs::read_to_string(out.join("layer_sweep.jsonl")).unwrap();
    let rows: Vec<cli::SweepRow> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    let in_range = rows.iter().all(|r| (0.0..=1.0).contains(&r.accuracy));
    let pass = ns == [1, 2, 3, 4, 5, 6] && in_range;
    let acc: Vec<String> = rows.iter().map(|r| format!("{}:{:.3}", r.n, r.accuracy)).collect();
    Verdict::new(pass, format!("{} rows {{n: accuracy}} = [{}] ({:.0?})", rows.len(), acc.join(", "), t.elapsed()))
}

/// Every file under `root`, keyed by relative path.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    files
}

/// synth → pretrain → train-hier → eval → train-flat → predict in `root`.
fn pipeline(root: &Path) -> (Vec<i32>, String) {
    let cfg = toy_config();
    let cfg = cfg.to_str().unwrap();
    let p = |rel: &str| root.join(rel).to_str().unwrap().to_string();
    let small = |extra: &[&str]| -> Vec<String> {
        let mut v: Vec<String> = ["--config", cfg, "--set", "synth.sections=3", "--set", "synth.docs_per_class=12", "--set", "epochs=2"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        v.extend(extra.iter().map(|s| s.to_string()));
        v
    };
    let steps: Vec<Vec<String>> = vec![
        [vec!["synth".to_string()], small(&["--output", &p("corpus.jsonl")])].concat(),
        [vec!["pretrain".to_string()], small(&["--set", "pretrain.steps=10", "--corpus", &p("corpus.jsonl"), "--out", &p("pre")])].concat(),
        [vec!["train-hier".to_string()], small(&["--corpus", &p("corpus.jsonl"), "--out", &p("hier")])].concat(),
        vec!["eval".into(), "--model".into(), p("hier")],
        [vec!["train-flat".to_string()], small(&["--set", "model=rnn", "--corpus", &p("corpus.jsonl"), "--out", &p("flat")])].concat(),
        vec!["predict".into(), "--model".into(), p("hier"), "--text".into(), "甲乙 丙丁".into()],
    ];
    let mut codes = Vec::new();
    let mut stdout = String::new();
    for s in &steps {
        let args: Vec<&str> = s.iter().map(String::as_str).collect();
        let (code, out) = cli(&args);
        codes.push(code);
        stdout.push_str(&out);
    }
    (codes, stdout)
}

fn criterion_9() -> Verdict {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let t = Instant::now();
    let (codes_a, out_a) = pipeline(a.path());
    let (codes_b, out_b) = pipeline(b.path());
    if codes_a.iter().chain(&codes_b).any(|&c| c != 0) {
        return Verdict::new(false, format!("exit codes {codes_a:?} / {codes_b:?}"));
    }
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    let differing: Vec<String> = sa
        .keys()
        .chain(sb.keys())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter(|k| sa.get(*k) != sb.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let pass = differing.is_empty() && out_a == out_b;
    Verdict::new(
        pass,
        format!(
            "6 commands run twice: {} output files, {} differing {:?}, stdout {} ({:.0?})",
            sa.len(),
            differing.len(),
            differing,
            if out_a == out_b { "identical" } else { "differs" },
            t.elapsed()
        ),
    )
}
