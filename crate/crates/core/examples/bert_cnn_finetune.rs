//! Flat BERT-CNN fine-tuning on a two-class keyword corpus.
//!
//! cargo run --release --example bert_cnn_finetune

use bertcnn::cnn_head::BertCnnSpec;
use bertcnn::corpus::{generate_synthetic, split, SyntheticSpec};
use bertcnn::encoder::EncoderConfig;
use bertcnn::train::{FitOptions, Split};

fn main() -> bertcnn::Result<()> {
    let spec = SyntheticSpec { sections: 1, classes_per_section: 2, docs_per_class: 40, ..Default::default() };
    let records = generate_synthetic(&spec, 3)?;
    let parts = split(&records, 0.9, 3)?;
    let pairs = |rs: &[bertcnn::corpus::PatentRecord]| -> Vec<(String, usize)> {
        rs.iter().map(|r| (r.abstract_text.clone(), r.ipc.class_num().parse::<usize>().unwrap() - 1)).collect()
    };
    let (train, test) = (pairs(&parts.train), pairs(&parts.test));
    let train: Vec<(&str, usize)> = train.iter().map(|(t, y)| (t.as_str(), *y)).collect();
    let test: Vec<(&str, usize)> = test.iter().map(|(t, y)| (t.as_str(), *y)).collect();

    let model = BertCnnSpec {
        encoder: EncoderConfig::toy(0, 32),
        n_top: 2,
        n_filters: 32,
        filter_rows: 3,
        max_len: 32,
        fit: FitOptions { lr: 1e-3, batch_size: 24, epochs: 20, seed: 0 },
        freeze_encoder: false,
        pretrained: None,
    };
    let (clf, metrics) = model.train(&train, Some(&test), 2, 4)?;
    for m in metrics.iter().filter(|m| m.split == Split::Eval).step_by(4) {
        println!("epoch {:2}: test loss {:.4} accuracy {:.3}", m.epoch, m.loss, m.accuracy);
    }
    let (label, p) = clf.predict(test[0].0)?;
    println!("{:?} -> class {label} (p = {:.3}), truth {}", test[0].0, p[label], test[0].1);
    println!("sentence matrix {:?}", clf.layer_matrix(test[0].0)?.shape());
    Ok(())
}
