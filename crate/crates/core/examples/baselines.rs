//! Word-level CNN and GRU baselines on the synthetic section labels.
//!
//! cargo run --release --example baselines

use bertcnn::baselines::{train_baseline, BaselineConfig, BaselineKind};
use bertcnn::classifier::TextClassifier;
use bertcnn::corpus::{generate_synthetic, split, SyntheticSpec};
use bertcnn::train::FitOptions;

fn main() -> bertcnn::Result<()> {
    let spec = SyntheticSpec { sections: 4, classes_per_section: 1, docs_per_class: 50, ..Default::default() };
    let records = generate_synthetic(&spec, 5)?;
    let parts = split(&records, 0.9, 5)?;
    let label = |c: char| (c as u8 - b'A') as usize;
    let train: Vec<(&str, usize)> = parts.train.iter().map(|r| (r.abstract_text.as_str(), label(r.ipc.section()))).collect();
    let test: Vec<(&str, usize)> = parts.test.iter().map(|r| (r.abstract_text.as_str(), label(r.ipc.section()))).collect();

    for kind in [BaselineKind::Cnn, BaselineKind::Rnn] {
        let cfg = BaselineConfig {
            embed_dim: 32,
            hidden: 32,
            max_len: 16,
            fit: FitOptions { lr: 3e-3, batch_size: 20, epochs: 15, seed: 0 },
            ..BaselineConfig::new(kind)
        };
        let (clf, _) = train_baseline(&cfg, &train, None, 4, 1)?;
        let correct = test.iter().filter(|(t, y)| clf.predict_label(t).ok() == Some(*y)).count();
        println!("{kind:?}: {correct}/{} test documents", test.len());
    }
    Ok(())
}
