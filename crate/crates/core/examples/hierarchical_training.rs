//! Two-level training on a synthetic keyword corpus with each classifier family.
//!
//! cargo run --release --example hierarchical_training [bert-cnn|cnn|rnn]

use bertcnn::baselines::{BaselineConfig, BaselineKind};
use bertcnn::classifier::ClassifierSpec;
use bertcnn::cnn_head::BertCnnSpec;
use bertcnn::corpus::{generate_synthetic, split, LabelTaxonomy, SyntheticSpec};
use bertcnn::encoder::EncoderConfig;
use bertcnn::hierarchy::{evaluate, train_hierarchical};
use bertcnn::train::FitOptions;

fn main() -> bertcnn::Result<()> {
    let kind = std::env::args().nth(1).unwrap_or_else(|| "bert-cnn".into());
    let records = generate_synthetic(&SyntheticSpec::default(), 7)?;
    let taxonomy = LabelTaxonomy::build(&records)?;
    let parts = split(&records, 0.9, 7)?;
    let fit = FitOptions { lr: 1e-3, batch_size: 24, epochs: 20, seed: 0 };
    let spec = match kind.as_str() {
        "cnn" | "rnn" => {
            let k = if kind == "cnn" { BaselineKind::Cnn } else { BaselineKind::Rnn };
            ClassifierSpec::Baseline(BaselineConfig {
                embed_dim: 32,
                hidden: 32,
                max_len: 16,
                fit: FitOptions { batch_size: 20, lr: 3e-3, ..fit },
                ..BaselineConfig::new(k)
            })
        }
        _ => ClassifierSpec::BertCnn(BertCnnSpec {
            encoder: EncoderConfig::toy(0, 32),
            n_top: 2,
            n_filters: 32,
            filter_rows: 3,
            max_len: 32,
            fit,
            freeze_encoder: false,
            pretrained: None,
        }),
    };
    let t = std::time::Instant::now();
    let (model, log) = train_hierarchical(&parts.train, &taxonomy, &spec, 1)?;
    let m = evaluate(&model, &parts.test)?;
    if let Some(last) = log.l1.last() {
        println!("L1 final epoch: loss {:.4} accuracy {:.3}", last.loss, last.accuracy);
    }
    println!(
        "{kind}: acc_l1 {:.3}  acc_l2_avg {:.3}  acc_estimated {:.3}  acc_empirical {:.3}  ({:.1?})",
        m.acc_l1, m.acc_l2_avg, m.acc_estimated, m.acc_empirical, t.elapsed()
    );
    Ok(())
}
