//! Masked-LM and next-sentence pretraining of a toy encoder.
//!
//! cargo run --release --example pretraining

use bertcnn::corpus::{generate_synthetic, SyntheticSpec};
use bertcnn::encoder::{build_pretraining_items, pretrain, pretrain_loss, EncoderConfig, EncoderModel, PretrainOptions};
use bertcnn::tokenizer::build_vocab;

fn main() -> bertcnn::Result<()> {
    let records = generate_synthetic(&SyntheticSpec::default(), 3)?;
    let texts: Vec<&str> = records.iter().map(|r| r.abstract_text.as_str()).collect();
    let vocab = build_vocab(&texts, 1)?;
    let mut model = EncoderModel::init(EncoderConfig::toy(vocab.len(), 32), 0)?;

    let probe = build_pretraining_items(&texts[..48], &vocab, 32, 0.15, 99);
    let before = pretrain_loss(&model, &probe)?;
    let opts = PretrainOptions {
        steps: 200,
        batch_size: 16,
        lr: 1e-3,
        max_len: 32,
        mask_rate: 0.15,
        seed: 1,
    };
    let log = pretrain(&mut model, &texts, &vocab, &opts)?;
    for r in log.iter().step_by(40) {
        println!("step {:3}: mlm {:.4} nsp {:.4}", r.step, r.mlm_loss, r.nsp_loss);
    }
    let after = pretrain_loss(&model, &probe)?;
    println!("held-out batch: mlm {:.4} -> {:.4}, nsp {:.4} -> {:.4}", before.mlm_loss, after.mlm_loss, before.nsp_loss, after.nsp_loss);
    Ok(())
}
