//! Encoder forward pass, top-layer sentence matrix and attention export.
//!
//! cargo run --example encoder_attention [output.json]

use bertcnn::encoder::{export_attention, extract_top_layers, EncoderConfig, EncoderModel};
use bertcnn::tokenizer::{build_vocab, encode_pair};

fn main() -> bertcnn::Result<()> {
    let a = "本实用新型公开了一种固体绝缘开关柜结构。";
    let b = "它包括隔离开关单元、接地装置和隔离插座装置。";
    let vocab = build_vocab(&[a, b], 1)?;
    let config = EncoderConfig::toy(vocab.len(), 64);
    println!("toy encoder: {} parameters", config.param_count());
    let model = EncoderModel::init(config, 0)?;

    let len = a.chars().count() + b.chars().count() + 3;
    let seq = encode_pair(a, b, &vocab, len);
    let out = model.forward(std::slice::from_ref(&seq))?.pop().expect("one sequence");
    let top = extract_top_layers(&out, 2)?;
    println!("layer states {:?}, sentence matrix {:?}", out.layer_states[0].shape(), top.shape());

    let dump = export_attention(&model, &seq, &vocab)?;
    let first = &dump.layers[0].heads[0].weights[0];
    let (j, w) = first.iter().enumerate().fold((0, 0.0), |m, (j, &w)| if w > m.1 { (j, w) } else { m });
    println!("layer 1 head 1: [CLS] attends most to {:?} ({w:.3})", dump.tokens[j]);
    if let Some(path) = std::env::args().nth(1) {
        dump.save(std::path::Path::new(&path))?;
        println!("wrote {path}");
    }
    Ok(())
}
