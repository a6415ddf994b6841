//! Character vocabulary, single and paired encoding, and MLM masking.
//!
//! cargo run --example tokenizer

use bertcnn::tokenizer::{build_vocab, decode, encode, encode_pair, mask_for_mlm, tokens_of};

fn main() -> bertcnn::Result<()> {
    let a = "本实用新型公开了一种固体绝缘开关柜结构。";
    let b = "它包括隔离开关单元、接地装置和隔离插座装置。";
    let vocab = build_vocab(&[a, b], 1)?;
    println!("vocabulary: {} entries", vocab.len());

    let single = encode(a, &vocab, 16);
    println!("encode(A, 16): {:?}", tokens_of(&single, &vocab));

    let pair = encode_pair(a, b, &vocab, 32);
    println!("encode_pair(A, B, 32): {}", decode(&pair, &vocab));
    println!("segments: {:?}", pair.segment_ids);

    let item = mask_for_mlm(&pair, &vocab, 0.15, 1);
    println!("masked: {:?}", tokens_of(&item.input, &vocab));
    println!("selected positions: {:?}", item.selected_positions());
    Ok(())
}
