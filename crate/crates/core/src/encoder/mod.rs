//! Transformer encoder, pretraining objectives and attention export.

mod attention;
mod config;
mod model;
mod pretrain;

pub use attention::{export_attention, AttentionDump, HeadAttention, LayerAttention};
pub use config::{EncoderConfig, Pooling, INIT_STD, LAYER_NORM_EPS, SEGMENT_TYPES};
pub use model::{extract_top_layers, stack_top_layers, EncoderModel, EncoderOutput, TapeEncoding};
pub use pretrain::{
    build_pretraining_items, pretrain, pretrain_loss, pretrain_step, pretraining_losses_on_tape, split_sentences,
    PretrainLosses, PretrainOptions, PretrainRecord,
};
