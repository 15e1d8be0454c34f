//! BERT-style sub-encoder: embeddings, post-norm layers, CLS pooling and
//! a tanh pooler.

mod config;
mod encoder;
mod outputs;
mod weights;

pub use config::{EncoderConfig, INIT_STD, LAYER_NORM_EPS};
pub use encoder::{
    cls_rows, embed, encode, encoder_layer, post_attention, Dropout, EncoderTrace, EncoderVars,
    LayerTrace, LayerVars,
};
pub use outputs::{
    forward, masked_mean, pooling_variants, self_attention, EmbeddingOutputs, PoolingVariants,
};
pub use weights::{EncoderWeights, LayerWeights};
