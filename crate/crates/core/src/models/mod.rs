//! Encoder, aggregator and classifier networks built on [`crate::engine`].

mod backbone;
mod checkpoint;
mod classifier;
mod config;

pub use backbone::{
    aggregator_causal_conv, aggregator_gru, encoder_enhanced, encoder_original, init_params, pred_name, ModelParams,
};
pub use checkpoint::Container;
pub use classifier::{ClassifierParams, Head, MLP_HIDDEN};
pub use config::{
    AggregatorVariant, EncoderVariant, ModelConfig, TaskVariant, CAUSAL_BLOCK_CHOICES, CAUSAL_KERNELS, CONTEXT_DIM,
    ENHANCED_FILTERS, INPUT_CHANNELS, ORIGINAL_FILTERS, ORIGINAL_KERNEL_CHOICES,
};
