//! Transformer-encoder classifier with analytic gradients, low-rank adapters,
//! AdamW, a warmup schedule and gradient accumulation.

pub mod checkpoint;
pub mod lora;
pub mod model;
pub mod optim;
pub mod params;
pub mod schedule;
pub mod train;

pub use checkpoint::{encode_dataset, encode_text, encoder_vocab_size, EncoderCheckpoint, EncoderClassifier};
pub use lora::{merge_adapter, AdapterSet, AdapterSlot, AdapterTarget, LoraAdapter};
pub use model::{
    attention, attention_weights, encoder_forward, evaluate, layer_norm, logits, loss_and_grad, multi_head_attention,
    BatchStats, EncodedExample, Gradients, TrainMode,
};
pub use optim::{adamw_step, AdamWConfig, OptimizerState};
pub use params::{EncoderConfig, EncoderParams, LayerParams, TensorKind};
pub use schedule::{lr_at, warmup_steps};
pub use train::{train_loop, write_trace_csv, EpochSummary, TraceRow, TrainConfig, TrainReport};
