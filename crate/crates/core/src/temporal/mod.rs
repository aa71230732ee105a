//! Temporal classifiers over per-frame embeddings.
//!
//! The main model projects each token to `d_model`, adds a positional
//! encoding, runs three pre-norm multi-head self-attention layers, pools the
//! tokens and applies a final dense layer. Tokens are rows throughout, so
//! attention scores are `Q·Kᵀ/√d_k`. The MLP, LSTM and CNN heads consume the
//! same embeddings for comparison.

mod attention;
mod model;
mod train;

pub use attention::{
    attention_weights, attention_weights_node, qkv_project, qkv_project_node, self_attention, self_attention_node,
    SCORE_TAG,
};
pub use model::{
    argmax, attention_block, sinusoidal_encoding, stack_tokens, Classifier, ClassifierConfig, HeadKind,
    MemoryProfile, PeMode, Pooling, Prediction,
};
pub use train::{
    confusion_csv, confusion_matrix, evaluate, metrics_csv, train_classifier, write_confusion_csv, write_metrics_csv,
    ClassifierTrainConfig, EpochMetrics, Evaluation,
};

pub use crate::spae::EmbeddingSequence;
