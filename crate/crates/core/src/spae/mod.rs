//! Spiral convolutional mesh autoencoder.
//!
//! The encoder runs four spiral convolution + ELU + down-sampling stages
//! (widths 16, 32, 64, 128) and a dense layer to a `C`-dimensional code.
//! The decoder mirrors it with five spiral convolutions (128, 64, 32, 32, 16),
//! an up-sampling step before each of the first four, and a final linear
//! spiral projection to xyz.

mod conv;
mod embed;
mod model;
mod train;

pub use conv::{spiral_conv, spiral_conv_node, spiral_gather_index, SpiralConvLayer};
pub use embed::{
    decode_embeddings, encode_dataset, encode_embeddings, load_embeddings, save_embeddings, EmbeddingSequence,
};
pub use model::{
    frames_tensor, tensor_frame, Spae, DECODER_LEVELS, DECODER_WIDTHS, ENCODER_DEPTH, ENCODER_WIDTHS,
};
pub use train::{reconstruction_error, spae_checkpoint_meta, train_spae, SpaeReport, SpaeTrainConfig};
