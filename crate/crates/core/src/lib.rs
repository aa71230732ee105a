//! Action recognition on fixed-topology mesh sequences.
//!
//! The pipeline has two learned stages. A spiral-convolution autoencoder
//! ([`spae`]) compresses every frame of a sequence into a fixed-size latent
//! code, and a small temporal model ([`temporal`]) classifies the sequence of
//! codes. Both run on the reverse-mode engine in [`tensor`]. Mesh
//! connectivity, frame storage and the synthetic data generator live in
//! [`mesh`]; the multi-resolution spiral tables and sampling operators the
//! autoencoder consumes live in [`hierarchy`].

pub mod binio;
pub mod error;
pub mod hierarchy;
pub mod mesh;
pub mod seed;
pub mod spae;
pub mod temporal;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
