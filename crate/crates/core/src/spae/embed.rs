//! Per-frame embeddings of whole sequences and the embedding cache file.
//!
//! ```text
//! "SPTE" u32 version=1, u32 C, u32 sequence_count
//! per sequence: u32 L, u32 label (0xFFFFFFFF = unlabeled), L×C f32
//! ```

use std::path::Path;

use rayon::prelude::*;

use super::model::Spae;
use crate::binio::{Reader, Writer};
use crate::error::{read_file, write_file, FormatError, Result};
use crate::mesh::{uniform_sample_indices, MeshError, MeshFrame, MeshSequence, NormStats};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"SPTE";
const VERSION: u32 = 1;
const UNLABELED: u32 = u32::MAX;

/// The token sequence of one mesh sequence: row `t` is the code of frame `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSequence {
    pub tokens: Tensor<f32>,
    pub label: Option<u32>,
}

impl EmbeddingSequence {
    pub fn new(tokens: Tensor<f32>, label: Option<u32>) -> Result<Self> {
        if !tokens.is_matrix() || tokens.rows() == 0 || tokens.cols() == 0 {
            return Err(FormatError::Malformed(format!("token matrix must be L × C with L, C ≥ 1, got {:?}", tokens.shape())).into());
        }
        if !tokens.is_finite() {
            return Err(FormatError::Malformed("non-finite embedding".into()).into());
        }
        Ok(Self { tokens, label })
    }

    pub fn len(&self) -> usize {
        self.tokens.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.tokens.cols()
    }

    /// Tokens in reverse temporal order.
    pub fn reversed(&self) -> Self {
        let rows: Vec<f32> = (0..self.len()).rev().flat_map(|r| self.tokens.row(r).to_vec()).collect();
        Self {
            tokens: Tensor::matrix(self.len(), self.width(), rows).expect("same shape"),
            label: self.label,
        }
    }

    /// `n` tokens at uniformly spaced positions, in order.
    pub fn uniform_sample(&self, n: usize) -> Result<Self> {
        let idx = uniform_sample_indices(self.len(), n)?;
        let rows: Vec<f32> = idx.iter().flat_map(|&r| self.tokens.row(r).to_vec()).collect();
        Ok(Self {
            tokens: Tensor::matrix(n, self.width(), rows)?,
            label: self.label,
        })
    }

    /// Tokens reordered so that row `i` is old row `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.len());
        let rows: Vec<f32> = perm.iter().flat_map(|&r| self.tokens.row(r).to_vec()).collect();
        Self {
            tokens: Tensor::matrix(self.len(), self.width(), rows).expect("same shape"),
            label: self.label,
        }
    }
}

/// Encodes every frame of every sequence after applying `norm`. Sequences
/// are processed in parallel on the current rayon pool; each sequence's
/// frames form one batch, and results do not depend on the thread count.
pub fn encode_dataset(sequences: &[MeshSequence], model: &Spae<f32>, norm: &NormStats) -> Result<Vec<EmbeddingSequence>> {
    let expected = model.hierarchy().levels[0].topology.checksum();
    for seq in sequences {
        if seq.topology_id != expected {
            return Err(FormatError::Checksum {
                expected,
                found: seq.topology_id,
            }
            .into());
        }
        if seq.vertex_count() != model.vertex_count() {
            return Err(MeshError::VertexCount {
                expected: model.vertex_count(),
                got: seq.vertex_count(),
            }
            .into());
        }
    }
    sequences
        .par_iter()
        .map(|seq| {
            let frames: Vec<MeshFrame> = seq.frames.iter().map(|f| norm.apply(f)).collect();
            let refs: Vec<&MeshFrame> = frames.iter().collect();
            let tokens = model.encode_frames(&refs)?;
            EmbeddingSequence::new(tokens, seq.label)
        })
        .collect()
}

pub fn encode_embeddings(seqs: &[EmbeddingSequence]) -> Result<Vec<u8>> {
    let c = seqs.first().map_or(0, EmbeddingSequence::width);
    let mut w = Writer::new();
    w.bytes(MAGIC).u32(VERSION).len_u32(c).len_u32(seqs.len());
    for s in seqs {
        if s.width() != c {
            return Err(FormatError::Malformed(format!("mixed embedding widths {c} and {}", s.width())).into());
        }
        w.len_u32(s.len()).u32(s.label.unwrap_or(UNLABELED));
        for &x in s.tokens.data() {
            w.f32(x);
        }
    }
    Ok(w.finish())
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<Vec<EmbeddingSequence>> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let c = r.usize()?;
    let count = r.usize()?;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let l = r.usize()?;
        let label = r.u32()?;
        let data = r.f32_vec(l * c)?;
        let label = (label != UNLABELED).then_some(label);
        out.push(EmbeddingSequence::new(Tensor::matrix(l, c, data)?, label)?);
    }
    r.finish()?;
    Ok(out)
}

pub fn save_embeddings(path: &Path, seqs: &[EmbeddingSequence]) -> Result<()> {
    write_file(path, &encode_embeddings(seqs)?)
}

pub fn load_embeddings(path: &Path) -> Result<Vec<EmbeddingSequence>> {
    decode_embeddings(&read_file(path)?)
}
