//! Fixed mesh connectivity, per-frame coordinates, and everything needed to
//! get mesh sequences on and off disk.

mod dataset;
mod frame;
mod io;
mod shapes;
mod synth;
mod topology;

use thiserror::Error;

pub use dataset::{split_by_subject, DatasetSplit};
pub use frame::{
    denormalize_frames, normalize_frames, uniform_sample_frames, uniform_sample_indices, MeshFrame,
    MeshSequence, NormStats,
};
pub use io::{
    decode_sequence, encode_sequence, load_sequence, load_template, parse_template, read_manifest,
    save_sequence, write_manifest, write_template, ManifestRow,
};
pub use shapes::{icosphere, tetrahedron};
pub use synth::{synth_generate, SynthClass, SYNTH_CLASSES};
pub use topology::TemplateTopology;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("face {face} has {count} vertices; only triangles are supported")]
    NonTriangle { face: usize, count: usize },
    #[error("face {face} references vertex {index}, but the mesh has {vertex_count} vertices")]
    IndexOutOfRange {
        face: usize,
        index: usize,
        vertex_count: usize,
    },
    #[error("face {face} repeats a vertex")]
    DegenerateFace { face: usize },
    #[error("non-manifold mesh: {0}")]
    NonManifold(String),
    #[error("mesh is not connected: {reached} of {vertex_count} vertices reachable from vertex 0")]
    Disconnected { reached: usize, vertex_count: usize },
    #[error("frame has {got} vertices, topology has {expected}")]
    VertexCount { expected: usize, got: usize },
    #[error("non-finite coordinate in frame {frame}")]
    NonFinite { frame: usize },
    #[error("degenerate input: all vertices coincide")]
    DegenerateScale,
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("cannot sample {requested} frames from a sequence of {length}")]
    SampleCount { requested: usize, length: usize },
    #[error("unknown synthetic class {class_id} (available: 0..{available})")]
    UnknownClass { class_id: u32, available: usize },
    #[error("split fraction {0} outside (0, 1)")]
    SplitFraction(f64),
}
