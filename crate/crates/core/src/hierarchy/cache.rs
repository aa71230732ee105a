//! Hierarchy cache file.
//!
//! ```text
//! "SPTH" u32 version=1
//! u64 checksum, u32 n_factors, f64 factors.., u32 n_lengths, u32 lengths..
//! u32 n_levels
//! per level: u32 V, u32 F, F×3 u32 faces, V×3 f32 reference,
//!            u32 spiral length, V×length u32 spiral indices
//! per step:  down operator, up operator
//! operator:  u32 rows, u32 cols, u32 nnz, nnz × (u32 row, u32 col, f64 weight)
//! ```

use std::path::Path;

use super::{HierarchyLevel, MeshHierarchy, SamplingKind, SamplingOperator, SpiralIndexTable};
use crate::binio::{Reader, Writer};
use crate::error::{read_file, write_file, FormatError, Result};
use crate::mesh::{MeshFrame, TemplateTopology};

const MAGIC: &[u8; 4] = b"SPTH";
const VERSION: u32 = 1;

/// What a cached hierarchy was built from.
#[derive(Clone, Debug, PartialEq)]
pub struct HierarchyKey {
    pub checksum: u64,
    pub factors: Vec<f64>,
    pub spiral_lengths: Vec<usize>,
}

fn put_operator(w: &mut Writer, op: &SamplingOperator) {
    w.len_u32(op.rows).len_u32(op.cols).len_u32(op.entries.len());
    for &(r, c, x) in &op.entries {
        w.u32(r).u32(c).f64(x);
    }
}

fn get_operator(r: &mut Reader, kind: SamplingKind) -> Result<SamplingOperator> {
    let rows = r.usize()?;
    let cols = r.usize()?;
    let nnz = r.usize()?;
    r.require(nnz * 16)?;
    let mut entries = Vec::with_capacity(nnz);
    for _ in 0..nnz {
        let (row, col, x) = (r.u32()?, r.u32()?, r.f64()?);
        if row as usize >= rows || col as usize >= cols {
            return Err(FormatError::Malformed(format!("operator entry ({row}, {col}) outside {rows}×{cols}")).into());
        }
        entries.push((row, col, x));
    }
    Ok(SamplingOperator {
        kind,
        rows,
        cols,
        entries,
    })
}

pub fn encode_hierarchy(h: &MeshHierarchy) -> Vec<u8> {
    let key = h.key();
    let mut w = Writer::new();
    w.bytes(MAGIC).u32(VERSION).u64(key.checksum).len_u32(key.factors.len());
    for &f in &key.factors {
        w.f64(f);
    }
    w.len_u32(key.spiral_lengths.len());
    for &l in &key.spiral_lengths {
        w.len_u32(l);
    }
    w.len_u32(h.levels.len());
    for level in &h.levels {
        let faces = level.topology.faces();
        w.len_u32(level.vertex_count()).len_u32(faces.len());
        for f in faces {
            w.u32(f[0]).u32(f[1]).u32(f[2]);
        }
        for x in level.reference.flat() {
            w.f32(x);
        }
        w.len_u32(level.spiral.length());
        for &i in level.spiral.indices() {
            w.u32(i);
        }
    }
    for (down, up) in h.down.iter().zip(&h.up) {
        put_operator(&mut w, down);
        put_operator(&mut w, up);
    }
    w.finish()
}

pub fn decode_hierarchy(bytes: &[u8]) -> Result<MeshHierarchy> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let checksum = r.u64()?;
    let n_factors = r.usize()?;
    let factors = (0..n_factors).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
    let n_lengths = r.usize()?;
    let spiral_lengths = (0..n_lengths).map(|_| r.usize()).collect::<Result<Vec<_>, _>>()?;
    let n_levels = r.usize()?;
    if n_levels != n_factors + 1 || n_lengths != n_levels {
        return Err(FormatError::Malformed(format!(
            "{n_levels} levels for {n_factors} factors and {n_lengths} spiral lengths"
        ))
        .into());
    }
    let mut levels = Vec::with_capacity(n_levels);
    for _ in 0..n_levels {
        let v = r.usize()?;
        let nf = r.usize()?;
        r.require(nf * 12)?;
        let mut faces = Vec::with_capacity(nf);
        for _ in 0..nf {
            faces.push([r.u32()?, r.u32()?, r.u32()?]);
        }
        let coords = r.f32_vec(v * 3)?;
        let reference = MeshFrame::new(coords.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect());
        let length = r.usize()?;
        if length == 0 {
            return Err(FormatError::Malformed("zero spiral length".into()).into());
        }
        r.require(v * length * 4)?;
        let indices = (0..v * length).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        levels.push(HierarchyLevel {
            topology: TemplateTopology::new(v, faces)?,
            reference,
            spiral: SpiralIndexTable::from_rows(length, indices),
        });
    }
    let mut down = Vec::with_capacity(n_factors);
    let mut up = Vec::with_capacity(n_factors);
    for _ in 0..n_factors {
        down.push(get_operator(&mut r, SamplingKind::Down)?);
        up.push(get_operator(&mut r, SamplingKind::Up)?);
    }
    r.finish()?;
    let found = levels[0].topology.checksum();
    if found != checksum {
        return Err(FormatError::Checksum {
            expected: checksum,
            found,
        }
        .into());
    }
    Ok(MeshHierarchy {
        levels,
        down,
        up,
        factors,
        spiral_lengths,
    })
}

pub fn save_hierarchy(path: &Path, h: &MeshHierarchy) -> Result<()> {
    write_file(path, &encode_hierarchy(h))
}

pub fn load_hierarchy(path: &Path) -> Result<MeshHierarchy> {
    decode_hierarchy(&read_file(path)?)
}
