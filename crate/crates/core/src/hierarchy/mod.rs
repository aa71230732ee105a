//! Multi-resolution structure consumed by the autoencoder: one spiral table
//! per level and sparse sampling operators between consecutive levels.

mod cache;
mod qem;
mod sampling;
mod spiral;

use thiserror::Error;

use crate::mesh::{MeshError, MeshFrame, TemplateTopology};

pub use cache::{decode_hierarchy, encode_hierarchy, load_hierarchy, save_hierarchy, HierarchyKey};
pub use qem::{decimation_target, qem_decimate, Decimation};
pub use sampling::{apply_sampling, SamplingKind, SamplingOperator};
pub use spiral::{build_spiral_table, SpiralIndexTable, SPIRAL_PAD};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HierarchyError {
    #[error("decimation factor {factor} cannot reduce {vertices} vertices (target {target}; the minimum mesh has 4)")]
    NoReduction {
        factor: f64,
        vertices: usize,
        target: usize,
    },
    #[error("no legal edge collapse left at {vertices} vertices (target {target})")]
    NoLegalCollapse { vertices: usize, target: usize },
    #[error("spiral length must be at least 1")]
    SpiralLength,
    #[error("vertex {0} has no neighbors; spiral rings cannot be enumerated")]
    IsolatedVertex(usize),
    #[error("expected {expected} spiral lengths (or one), got {got}")]
    SpiralLengthCount { expected: usize, got: usize },
    #[error("at least one decimation factor is required")]
    NoFactors,
    #[error("features have {got} rows, operator expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// One resolution level.
#[derive(Clone, Debug, PartialEq)]
pub struct HierarchyLevel {
    pub topology: TemplateTopology,
    pub reference: MeshFrame,
    pub spiral: SpiralIndexTable,
}

impl HierarchyLevel {
    pub fn vertex_count(&self) -> usize {
        self.topology.vertex_count()
    }
}

/// Level 0 is the input topology; `down[i]` maps level `i` to `i+1` and
/// `up[i]` maps `i+1` back to `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeshHierarchy {
    pub levels: Vec<HierarchyLevel>,
    pub down: Vec<SamplingOperator>,
    pub up: Vec<SamplingOperator>,
    pub factors: Vec<f64>,
    pub spiral_lengths: Vec<usize>,
}

impl MeshHierarchy {
    pub fn depth(&self) -> usize {
        self.down.len()
    }

    pub fn level_sizes(&self) -> Vec<usize> {
        self.levels.iter().map(HierarchyLevel::vertex_count).collect()
    }

    pub fn key(&self) -> HierarchyKey {
        HierarchyKey {
            checksum: self.levels[0].topology.checksum(),
            factors: self.factors.clone(),
            spiral_lengths: self.spiral_lengths.clone(),
        }
    }
}

/// Decimates once per factor and builds a spiral table on every level.
/// `spiral_lengths` has one entry per level (`factors.len() + 1`) or a
/// single entry used everywhere.
pub fn build_hierarchy(
    topology: &TemplateTopology,
    reference: &MeshFrame,
    factors: &[f64],
    spiral_lengths: &[usize],
) -> Result<MeshHierarchy, HierarchyError> {
    if factors.is_empty() {
        return Err(HierarchyError::NoFactors);
    }
    let n_levels = factors.len() + 1;
    let lengths: Vec<usize> = match spiral_lengths.len() {
        1 => vec![spiral_lengths[0]; n_levels],
        n if n == n_levels => spiral_lengths.to_vec(),
        n => {
            return Err(HierarchyError::SpiralLengthCount {
                expected: n_levels,
                got: n,
            })
        }
    };

    // Fail fast on the vertex-count chain before doing any decimation.
    let mut n = topology.vertex_count();
    for &f in factors {
        let target = decimation_target(n, f)?;
        n = target;
    }

    let mut levels = Vec::with_capacity(n_levels);
    let mut down = Vec::with_capacity(factors.len());
    let mut up = Vec::with_capacity(factors.len());
    let mut topo = topology.clone();
    let mut frame = reference.clone();
    for (i, &f) in factors.iter().enumerate() {
        let spiral = build_spiral_table(&topo, lengths[i], &frame)?;
        let dec = qem_decimate(&topo, &frame, f)?;
        levels.push(HierarchyLevel {
            topology: topo,
            reference: frame,
            spiral,
        });
        down.push(dec.down);
        up.push(dec.up);
        topo = dec.topology;
        frame = dec.reference;
    }
    let spiral = build_spiral_table(&topo, lengths[n_levels - 1], &frame)?;
    levels.push(HierarchyLevel {
        topology: topo,
        reference: frame,
        spiral,
    });
    Ok(MeshHierarchy {
        levels,
        down,
        up,
        factors: factors.to_vec(),
        spiral_lengths: lengths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::icosphere;

    #[test]
    fn icosphere_chain_clamps_at_tetrahedron() {
        let (topo, frame) = icosphere(2);
        let h = build_hierarchy(&topo, &frame, &[4.0, 4.0, 4.0], &[8]).unwrap();
        assert_eq!(h.level_sizes(), vec![162, 41, 11, 4]);
        let err = build_hierarchy(&topo, &frame, &[4.0; 4], &[8]).unwrap_err();
        assert!(matches!(err, HierarchyError::NoReduction { vertices: 4, .. }));
    }

    #[test]
    fn operators_are_consistent_with_levels() {
        let (topo, frame) = icosphere(2);
        let h = build_hierarchy(&topo, &frame, &[2.0; 4], &[12, 12, 10, 10, 8]).unwrap();
        assert_eq!(h.level_sizes(), vec![162, 81, 41, 21, 11]);
        for i in 0..h.depth() {
            assert_eq!(h.down[i].cols, h.levels[i].vertex_count());
            assert_eq!(h.down[i].rows, h.levels[i + 1].vertex_count());
            assert_eq!(h.up[i].rows, h.levels[i].vertex_count());
            assert_eq!(h.up[i].cols, h.levels[i + 1].vertex_count());
            assert_eq!(h.down[i].kind, SamplingKind::Down);
            assert_eq!(h.up[i].kind, SamplingKind::Up);
        }
        assert_eq!(h.levels[4].spiral.length(), 8);
    }

    #[test]
    fn deterministic() {
        let (topo, frame) = icosphere(2);
        let a = build_hierarchy(&topo, &frame, &[2.0; 4], &[12]).unwrap();
        let b = build_hierarchy(&topo, &frame, &[2.0; 4], &[12]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn spiral_length_count_checked() {
        let (topo, frame) = icosphere(1);
        assert!(matches!(
            build_hierarchy(&topo, &frame, &[2.0, 2.0], &[12, 10]),
            Err(HierarchyError::SpiralLengthCount { expected: 3, got: 2 })
        ));
    }
}
