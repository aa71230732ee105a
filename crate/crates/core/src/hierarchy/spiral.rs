use super::HierarchyError;
use crate::mesh::{MeshError, MeshFrame, TemplateTopology};

/// Table entry meaning "no vertex"; gathers as a zero feature row.
pub const SPIRAL_PAD: u32 = u32::MAX;

/// Per-vertex spiral orderings: `vertex_count` rows of `length` entries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpiralIndexTable {
    length: usize,
    indices: Vec<u32>,
}

impl SpiralIndexTable {
    pub fn from_rows(length: usize, indices: Vec<u32>) -> Self {
        assert!(length > 0 && indices.len().is_multiple_of(length));
        Self { length, indices }
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn vertex_count(&self) -> usize {
        self.indices.len() / self.length
    }

    pub fn row(&self, v: usize) -> &[u32] {
        &self.indices[v * self.length..(v + 1) * self.length]
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn pad_count(&self) -> usize {
        self.indices.iter().filter(|&&i| i == SPIRAL_PAD).count()
    }
}

/// Spiral of every vertex: the vertex itself, its 1-ring counterclockwise
/// from the lowest-index neighbor, then each further ring. A ring is built
/// by walking the previous ring in order; each of its vertices contributes
/// its unvisited neighbors counterclockwise, starting at the lowest-index
/// unvisited one. Rows are truncated or padded with [`SPIRAL_PAD`] to
/// `length`.
///
/// The ordering is purely combinatorial; `reference` only has to match the
/// topology.
pub fn build_spiral_table(
    topology: &TemplateTopology,
    length: usize,
    reference: &MeshFrame,
) -> Result<SpiralIndexTable, HierarchyError> {
    if length == 0 {
        return Err(HierarchyError::SpiralLength);
    }
    let n = topology.vertex_count();
    if reference.len() != n {
        return Err(MeshError::VertexCount {
            expected: n,
            got: reference.len(),
        }
        .into());
    }
    let mut indices = Vec::with_capacity(n * length);
    // visited[u] == v + 1 marks u as visited for the spiral of v.
    let mut visited = vec![0usize; n];
    let mut ring: Vec<u32> = Vec::new();
    let mut next: Vec<u32> = Vec::new();
    for v in 0..n {
        if topology.neighbors(v).is_empty() {
            return Err(HierarchyError::IsolatedVertex(v));
        }
        let stamp = v + 1;
        let row_start = indices.len();
        indices.push(v as u32);
        visited[v] = stamp;
        ring.clear();
        ring.push(v as u32);
        while indices.len() - row_start < length {
            next.clear();
            for &u in &ring {
                let cycle = topology.neighbors(u as usize);
                let start = cycle
                    .iter()
                    .enumerate()
                    .filter(|(_, &w)| visited[w as usize] != stamp)
                    .min_by_key(|(_, &w)| w)
                    .map(|(i, _)| i);
                let Some(start) = start else { continue };
                for j in 0..cycle.len() {
                    let w = cycle[(start + j) % cycle.len()];
                    if visited[w as usize] != stamp {
                        visited[w as usize] = stamp;
                        next.push(w);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            let room = length - (indices.len() - row_start);
            indices.extend(next.iter().take(room));
            std::mem::swap(&mut ring, &mut next);
        }
        indices.resize(row_start + length, SPIRAL_PAD);
    }
    Ok(SpiralIndexTable { length, indices })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{icosphere, tetrahedron};

    #[test]
    fn tetrahedron_rows() {
        let (topo, frame) = tetrahedron();
        let t = build_spiral_table(&topo, 4, &frame).unwrap();
        // Faces (0,1,2), (0,3,1), (0,2,3): around 0 the fan runs 1 → 2 → 3.
        assert_eq!(t.row(0), &[0, 1, 2, 3]);
        for v in 0..4 {
            let mut r = t.row(v).to_vec();
            assert_eq!(r[0], v as u32);
            r.sort();
            assert_eq!(r, vec![0, 1, 2, 3]);
        }
        let padded = build_spiral_table(&topo, 6, &frame).unwrap();
        assert_eq!(&padded.row(0)[4..], &[SPIRAL_PAD, SPIRAL_PAD]);
    }

    #[test]
    fn unit_length_is_identity() {
        let (topo, frame) = icosphere(1);
        let t = build_spiral_table(&topo, 1, &frame).unwrap();
        assert_eq!(t.indices(), (0..42).collect::<Vec<u32>>().as_slice());
    }

    #[test]
    fn icosphere_needs_no_padding_at_twelve() {
        let (topo, frame) = icosphere(1);
        let t = build_spiral_table(&topo, 12, &frame).unwrap();
        assert_eq!(t.pad_count(), 0);
        for v in 0..42 {
            let mut r = t.row(v).to_vec();
            r.sort();
            r.dedup();
            assert_eq!(r.len(), 12);
        }
    }

    #[test]
    fn zero_length_rejected() {
        let (topo, frame) = tetrahedron();
        assert_eq!(build_spiral_table(&topo, 0, &frame), Err(HierarchyError::SpiralLength));
    }
}
