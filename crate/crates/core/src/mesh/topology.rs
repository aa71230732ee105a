use std::collections::HashMap;

use super::MeshError;
use crate::seed::fnv1a;

/// Connectivity shared by every frame of a sequence.
///
/// Only closed, oriented, connected 2-manifolds are accepted: every directed
/// edge appears in exactly one face and its reverse in exactly one other, and
/// the faces around each vertex form a single fan.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TemplateTopology {
    vertex_count: usize,
    faces: Vec<[u32; 3]>,
    adjacency: Vec<Vec<u32>>,
    checksum: u64,
}

impl TemplateTopology {
    pub fn new(vertex_count: usize, faces: Vec<[u32; 3]>) -> Result<Self, MeshError> {
        if vertex_count == 0 || faces.is_empty() {
            return Err(MeshError::Empty("mesh has no vertices or faces"));
        }
        for (fi, f) in faces.iter().enumerate() {
            for &i in f {
                if i as usize >= vertex_count {
                    return Err(MeshError::IndexOutOfRange {
                        face: fi,
                        index: i as usize,
                        vertex_count,
                    });
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(MeshError::DegenerateFace { face: fi });
            }
        }

        let mut directed: HashMap<(u32, u32), usize> = HashMap::with_capacity(faces.len() * 3);
        for (fi, f) in faces.iter().enumerate() {
            for k in 0..3 {
                let e = (f[k], f[(k + 1) % 3]);
                if let Some(prev) = directed.insert(e, fi) {
                    return Err(MeshError::NonManifold(format!(
                        "directed edge {}→{} used by faces {prev} and {fi} (inconsistent orientation or more than two faces on an edge)",
                        e.0, e.1
                    )));
                }
            }
        }
        for &(a, b) in directed.keys() {
            if !directed.contains_key(&(b, a)) {
                return Err(MeshError::NonManifold(format!(
                    "edge {a}–{b} has only one incident face (open boundary)"
                )));
            }
        }

        // Around vertex v, face (v, b, c) in winding order steps the fan from b to c.
        let mut next: Vec<HashMap<u32, u32>> = vec![HashMap::new(); vertex_count];
        for f in &faces {
            for k in 0..3 {
                next[f[k] as usize].insert(f[(k + 1) % 3], f[(k + 2) % 3]);
            }
        }
        let mut adjacency = Vec::with_capacity(vertex_count);
        for (v, fan) in next.iter().enumerate() {
            if fan.is_empty() {
                return Err(MeshError::Disconnected {
                    reached: vertex_count - 1,
                    vertex_count,
                });
            }
            let start = *fan.keys().min().unwrap();
            let mut ring = vec![start];
            let mut cur = fan[&start];
            while cur != start {
                if ring.len() > fan.len() {
                    break;
                }
                ring.push(cur);
                cur = match fan.get(&cur) {
                    Some(&n) => n,
                    None => break,
                };
            }
            if ring.len() != fan.len() {
                return Err(MeshError::NonManifold(format!(
                    "faces around vertex {v} do not form a single fan"
                )));
            }
            adjacency.push(ring);
        }

        let mut seen = vec![false; vertex_count];
        let mut stack = vec![0u32];
        seen[0] = true;
        let mut reached = 1;
        while let Some(v) = stack.pop() {
            for &u in &adjacency[v as usize] {
                if !seen[u as usize] {
                    seen[u as usize] = true;
                    reached += 1;
                    stack.push(u);
                }
            }
        }
        if reached != vertex_count {
            return Err(MeshError::Disconnected {
                reached,
                vertex_count,
            });
        }

        let checksum = face_checksum(&faces);
        Ok(Self {
            vertex_count,
            faces,
            adjacency,
            checksum,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    /// Neighbors of `v` counterclockwise (by face winding), starting at the
    /// lowest-index neighbor.
    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.adjacency[v]
    }

    /// FNV-1a over the little-endian bytes of the face index list.
    pub fn checksum(&self) -> u64 {
        self.checksum
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }
}

pub(crate) fn face_checksum(faces: &[[u32; 3]]) -> u64 {
    fnv1a(faces.iter().flat_map(|f| f.iter().flat_map(|i| i.to_le_bytes())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::tetrahedron;

    #[test]
    fn tetrahedron_is_complete_graph() {
        let (topo, _) = tetrahedron();
        assert_eq!(topo.vertex_count(), 4);
        for v in 0..4 {
            let mut n: Vec<u32> = topo.neighbors(v).to_vec();
            assert_eq!(n.len(), 3);
            n.sort();
            let expect: Vec<u32> = (0..4).filter(|&u| u != v as u32).collect();
            assert_eq!(n, expect);
        }
    }

    #[test]
    fn adjacency_is_symmetric() {
        let (topo, _) = crate::mesh::icosphere(2);
        for v in 0..topo.vertex_count() {
            for &u in topo.neighbors(v) {
                assert!(topo.neighbors(u as usize).contains(&(v as u32)));
            }
        }
    }

    #[test]
    fn open_mesh_rejected() {
        let faces = vec![[0, 1, 2], [0, 2, 3]];
        assert!(matches!(
            TemplateTopology::new(4, faces),
            Err(MeshError::NonManifold(_))
        ));
    }

    #[test]
    fn flipped_face_rejected() {
        let (topo, _) = tetrahedron();
        let mut faces = topo.faces().to_vec();
        faces[0].swap(1, 2);
        assert!(matches!(
            TemplateTopology::new(4, faces),
            Err(MeshError::NonManifold(_))
        ));
    }

    #[test]
    fn two_tetrahedra_are_disconnected() {
        let (topo, _) = tetrahedron();
        let mut faces = topo.faces().to_vec();
        faces.extend(topo.faces().iter().map(|f| [f[0] + 4, f[1] + 4, f[2] + 4]));
        assert!(matches!(
            TemplateTopology::new(8, faces),
            Err(MeshError::Disconnected { reached: 4, .. })
        ));
    }

    #[test]
    fn out_of_range_index_rejected() {
        let err = TemplateTopology::new(4, vec![[0, 1, 99]]).unwrap_err();
        assert!(matches!(err, MeshError::IndexOutOfRange { index: 99, .. }));
    }
}
