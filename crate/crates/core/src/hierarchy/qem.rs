//! Greedy quadric-error edge collapse onto surviving endpoints.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{HierarchyError, SamplingKind, SamplingOperator};
use crate::mesh::{MeshFrame, TemplateTopology};

/// Smallest closed manifold.
const MIN_VERTICES: usize = 4;

/// Output of one decimation step.
#[derive(Clone, Debug, PartialEq)]
pub struct Decimation {
    pub topology: TemplateTopology,
    pub reference: MeshFrame,
    pub down: SamplingOperator,
    pub up: SamplingOperator,
    /// Fine-level index of each coarse vertex.
    pub kept: Vec<u32>,
}

/// Coarse vertex count for one step: `max(ceil(n / factor), 4)`, which
/// must be strictly below `n`.
pub fn decimation_target(n: usize, factor: f64) -> Result<usize, HierarchyError> {
    let target = if factor > 1.0 && factor.is_finite() {
        ((n as f64 / factor).ceil() as usize).max(MIN_VERTICES)
    } else {
        n
    };
    if target >= n {
        return Err(HierarchyError::NoReduction {
            factor,
            vertices: n,
            target,
        });
    }
    Ok(target)
}

/// Symmetric 4×4 plane quadric, upper triangle.
#[derive(Clone, Copy, Default)]
struct Quadric([f64; 10]);

impl Quadric {
    fn plane(n: [f64; 3], d: f64) -> Self {
        let [a, b, c] = n;
        Quadric([a * a, a * b, a * c, a * d, b * b, b * c, b * d, c * c, c * d, d * d])
    }

    fn add(&mut self, o: &Quadric) {
        for (x, y) in self.0.iter_mut().zip(o.0) {
            *x += y;
        }
    }

    fn eval(&self, p: [f64; 3]) -> f64 {
        let q = &self.0;
        let [x, y, z] = p;
        q[0] * x * x
            + 2.0 * q[1] * x * y
            + 2.0 * q[2] * x * z
            + 2.0 * q[3] * x
            + q[4] * y * y
            + 2.0 * q[5] * y * z
            + 2.0 * q[6] * y
            + q[7] * z * z
            + 2.0 * q[8] * z
            + q[9]
    }
}

#[derive(PartialEq)]
struct Candidate {
    cost: f64,
    remove: usize,
    keep: usize,
    stamps: (u64, u64),
}

impl Eq for Candidate {}

impl Ord for Candidate {
    // Reversed so the max-heap pops the cheapest collapse, lowest indices first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.remove.cmp(&self.remove))
            .then_with(|| other.keep.cmp(&self.keep))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn face_normal(p: &[[f64; 3]], f: [usize; 3]) -> [f64; 3] {
    cross(sub(p[f[1]], p[f[0]]), sub(p[f[2]], p[f[0]]))
}

struct Collapser<'a> {
    pos: &'a [[f64; 3]],
    faces: Vec<[usize; 3]>,
    face_alive: Vec<bool>,
    vert_faces: Vec<Vec<usize>>,
    vert_alive: Vec<bool>,
    quadrics: Vec<Quadric>,
    stamps: Vec<u64>,
    heap: BinaryHeap<Candidate>,
}

impl<'a> Collapser<'a> {
    fn new(topology: &TemplateTopology, pos: &'a [[f64; 3]]) -> Self {
        let n = topology.vertex_count();
        let faces: Vec<[usize; 3]> = topology
            .faces()
            .iter()
            .map(|f| [f[0] as usize, f[1] as usize, f[2] as usize])
            .collect();
        let mut vert_faces = vec![Vec::new(); n];
        let mut quadrics = vec![Quadric::default(); n];
        for (fi, f) in faces.iter().enumerate() {
            let nrm = face_normal(pos, *f);
            let len = dot(nrm, nrm).sqrt();
            let q = if len > 0.0 {
                let unit = nrm.map(|c| c / len);
                Quadric::plane(unit, -dot(unit, pos[f[0]]))
            } else {
                Quadric::default()
            };
            for &v in f {
                vert_faces[v].push(fi);
                quadrics[v].add(&q);
            }
        }
        let mut c = Self {
            pos,
            face_alive: vec![true; faces.len()],
            faces,
            vert_faces,
            vert_alive: vec![true; n],
            quadrics,
            stamps: vec![0; n],
            heap: BinaryHeap::new(),
        };
        for v in 0..n {
            c.push_edges(v);
        }
        c
    }

    fn neighbors(&self, v: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.vert_faces[v]
            .iter()
            .flat_map(|&f| self.faces[f])
            .filter(|&u| u != v)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    fn push_edges(&mut self, v: usize) {
        for w in self.neighbors(v) {
            for (remove, keep) in [(v, w), (w, v)] {
                let mut q = self.quadrics[remove];
                q.add(&self.quadrics[keep]);
                self.heap.push(Candidate {
                    cost: q.eval(self.pos[keep]),
                    remove,
                    keep,
                    stamps: (self.stamps[remove], self.stamps[keep]),
                });
            }
        }
    }

    /// Link condition plus a no-fold check on the faces that move.
    fn legal(&self, remove: usize, keep: usize) -> bool {
        let nr = self.neighbors(remove);
        let nk = self.neighbors(keep);
        if nr.binary_search(&keep).is_err() {
            return false;
        }
        let common = nr.iter().filter(|u| nk.binary_search(u).is_ok()).count();
        if common != 2 {
            return false;
        }
        for &fi in &self.vert_faces[remove] {
            let f = self.faces[fi];
            if f.contains(&keep) {
                continue;
            }
            let before = face_normal(self.pos, f);
            let moved = f.map(|x| if x == remove { keep } else { x });
            let after = face_normal(self.pos, moved);
            let (lb, la) = (dot(before, before).sqrt(), dot(after, after).sqrt());
            if la <= 1e-12 * lb.max(1e-300) || dot(before, after) <= 0.0 {
                return false;
            }
        }
        true
    }

    fn collapse(&mut self, remove: usize, keep: usize) {
        for fi in std::mem::take(&mut self.vert_faces[remove]) {
            let f = self.faces[fi];
            if f.contains(&keep) {
                self.face_alive[fi] = false;
                for &x in &f {
                    if x != remove {
                        self.vert_faces[x].retain(|&g| g != fi);
                    }
                }
            } else {
                self.faces[fi] = f.map(|x| if x == remove { keep } else { x });
                self.vert_faces[keep].push(fi);
            }
        }
        self.vert_alive[remove] = false;
        let q = self.quadrics[remove];
        self.quadrics[keep].add(&q);

        let mut touched = self.neighbors(keep);
        touched.push(keep);
        for &t in &touched {
            self.stamps[t] += 1;
        }
        for &t in &touched {
            self.push_edges(t);
        }
    }

    fn run(&mut self, target: usize) -> Result<(), HierarchyError> {
        let mut alive = self.vert_alive.len();
        while alive > target {
            let Some(c) = self.heap.pop() else {
                return Err(HierarchyError::NoLegalCollapse {
                    vertices: alive,
                    target,
                });
            };
            if !self.vert_alive[c.remove]
                || !self.vert_alive[c.keep]
                || c.stamps != (self.stamps[c.remove], self.stamps[c.keep])
            {
                continue;
            }
            if !self.legal(c.remove, c.keep) {
                continue;
            }
            self.collapse(c.remove, c.keep);
            alive -= 1;
        }
        Ok(())
    }
}

/// Barycentric coordinates of the point of triangle `abc` closest to `p`.
pub(crate) fn closest_barycentric(p: [f64; 3], a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> [f64; 3] {
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(ab, ap);
    let d2 = dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return [1.0, 0.0, 0.0];
    }
    let bp = sub(p, b);
    let d3 = dot(ab, bp);
    let d4 = dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return [0.0, 1.0, 0.0];
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return [1.0 - v, v, 0.0];
    }
    let cp = sub(p, c);
    let d5 = dot(ab, cp);
    let d6 = dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return [0.0, 0.0, 1.0];
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return [1.0 - w, 0.0, w];
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return [0.0, 1.0 - w, w];
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    [1.0 - v - w, v, w]
}

/// Collapses edges in order of increasing quadric error until
/// [`decimation_target`] vertices remain. Collapsed vertices land on the
/// surviving endpoint, so down-sampling selects a vertex subset; each
/// removed vertex is up-sampled from the closest point on the coarse
/// reference surface.
pub fn qem_decimate(
    topology: &TemplateTopology,
    reference: &MeshFrame,
    factor: f64,
) -> Result<Decimation, HierarchyError> {
    let n = topology.vertex_count();
    let target = decimation_target(n, factor)?;
    let pos = reference.points();
    let mut c = Collapser::new(topology, &pos);
    c.run(target)?;

    let kept: Vec<u32> = (0..n).filter(|&v| c.vert_alive[v]).map(|v| v as u32).collect();
    let mut remap = vec![u32::MAX; n];
    for (i, &v) in kept.iter().enumerate() {
        remap[v as usize] = i as u32;
    }
    let faces: Vec<[u32; 3]> = c
        .faces
        .iter()
        .zip(&c.face_alive)
        .filter(|(_, &alive)| alive)
        .map(|(f, _)| f.map(|x| remap[x]))
        .collect();
    let coarse = TemplateTopology::new(kept.len(), faces)?;
    let coarse_pos: Vec<[f64; 3]> = kept.iter().map(|&v| pos[v as usize]).collect();

    let down = SamplingOperator {
        kind: SamplingKind::Down,
        rows: kept.len(),
        cols: n,
        entries: kept
            .iter()
            .enumerate()
            .map(|(i, &v)| (i as u32, v, 1.0))
            .collect(),
    };

    let mut up_entries = Vec::with_capacity(n * 3);
    for v in 0..n {
        if remap[v] != u32::MAX {
            up_entries.push((v as u32, remap[v], 1.0));
            continue;
        }
        let p = pos[v];
        let mut best: Option<(f64, usize, [f64; 3])> = None;
        for (fi, f) in coarse.faces().iter().enumerate() {
            let [a, b, cc] = f.map(|x| coarse_pos[x as usize]);
            let w = closest_barycentric(p, a, b, cc);
            let q = [
                w[0] * a[0] + w[1] * b[0] + w[2] * cc[0],
                w[0] * a[1] + w[1] * b[1] + w[2] * cc[1],
                w[0] * a[2] + w[1] * b[2] + w[2] * cc[2],
            ];
            let d = dot(sub(p, q), sub(p, q));
            if best.as_ref().is_none_or(|(bd, _, _)| d < *bd) {
                best = Some((d, fi, w));
            }
        }
        let (_, fi, w) = best.expect("coarse mesh has faces");
        let f = coarse.faces()[fi];
        let w = w.map(|x| if x > 1e-9 { x } else { 0.0 });
        let total: f64 = w.iter().sum();
        for k in 0..3 {
            if w[k] > 0.0 {
                up_entries.push((v as u32, f[k], w[k] / total));
            }
        }
    }
    let up = SamplingOperator {
        kind: SamplingKind::Up,
        rows: n,
        cols: kept.len(),
        entries: up_entries,
    };

    Ok(Decimation {
        topology: coarse,
        reference: MeshFrame::from_f64(&coarse_pos),
        down,
        up,
        kept,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::icosphere;

    #[test]
    fn factor_four_on_icosphere_one() {
        let (topo, frame) = icosphere(1);
        let d = qem_decimate(&topo, &frame, 4.0).unwrap();
        assert_eq!(d.topology.vertex_count(), 11);
        assert_eq!(d.down.rows, 11);
        for r in 0..11u32 {
            let row: Vec<_> = d.down.entries.iter().filter(|e| e.0 == r).collect();
            assert_eq!(row.len(), 1);
            assert_eq!(row[0].2, 1.0);
        }
    }

    #[test]
    fn unit_factor_rejected() {
        let (topo, frame) = icosphere(1);
        assert!(matches!(qem_decimate(&topo, &frame, 1.0), Err(HierarchyError::NoReduction { .. })));
        assert!(matches!(qem_decimate(&topo, &frame, 0.5), Err(HierarchyError::NoReduction { .. })));
    }

    #[test]
    fn target_chain() {
        let mut n = 6890;
        let mut sizes = vec![n];
        for _ in 0..4 {
            n = decimation_target(n, 4.0).unwrap();
            sizes.push(n);
        }
        assert_eq!(sizes, vec![6890, 1723, 431, 108, 27]);
        assert_eq!(decimation_target(11, 4.0).unwrap(), 4);
        assert!(decimation_target(4, 4.0).is_err());
    }

    fn mean_edge(topo: &TemplateTopology, p: &[[f64; 3]]) -> f64 {
        let mut total = 0.0;
        let mut n = 0;
        for v in 0..topo.vertex_count() {
            for &u in topo.neighbors(v) {
                let d = sub(p[u as usize], p[v]);
                total += dot(d, d).sqrt();
                n += 1;
            }
        }
        total / n as f64
    }

    #[test]
    fn up_of_down_stays_near_fine_surface() {
        let (topo, frame) = icosphere(2);
        let d = qem_decimate(&topo, &frame, 2.0).unwrap();
        let fine = frame.points();
        let coarse = d.reference.points();
        let mut rec = vec![[0.0; 3]; fine.len()];
        for &(r, c, w) in &d.up.entries {
            for k in 0..3 {
                rec[r as usize][k] += w * coarse[c as usize][k];
            }
        }
        let err: f64 = fine
            .iter()
            .zip(&rec)
            .map(|(a, b)| dot(sub(*a, *b), sub(*a, *b)).sqrt())
            .sum::<f64>()
            / fine.len() as f64;
        assert!(err < 0.1 * mean_edge(&topo, &fine), "mean error {err}");
    }

    #[test]
    fn closest_point_regions() {
        let (a, b, c) = ([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        assert_eq!(closest_barycentric([0.25, 0.25, 1.0], a, b, c), [0.5, 0.25, 0.25]);
        assert_eq!(closest_barycentric([-1.0, -1.0, 0.0], a, b, c), [1.0, 0.0, 0.0]);
        assert_eq!(closest_barycentric([0.5, -1.0, 0.0], a, b, c), [0.5, 0.5, 0.0]);
        let w = closest_barycentric([1.0, 1.0, 0.0], a, b, c);
        assert!((w[1] - 0.5).abs() < 1e-12 && (w[2] - 0.5).abs() < 1e-12);
    }
}
