use super::MeshError;

/// Vertex coordinates of one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct MeshFrame {
    coords: Vec<[f32; 3]>,
}

impl MeshFrame {
    pub fn new(coords: Vec<[f32; 3]>) -> Self {
        Self { coords }
    }

    pub fn from_f64(coords: &[[f64; 3]]) -> Self {
        Self {
            coords: coords
                .iter()
                .map(|p| [p[0] as f32, p[1] as f32, p[2] as f32])
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[[f32; 3]] {
        &self.coords
    }

    pub fn point(&self, v: usize) -> [f64; 3] {
        let p = self.coords[v];
        [p[0] as f64, p[1] as f64, p[2] as f64]
    }

    pub fn points(&self) -> Vec<[f64; 3]> {
        (0..self.len()).map(|v| self.point(v)).collect()
    }

    /// Coordinates flattened vertex-major, xyz order.
    pub fn flat(&self) -> impl Iterator<Item = f32> + '_ {
        self.coords.iter().flat_map(|p| p.iter().copied())
    }

    pub fn is_finite(&self) -> bool {
        self.flat().all(f32::is_finite)
    }
}

/// An animation over one topology, optionally labeled with an action class.
#[derive(Clone, Debug, PartialEq)]
pub struct MeshSequence {
    pub frames: Vec<MeshFrame>,
    pub label: Option<u32>,
    pub topology_id: u64,
}

impl MeshSequence {
    pub fn new(frames: Vec<MeshFrame>, label: Option<u32>, topology_id: u64) -> Result<Self, MeshError> {
        let first = frames.first().ok_or(MeshError::Empty("sequence has no frames"))?;
        let n = first.len();
        for (i, f) in frames.iter().enumerate() {
            if f.len() != n {
                return Err(MeshError::VertexCount {
                    expected: n,
                    got: f.len(),
                });
            }
            if !f.is_finite() {
                return Err(MeshError::NonFinite { frame: i });
            }
        }
        Ok(Self {
            frames,
            label,
            topology_id,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn vertex_count(&self) -> usize {
        self.frames[0].len()
    }

    /// Frames at indices `floor(i·L/n)` for `i = 0..n`.
    pub fn uniform_sample(&self, n: usize) -> Result<MeshSequence, MeshError> {
        let frames = uniform_sample_indices(self.len(), n)?
            .into_iter()
            .map(|i| self.frames[i].clone())
            .collect();
        Ok(MeshSequence {
            frames,
            label: self.label,
            topology_id: self.topology_id,
        })
    }

    pub fn reversed(&self) -> MeshSequence {
        MeshSequence {
            frames: self.frames.iter().rev().cloned().collect(),
            ..self.clone()
        }
    }
}

pub fn uniform_sample_frames(seq: &MeshSequence, n: usize) -> Result<MeshSequence, MeshError> {
    seq.uniform_sample(n)
}

pub fn uniform_sample_indices(length: usize, n: usize) -> Result<Vec<usize>, MeshError> {
    if n == 0 || n > length {
        return Err(MeshError::SampleCount {
            requested: n,
            length,
        });
    }
    Ok((0..n).map(|i| i * length / n).collect())
}

/// Centering and scaling that maps a dataset into `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormStats {
    pub center: [f64; 3],
    pub scale: f64,
}

impl NormStats {
    pub const IDENTITY: NormStats = NormStats {
        center: [0.0; 3],
        scale: 1.0,
    };

    /// Centroid of every vertex of every frame, and the largest absolute
    /// coordinate deviation from it.
    pub fn fit<'a>(frames: impl IntoIterator<Item = &'a MeshFrame> + Clone) -> Result<Self, MeshError> {
        let mut sum = [0.0f64; 3];
        let mut count = 0usize;
        for (i, f) in frames.clone().into_iter().enumerate() {
            if !f.is_finite() {
                return Err(MeshError::NonFinite { frame: i });
            }
            for p in f.coords() {
                for k in 0..3 {
                    sum[k] += p[k] as f64;
                }
            }
            count += f.len();
        }
        if count == 0 {
            return Err(MeshError::Empty("no frames to normalize"));
        }
        let center = sum.map(|s| s / count as f64);
        let mut scale = 0.0f64;
        for f in frames {
            for p in f.coords() {
                for k in 0..3 {
                    scale = scale.max((p[k] as f64 - center[k]).abs());
                }
            }
        }
        if scale <= 0.0 {
            return Err(MeshError::DegenerateScale);
        }
        Ok(Self { center, scale })
    }

    pub fn apply(&self, frame: &MeshFrame) -> MeshFrame {
        let c = self.center;
        MeshFrame::new(
            frame
                .coords()
                .iter()
                .map(|p| {
                    let mut out = [0f32; 3];
                    for k in 0..3 {
                        // Clamp guards f32 rounding of the extreme coordinate.
                        out[k] = ((p[k] as f64 - c[k]) / self.scale).clamp(-1.0, 1.0) as f32;
                    }
                    out
                })
                .collect(),
        )
    }

    pub fn invert(&self, frame: &MeshFrame) -> MeshFrame {
        let c = self.center;
        MeshFrame::new(
            frame
                .coords()
                .iter()
                .map(|p| {
                    let mut out = [0f32; 3];
                    for k in 0..3 {
                        out[k] = (p[k] as f64 * self.scale + c[k]) as f32;
                    }
                    out
                })
                .collect(),
        )
    }

    pub fn apply_sequence(&self, seq: &MeshSequence) -> MeshSequence {
        MeshSequence {
            frames: seq.frames.iter().map(|f| self.apply(f)).collect(),
            ..seq.clone()
        }
    }
}

pub fn normalize_frames(frames: &[MeshFrame]) -> Result<(Vec<MeshFrame>, NormStats), MeshError> {
    let stats = NormStats::fit(frames)?;
    Ok((frames.iter().map(|f| stats.apply(f)).collect(), stats))
}

pub fn denormalize_frames(frames: &[MeshFrame], stats: &NormStats) -> Vec<MeshFrame> {
    frames.iter().map(|f| stats.invert(f)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_point_symmetry() {
        let f = MeshFrame::new(vec![[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        let (out, stats) = normalize_frames(&[f]).unwrap();
        assert_eq!(stats.center, [1.0, 0.0, 0.0]);
        assert_eq!(stats.scale, 1.0);
        assert_eq!(out[0].coords(), &[[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let back = denormalize_frames(&out, &stats);
        assert_eq!(back[0].coords(), &[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
    }

    #[test]
    fn canonical_input_is_unchanged() {
        let f = MeshFrame::new(vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.5, -0.25], [0.0, -0.5, 0.25]]);
        let (out, stats) = normalize_frames(&[f.clone()]).unwrap();
        assert_eq!(stats.scale, 1.0);
        for (a, b) in out[0].flat().zip(f.flat()) {
            assert!((a as f64 - b as f64).abs() <= 1e-12);
        }
    }

    #[test]
    fn identity_stats_leave_frames_alone() {
        let f = MeshFrame::new(vec![[0.3, -0.7, 2.5]]);
        assert_eq!(NormStats::IDENTITY.invert(&f), f);
    }

    #[test]
    fn coincident_vertices_are_degenerate() {
        let f = MeshFrame::new(vec![[1.0, 1.0, 1.0]; 3]);
        assert_eq!(normalize_frames(&[f]).unwrap_err(), MeshError::DegenerateScale);
        assert!(normalize_frames(&[]).is_err());
    }

    #[test]
    fn sampling_indices() {
        assert_eq!(uniform_sample_indices(24, 24).unwrap(), (0..24).collect::<Vec<_>>());
        assert_eq!(uniform_sample_indices(48, 24).unwrap(), (0..24).map(|i| 2 * i).collect::<Vec<_>>());
        assert_eq!(uniform_sample_indices(10, 4).unwrap(), vec![0, 2, 5, 7]);
        assert!(uniform_sample_indices(4, 5).is_err());
        assert!(uniform_sample_indices(4, 0).is_err());
    }

    proptest! {
        #[test]
        fn normalize_round_trip(points in prop::collection::vec(prop::array::uniform3(-50.0f32..50.0), 2..40)) {
            let f = MeshFrame::new(points);
            prop_assume!(NormStats::fit([&f]).is_ok());
            let (out, stats) = normalize_frames(std::slice::from_ref(&f)).unwrap();
            for x in out[0].flat() {
                prop_assert!((-1.0..=1.0).contains(&x));
            }
            let back = denormalize_frames(&out, &stats);
            // f32 storage: absolute error scales with the data's magnitude.
            let tol = 1e-6 * stats.scale.max(1.0) * 8.0;
            for (a, b) in back[0].flat().zip(f.flat()) {
                prop_assert!((a as f64 - b as f64).abs() <= tol);
            }
        }

        #[test]
        fn sampling_is_monotone(length in 1usize..500, frac in 0.0f64..1.0) {
            let n = ((length as f64 * frac) as usize).max(1);
            let idx = uniform_sample_indices(length, n).unwrap();
            prop_assert_eq!(idx.len(), n);
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(*idx.last().unwrap() < length);
        }
    }
}
