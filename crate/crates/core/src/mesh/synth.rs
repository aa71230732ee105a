//! Synthetic action classes over a template mesh.
//!
//! Every class animates the template with smooth deformations whose
//! per-vertex displacement never exceeds 18% of the template's bounding
//! radius. The two sequential classes use the same bend and twist but in
//! opposite order, so they share their frame content and differ only in
//! time.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{MeshError, MeshFrame, MeshSequence, TemplateTopology};
use crate::seed::derive_indexed;

const MIN_AMPLITUDE: f64 = 0.10;
const MAX_AMPLITUDE: f64 = 0.18;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthClass {
    /// A bend about the vertical axis that rises and relaxes, then a twist.
    BendTwist,
    /// The same twist, then the same bend.
    TwistBend,
    /// Periodic radial swelling.
    Pulse,
    /// Periodic sideways tilt of the whole body.
    Sway,
}

pub const SYNTH_CLASSES: [SynthClass; 4] = [
    SynthClass::BendTwist,
    SynthClass::TwistBend,
    SynthClass::Pulse,
    SynthClass::Sway,
];

impl SynthClass {
    pub fn from_id(class_id: u32) -> Result<Self, MeshError> {
        SYNTH_CLASSES
            .get(class_id as usize)
            .copied()
            .ok_or(MeshError::UnknownClass {
                class_id,
                available: SYNTH_CLASSES.len(),
            })
    }

    pub fn name(self) -> &'static str {
        match self {
            SynthClass::BendTwist => "bend-twist",
            SynthClass::TwistBend => "twist-bend",
            SynthClass::Pulse => "pulse",
            SynthClass::Sway => "sway",
        }
    }
}

/// `sin²` bump supported on `[start, end]`.
fn hump(u: f64, start: f64, end: f64) -> f64 {
    if u <= start || u >= end {
        return 0.0;
    }
    (PI * (u - start) / (end - start)).sin().powi(2)
}

#[derive(Default, Clone, Copy)]
struct Pose {
    bend: f64,
    twist: f64,
    pulse: f64,
    tilt: f64,
}

struct Motion {
    class: SynthClass,
    amplitude: f64,
    split: f64,
    frequency: f64,
    phase: f64,
}

impl Motion {
    fn sample(class: SynthClass, rng: &mut ChaCha8Rng) -> Self {
        Self {
            class,
            amplitude: rng.gen_range(MIN_AMPLITUDE..MAX_AMPLITUDE),
            split: 0.5 + rng.gen_range(-0.08..0.08),
            frequency: match class {
                SynthClass::Pulse => rng.gen_range(1.5..2.5),
                _ => rng.gen_range(0.75..1.25),
            },
            phase: rng.gen_range(0.0..2.0 * PI),
        }
    }

    fn pose(&self, u: f64) -> Pose {
        let a = self.amplitude;
        let wave = a * (2.0 * PI * self.frequency * u + self.phase).sin();
        match self.class {
            SynthClass::BendTwist => Pose {
                bend: a * hump(u, 0.0, self.split),
                twist: a * hump(u, self.split, 1.0),
                ..Pose::default()
            },
            SynthClass::TwistBend => Pose {
                twist: a * hump(u, 0.0, self.split),
                bend: a * hump(u, self.split, 1.0),
                ..Pose::default()
            },
            SynthClass::Pulse => Pose {
                pulse: wave,
                ..Pose::default()
            },
            SynthClass::Sway => Pose {
                tilt: wave,
                ..Pose::default()
            },
        }
    }
}

/// Displaces `p` (relative to the template centroid; `radius` is the
/// bounding radius). Each active component moves a point by at most
/// `|amount|·radius`, and at most one component is active at a time.
fn deform(p: [f64; 3], radius: f64, pose: Pose) -> [f64; 3] {
    let [mut x, y, mut z] = p;
    let h = y / radius;
    x += pose.bend * radius * h * h;
    if pose.twist != 0.0 {
        let (s, c) = (pose.twist * h).sin_cos();
        (x, z) = (c * x - s * z, s * x + c * z);
    }
    let k = 1.0 + pose.pulse;
    let (mut x, mut y, z) = (x * k, y * k, z * k);
    if pose.tilt != 0.0 {
        let (s, c) = pose.tilt.sin_cos();
        (x, y) = (c * x - s * y, s * x + c * y);
    }
    [x, y, z]
}

/// A labeled sequence of `length` frames. Pure in `(class_id, seed, length)`.
pub fn synth_generate(
    template: (&TemplateTopology, &MeshFrame),
    class_id: u32,
    seed: u64,
    length: usize,
) -> Result<MeshSequence, MeshError> {
    let class = SynthClass::from_id(class_id)?;
    let (topology, rest) = template;
    if length == 0 {
        return Err(MeshError::Empty("sequence length must be positive"));
    }
    let points = rest.points();
    let n = points.len() as f64;
    let mut center = [0.0; 3];
    for p in &points {
        for k in 0..3 {
            center[k] += p[k] / n;
        }
    }
    let local: Vec<[f64; 3]> = points
        .iter()
        .map(|p| [p[0] - center[0], p[1] - center[1], p[2] - center[2]])
        .collect();
    let radius = local
        .iter()
        .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
        .fold(0.0, f64::max);
    if radius <= 0.0 {
        return Err(MeshError::DegenerateScale);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_indexed(seed, "synth", class_id as u64));
    let motion = Motion::sample(class, &mut rng);
    let frames = (0..length)
        .map(|t| {
            let u = if length > 1 { t as f64 / (length - 1) as f64 } else { 0.0 };
            let pose = motion.pose(u);
            let coords: Vec<[f64; 3]> = local
                .iter()
                .map(|&p| {
                    let q = deform(p, radius, pose);
                    [q[0] + center[0], q[1] + center[1], q[2] + center[2]]
                })
                .collect();
            MeshFrame::from_f64(&coords)
        })
        .collect();
    MeshSequence::new(frames, Some(class_id), topology.checksum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{icosphere, normalize_frames};

    #[test]
    fn deterministic_and_seed_sensitive() {
        let (topo, rest) = icosphere(1);
        let a = synth_generate((&topo, &rest), 0, 7, 24).unwrap();
        let b = synth_generate((&topo, &rest), 0, 7, 24).unwrap();
        assert_eq!(a, b);
        let c = synth_generate((&topo, &rest), 0, 8, 24).unwrap();
        assert_ne!(a.frames, c.frames);
        assert_eq!(a.label, c.label);
        assert_eq!(a.len(), 24);
    }

    #[test]
    fn unknown_class_rejected() {
        let (topo, rest) = icosphere(0);
        assert!(matches!(
            synth_generate((&topo, &rest), 9, 0, 4),
            Err(MeshError::UnknownClass { class_id: 9, .. })
        ));
    }

    #[test]
    fn displacement_bounded_by_fifth_of_radius() {
        let (topo, rest) = icosphere(2);
        for class in 0..SYNTH_CLASSES.len() as u32 {
            for seed in 0..5 {
                let seq = synth_generate((&topo, &rest), class, seed, 32).unwrap();
                for f in &seq.frames {
                    for (p, q) in f.coords().iter().zip(rest.coords()) {
                        let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
                        assert!(d <= 0.2 * 1.0 + 1e-6, "class {class}: displacement {d}");
                    }
                }
                let (norm, _) = normalize_frames(&seq.frames).unwrap();
                assert!(norm.iter().flat_map(|f| f.flat()).all(|x| (-1.0..=1.0).contains(&x)));
            }
        }
    }

    #[test]
    fn sequential_classes_are_time_reverses() {
        let m = Motion {
            class: SynthClass::BendTwist,
            amplitude: 0.15,
            split: 0.5,
            frequency: 1.0,
            phase: 0.0,
        };
        let r = Motion {
            class: SynthClass::TwistBend,
            ..m
        };
        for i in 0..=20 {
            let u = i as f64 / 20.0;
            let (p, q) = (m.pose(u), r.pose(1.0 - u));
            assert!((p.bend - q.bend).abs() < 1e-12 && (p.twist - q.twist).abs() < 1e-12);
        }
    }
}
