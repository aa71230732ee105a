//! Text template meshes, the binary sequence format, and the CSV manifest.
//!
//! Sequence file, little-endian:
//!
//! ```text
//! "SPTR" u32 version=1 u32 vertex_count u32 frame_count u32 label (0xFFFFFFFF = none)
//! u64 topology checksum
//! frame_count · vertex_count · 3 f32, frame-major, vertex-major, xyz
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{MeshError, MeshFrame, MeshSequence, TemplateTopology};
use crate::binio::{Reader, Writer};
use crate::error::{read_file, write_file, Error, FormatError, Result};

const SEQ_MAGIC: &[u8; 4] = b"SPTR";
const SEQ_VERSION: u32 = 1;
const UNLABELED: u32 = u32::MAX;

/// Parses `v x y z` and `f i j k` lines (1-based, `i/t/n` forms accepted);
/// other line types are ignored.
pub fn parse_template(text: &str) -> Result<(TemplateTopology, MeshFrame), MeshError> {
    let mut coords = Vec::new();
    let mut faces = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line_no = ln + 1;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let vals: Vec<f32> = parts
                    .take(3)
                    .map(|s| s.parse::<f32>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| MeshError::Parse {
                        line: line_no,
                        message: format!("bad vertex coordinate: {e}"),
                    })?;
                if vals.len() != 3 {
                    return Err(MeshError::Parse {
                        line: line_no,
                        message: "vertex needs three coordinates".into(),
                    });
                }
                coords.push([vals[0], vals[1], vals[2]]);
            }
            Some("f") => {
                let idx: Vec<i64> = parts
                    .map(|s| s.split('/').next().unwrap_or("").parse::<i64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| MeshError::Parse {
                        line: line_no,
                        message: format!("bad face index: {e}"),
                    })?;
                if idx.len() != 3 {
                    return Err(MeshError::NonTriangle {
                        face: faces.len(),
                        count: idx.len(),
                    });
                }
                faces.push([idx[0], idx[1], idx[2]]);
            }
            _ => {}
        }
    }
    // Indices are reported 1-based, as written in the file.
    let n = coords.len();
    let faces = faces
        .iter()
        .enumerate()
        .map(|(fi, f)| {
            let mut out = [0u32; 3];
            for (k, &i) in f.iter().enumerate() {
                if i < 1 || i as usize > n {
                    return Err(MeshError::IndexOutOfRange {
                        face: fi,
                        index: i.max(0) as usize,
                        vertex_count: n,
                    });
                }
                out[k] = (i - 1) as u32;
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let frame = MeshFrame::new(coords);
    if !frame.is_finite() {
        return Err(MeshError::NonFinite { frame: 0 });
    }
    let topo = TemplateTopology::new(frame.len(), faces)?;
    Ok((topo, frame))
}

pub fn load_template(path: &Path) -> Result<(TemplateTopology, MeshFrame)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_template(&text)?)
}

pub fn write_template(path: &Path, topology: &TemplateTopology, frame: &MeshFrame) -> Result<()> {
    let mut out = String::new();
    for p in frame.coords() {
        writeln!(out, "v {} {} {}", p[0], p[1], p[2]).unwrap();
    }
    for f in topology.faces() {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
    }
    write_file(path, out.as_bytes())
}

pub fn encode_sequence(seq: &MeshSequence) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(SEQ_MAGIC)
        .u32(SEQ_VERSION)
        .len_u32(seq.vertex_count())
        .len_u32(seq.len())
        .u32(seq.label.unwrap_or(UNLABELED))
        .u64(seq.topology_id);
    for f in &seq.frames {
        for x in f.flat() {
            w.f32(x);
        }
    }
    w.finish()
}

/// Decodes a sequence file; `expected_topology` enforces the checksum.
pub fn decode_sequence(bytes: &[u8], expected_topology: Option<u64>) -> Result<MeshSequence> {
    let mut r = Reader::new(bytes);
    r.magic(SEQ_MAGIC)?;
    r.version(SEQ_VERSION)?;
    let vertex_count = r.usize()?;
    let frame_count = r.usize()?;
    let label = r.u32()?;
    let checksum = r.u64()?;
    if let Some(expected) = expected_topology {
        if expected != checksum {
            return Err(FormatError::Checksum {
                expected,
                found: checksum,
            }
            .into());
        }
    }
    let floats = frame_count * vertex_count * 3;
    r.require(floats * 4)?;
    let data = r.f32_vec(floats)?;
    r.finish()?;
    let frames = data
        .chunks_exact(vertex_count * 3)
        .map(|c| MeshFrame::new(c.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect()))
        .collect();
    let label = (label != UNLABELED).then_some(label);
    Ok(MeshSequence::new(frames, label, checksum)?)
}

pub fn save_sequence(path: &Path, seq: &MeshSequence) -> Result<()> {
    write_file(path, &encode_sequence(seq))
}

pub fn load_sequence(path: &Path, expected_topology: Option<u64>) -> Result<MeshSequence> {
    decode_sequence(&read_file(path)?, expected_topology)
}

/// One row of `manifest.csv`: `path,label,subject_id`.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ManifestRow {
    pub path: PathBuf,
    pub label: u32,
    pub subject_id: u64,
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    write_file(path, &bytes)
}

/// Reads a manifest; relative paths are resolved against its directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let bytes = read_file(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut rdr = csv::Reader::from_reader(bytes.as_slice());
    let mut rows = Vec::new();
    for rec in rdr.deserialize() {
        let mut row: ManifestRow = rec?;
        if row.path.is_relative() {
            row.path = base.join(&row.path);
        }
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{icosphere, tetrahedron};

    const TETRA: &str = "# tetrahedron\nv 1 1 1\nv 1 -1 -1\nv -1 1 -1\nv -1 -1 1\nvn 0 0 1\nf 1 2 3\nf 1 4 2\nf 1/1 3/1 4/1\nf 2 4 3\n";

    #[test]
    fn parses_tetrahedron() {
        let (topo, frame) = parse_template(TETRA).unwrap();
        assert_eq!(topo.vertex_count(), 4);
        assert_eq!(frame.len(), 4);
        assert!((0..4).all(|v| topo.neighbors(v).len() == 3));
        assert_eq!(topo, tetrahedron().0);
    }

    #[test]
    fn rejects_bad_faces() {
        let bad = TETRA.replace("f 2 4 3", "f 2 4 99");
        assert!(matches!(parse_template(&bad), Err(MeshError::IndexOutOfRange { index: 99, .. })));
        let quad = TETRA.replace("f 2 4 3", "f 2 4 3 1");
        assert!(matches!(parse_template(&quad), Err(MeshError::NonTriangle { count: 4, .. })));
        let open = TETRA.replace("f 2 4 3\n", "");
        assert!(matches!(parse_template(&open), Err(MeshError::NonManifold(_))));
    }

    #[test]
    fn template_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ico.obj");
        let (topo, frame) = icosphere(1);
        write_template(&path, &topo, &frame).unwrap();
        let (t2, f2) = load_template(&path).unwrap();
        assert_eq!(t2.vertex_count(), 42);
        assert_eq!(t2, topo);
        assert_eq!(f2, frame);
    }

    fn sample_sequence() -> MeshSequence {
        let (topo, frame) = tetrahedron();
        let frames = (0..3)
            .map(|i| MeshFrame::new(frame.coords().iter().map(|p| [p[0] * i as f32, p[1], p[2] + 0.1]).collect()))
            .collect();
        MeshSequence::new(frames, Some(2), topo.checksum()).unwrap()
    }

    #[test]
    fn sequence_round_trip_is_bit_exact() {
        let seq = sample_sequence();
        let bytes = encode_sequence(&seq);
        assert_eq!(bytes.len(), 28 + 3 * 4 * 3 * 4);
        let back = decode_sequence(&bytes, Some(seq.topology_id)).unwrap();
        assert_eq!(back, seq);
        assert_eq!(encode_sequence(&back), bytes);
    }

    #[test]
    fn sequence_errors() {
        let seq = sample_sequence();
        let mut bytes = encode_sequence(&seq);
        let err = decode_sequence(&bytes, Some(seq.topology_id ^ 1)).unwrap_err();
        assert!(matches!(err, Error::Format(FormatError::Checksum { .. })));

        let truncated = &bytes[..bytes.len() - 6];
        match decode_sequence(truncated, None).unwrap_err() {
            Error::Format(FormatError::Truncated { expected, actual }) => {
                assert_eq!(expected, bytes.len());
                assert_eq!(actual, bytes.len() - 6);
            }
            other => panic!("unexpected {other}"),
        }

        bytes[4] = 2;
        assert!(matches!(decode_sequence(&bytes, None), Err(Error::Format(FormatError::Version { found: 2, .. }))));
        bytes[0] = b'X';
        assert!(matches!(decode_sequence(&bytes, None), Err(Error::Format(FormatError::Magic { .. }))));
    }

    #[test]
    fn unlabeled_sequence() {
        let mut seq = sample_sequence();
        seq.label = None;
        let back = decode_sequence(&encode_sequence(&seq), None).unwrap();
        assert_eq!(back.label, None);
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.csv");
        let rows = vec![
            ManifestRow { path: "a.sptr".into(), label: 0, subject_id: 3 },
            ManifestRow { path: "b.sptr".into(), label: 2, subject_id: 4 },
        ];
        write_manifest(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("path,label,subject_id\n"));
        let back = read_manifest(&path).unwrap();
        assert_eq!(back[1].path, dir.path().join("b.sptr"));
        assert_eq!(back[1].subject_id, 4);
    }
}
