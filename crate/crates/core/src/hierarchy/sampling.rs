use super::HierarchyError;
use crate::tensor::{CsrMatrix, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplingKind {
    Down,
    Up,
}

/// Sparse `rows × cols` operator stored as `(row, col, weight)` triples.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingOperator {
    pub kind: SamplingKind,
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(u32, u32, f64)>,
}

impl SamplingOperator {
    pub fn to_csr<T: Real>(&self) -> CsrMatrix<T> {
        let triples: Vec<(usize, usize, T)> = self
            .entries
            .iter()
            .map(|&(r, c, w)| (r as usize, c as usize, T::of(w)))
            .collect();
        CsrMatrix::from_triples(self.rows, self.cols, &triples)
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * self.cols];
        for &(r, c, w) in &self.entries {
            out[r as usize * self.cols + c as usize] += w;
        }
        out
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        for &(r, _, w) in &self.entries {
            out[r as usize] += w;
        }
        out
    }
}

/// `op · features` for a `cols × F` feature matrix.
pub fn apply_sampling<T: Real>(op: &SamplingOperator, features: &Tensor<T>) -> Result<Tensor<T>, HierarchyError> {
    if !features.is_matrix() || features.rows() != op.cols {
        let got = if features.is_matrix() { features.rows() } else { features.len() };
        return Err(HierarchyError::Dimension {
            expected: op.cols,
            got,
        });
    }
    let f = features.cols();
    let mut out = vec![T::zero(); op.rows * f];
    for &(r, c, w) in &op.entries {
        let w = T::of(w);
        let src = features.row(c as usize);
        let dst = &mut out[r as usize * f..(r as usize + 1) * f];
        for (d, &s) in dst.iter_mut().zip(src) {
            *d += w * s;
        }
    }
    Ok(Tensor::matrix(op.rows, f, out).expect("shape computed above"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::qem_decimate;
    use crate::mesh::icosphere;

    fn ops() -> (SamplingOperator, SamplingOperator) {
        let (topo, frame) = icosphere(2);
        let d = qem_decimate(&topo, &frame, 4.0).unwrap();
        (d.down, d.up)
    }

    #[test]
    fn down_rows_are_one_hot() {
        let (down, _) = ops();
        let dense = down.to_dense();
        for r in 0..down.rows {
            let row = &dense[r * down.cols..(r + 1) * down.cols];
            assert_eq!(row.iter().filter(|&&x| x == 1.0).count(), 1);
            assert_eq!(row.iter().filter(|&&x| x != 0.0).count(), 1);
        }
    }

    #[test]
    fn up_rows_are_convex() {
        let (_, up) = ops();
        for s in up.row_sums() {
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(up.entries.iter().all(|e| e.2 > 0.0 && e.2 <= 1.0));
        assert!(up.entries.iter().all(|e| (e.0 as usize) < up.rows && (e.1 as usize) < up.cols));
    }

    #[test]
    fn constants_survive_both_directions() {
        let (down, up) = ops();
        let x = Tensor::<f64>::full([down.cols, 2], 0.75);
        let y = apply_sampling(&down, &x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.75));
        let z = apply_sampling(&up, &y).unwrap();
        assert!(z.data().iter().all(|&v| (v - 0.75).abs() < 1e-12));
    }

    #[test]
    fn matches_dense_product() {
        let (_, up) = ops();
        let x = Tensor::<f64>::from_fn(up.cols, 3, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let y = apply_sampling(&up, &x).unwrap();
        let dense = up.to_dense();
        for r in 0..up.rows {
            for j in 0..3 {
                let want: f64 = (0..up.cols).map(|k| dense[r * up.cols + k] * x.at(k, j)).sum();
                assert!((y.at(r, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn wrong_rows_rejected() {
        let (down, _) = ops();
        let x = Tensor::<f64>::zeros([down.cols + 1, 3]);
        assert_eq!(
            apply_sampling(&down, &x).unwrap_err(),
            HierarchyError::Dimension {
                expected: down.cols,
                got: down.cols + 1
            }
        );
    }
}
