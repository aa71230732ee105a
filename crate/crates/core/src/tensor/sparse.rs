use super::Real;

/// Compressed sparse row matrix used for the mesh sampling operators.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix<T> {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> CsrMatrix<T> {
    /// Builds from `(row, col, value)` triples; duplicates are summed.
    pub fn from_triples(rows: usize, cols: usize, triples: &[(usize, usize, T)]) -> Self {
        let mut sorted: Vec<(usize, usize, T)> = triples.to_vec();
        sorted.sort_by_key(|a| (a.0, a.1));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<T> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            assert!(r < rows && c < cols, "triple ({r},{c}) outside {rows}x{cols}");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
            last = Some((r, c));
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    /// `y (blocks·rows × f) = blockdiag(self) · x (blocks·cols × f)`.
    pub fn apply_blocks(&self, x: &[T], features: usize, blocks: usize) -> Vec<T> {
        debug_assert_eq!(x.len(), blocks * self.cols * features);
        let mut y = vec![T::zero(); blocks * self.rows * features];
        for b in 0..blocks {
            let xb = &x[b * self.cols * features..(b + 1) * self.cols * features];
            let yb = &mut y[b * self.rows * features..(b + 1) * self.rows * features];
            for r in 0..self.rows {
                let out = &mut yb[r * features..(r + 1) * features];
                for (c, w) in self.row_entries(r) {
                    let src = &xb[c * features..(c + 1) * features];
                    for (o, &s) in out.iter_mut().zip(src) {
                        *o += w * s;
                    }
                }
            }
        }
        y
    }

    /// `dx += blockdiag(self)ᵀ · dy`.
    pub fn apply_transpose_blocks(&self, dy: &[T], features: usize, blocks: usize, dx: &mut [T]) {
        for b in 0..blocks {
            let dyb = &dy[b * self.rows * features..(b + 1) * self.rows * features];
            let dxb = &mut dx[b * self.cols * features..(b + 1) * self.cols * features];
            for r in 0..self.rows {
                let g = &dyb[r * features..(r + 1) * features];
                for (c, w) in self.row_entries(r) {
                    let dst = &mut dxb[c * features..(c + 1) * features];
                    for (d, &gv) in dst.iter_mut().zip(g) {
                        *d += w * gv;
                    }
                }
            }
        }
    }

    pub fn to_dense(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.rows * self.cols];
        for r in 0..self.rows {
            for (c, w) in self.row_entries(r) {
                out[r * self.cols + c] += w;
            }
        }
        out
    }

    pub fn cast<U: Real>(&self) -> CsrMatrix<U> {
        CsrMatrix {
            rows: self.rows,
            cols: self.cols,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values: self.values.iter().map(|v| U::of(v.f64())).collect(),
        }
    }
}
