use super::Real;

/// `out (m×n) += a (m×k) · b (k×n)`, all row-major.
///
/// The inner loop runs over a contiguous row of `b`, which keeps it
/// vectorizable and its summation order fixed.
pub fn matmul_into<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &b_pj) in out_row.iter_mut().zip(b_row) {
                *o += a_ip * b_pj;
            }
        }
    }
}

/// `out (k×n) += aᵀ · g` where `a` is m×k and `g` is m×n.
pub(crate) fn matmul_tn_into<T: Real>(m: usize, k: usize, n: usize, a: &[T], g: &[T], out: &mut [T]) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == T::zero() {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &g_ij) in out_row.iter_mut().zip(g_row) {
                *o += a_ip * g_ij;
            }
        }
    }
}

/// `out (m×k) += g (m×n) · bᵀ` where `b` is k×n.
pub(crate) fn matmul_nt_into<T: Real>(m: usize, k: usize, n: usize, g: &[T], b: &[T], out: &mut [T]) {
    let bt = transpose(k, n, b);
    matmul_into(m, n, k, g, &bt, out);
}

pub(crate) fn transpose<T: Real>(rows: usize, cols: usize, a: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Triple-loop reference product, kept for oracle comparisons.
pub fn naive_matmul<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = T::zero();
            for p in 0..k {
                acc += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transposed_forms_agree_with_naive() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let g: Vec<f64> = (0..m * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.23).sin()).collect();

        let mut tn = vec![0.0; k * n];
        matmul_tn_into(m, k, n, &a, &g, &mut tn);
        let at = transpose(m, k, &a);
        let expect = naive_matmul(k, m, n, &at, &g);
        for (x, y) in tn.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }

        let mut nt = vec![0.0; m * k];
        matmul_nt_into(m, k, n, &g, &b, &mut nt);
        let bt = transpose(k, n, &b);
        let expect = naive_matmul(m, n, k, &g, &bt);
        for (x, y) in nt.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
