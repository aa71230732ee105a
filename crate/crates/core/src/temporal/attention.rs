use crate::tensor::{Graph, Real, TResult, Tensor, TensorError, Var};

/// Tag carried by every attention score buffer (raw, scaled, normalized).
pub const SCORE_TAG: &str = "attention_scores";

/// Tokens are rows: `Q = X·Wq`, `K = X·Wk`, `V = X·Wv`, no bias.
pub fn qkv_project_node<T: Real>(g: &mut Graph<T>, x: Var, wq: Var, wk: Var, wv: Var) -> TResult<(Var, Var, Var)> {
    Ok((g.matmul(x, wq)?, g.matmul(x, wk)?, g.matmul(x, wv)?))
}

/// `softmax(Q·Kᵀ / √d_k)` row by row.
pub fn attention_weights_node<T: Real>(g: &mut Graph<T>, q: Var, k: Var) -> TResult<Var> {
    let dk = g.value(q).cols();
    if g.value(k).cols() != dk {
        return Err(TensorError::ShapeMismatch {
            op: "attention_weights",
            left: g.value(q).shape().to_vec(),
            right: g.value(k).shape().to_vec(),
        });
    }
    let kt = g.transpose(k)?;
    let raw = g.matmul(q, kt)?;
    g.tag(raw, SCORE_TAG);
    let scaled = g.scale(raw, T::of(1.0 / (dk as f64).sqrt()))?;
    g.tag(scaled, SCORE_TAG);
    let weights = g.softmax_rows(scaled)?;
    g.tag(weights, SCORE_TAG);
    Ok(weights)
}

/// Attention-weighted sum of the value rows.
pub fn self_attention_node<T: Real>(g: &mut Graph<T>, q: Var, k: Var, v: Var) -> TResult<Var> {
    let w = attention_weights_node(g, q, k)?;
    g.matmul(w, v)
}

pub fn qkv_project<T: Real>(
    tokens: &Tensor<T>,
    wq: &Tensor<T>,
    wk: &Tensor<T>,
    wv: &Tensor<T>,
) -> TResult<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let mut g = Graph::new();
    let x = g.constant(tokens.clone());
    let (a, b, c) = (g.constant(wq.clone()), g.constant(wk.clone()), g.constant(wv.clone()));
    let (q, k, v) = qkv_project_node(&mut g, x, a, b, c)?;
    Ok((g.value(q).clone(), g.value(k).clone(), g.value(v).clone()))
}

pub fn attention_weights<T: Real>(q: &Tensor<T>, k: &Tensor<T>) -> TResult<Tensor<T>> {
    let mut g = Graph::new();
    let (qv, kv) = (g.constant(q.clone()), g.constant(k.clone()));
    let w = attention_weights_node(&mut g, qv, kv)?;
    Ok(g.value(w).clone())
}

pub fn self_attention<T: Real>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>) -> TResult<Tensor<T>> {
    let mut g = Graph::new();
    let (qv, kv, vv) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
    let out = self_attention_node(&mut g, qv, kv, vv)?;
    Ok(g.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_two_tokens() {
        let i2 = Tensor::<f64>::identity(2);
        let w = attention_weights(&i2, &i2).unwrap();
        let a = (0.5f64.sqrt()).exp();
        let (hi, lo) = (a / (a + 1.0), 1.0 / (a + 1.0));
        assert!((w.at(0, 0) - hi).abs() < 1e-12 && (w.at(0, 1) - lo).abs() < 1e-12);
        assert!((w.at(1, 0) - lo).abs() < 1e-12 && (w.at(1, 1) - hi).abs() < 1e-12);
        assert!((hi - 0.6698).abs() < 5e-5);
    }

    #[test]
    fn single_token_and_identical_tokens() {
        let q = Tensor::<f64>::matrix(1, 3, vec![0.3, -1.0, 2.0]).unwrap();
        let v = Tensor::<f64>::matrix(1, 2, vec![5.0, -4.0]).unwrap();
        assert_eq!(attention_weights(&q, &q).unwrap().data(), &[1.0]);
        assert_eq!(self_attention(&q, &q, &v).unwrap(), v);

        let same = Tensor::<f64>::from_fn(4, 3, |_, j| j as f64 - 1.0);
        let vals = Tensor::<f64>::from_fn(4, 2, |i, j| (i * 2 + j) as f64);
        let out = self_attention(&same, &same, &vals).unwrap();
        for r in 0..4 {
            assert!((out.at(r, 0) - 3.0).abs() < 1e-12 && (out.at(r, 1) - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_projection() {
        let x = Tensor::<f64>::from_fn(3, 4, |i, j| (i as f64) - (j as f64) * 0.5);
        let i4 = Tensor::identity(4);
        let (q, k, v) = qkv_project(&x, &i4, &i4, &i4).unwrap();
        assert_eq!(q, x);
        assert_eq!(k, x);
        assert_eq!(v, x);
    }

    #[test]
    fn key_width_mismatch() {
        let q = Tensor::<f64>::zeros([2, 3]);
        let k = Tensor::<f64>::zeros([2, 4]);
        assert!(attention_weights(&q, &k).is_err());
    }
}
