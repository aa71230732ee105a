use crate::hierarchy::{SpiralIndexTable, SPIRAL_PAD};
use crate::tensor::{Graph, ParamId, Real, TResult, Tensor, TensorError, Var, GATHER_PAD};

/// One spiral filter bank: a `(length·in_features) × out_features` weight and
/// a bias, applied on hierarchy level `level`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpiralConvLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub level: usize,
    pub length: usize,
    pub in_features: usize,
    pub out_features: usize,
}

/// Row indices that gather the spiral neighborhoods of `batch` stacked
/// copies of a level.
pub fn spiral_gather_index(table: &SpiralIndexTable, batch: usize) -> Vec<usize> {
    let v = table.vertex_count();
    let mut out = Vec::with_capacity(batch * table.indices().len());
    for b in 0..batch {
        out.extend(table.indices().iter().map(|&i| {
            if i == SPIRAL_PAD {
                GATHER_PAD
            } else {
                b * v + i as usize
            }
        }));
    }
    out
}

/// Spiral convolution on a `batch·V × F_in` node: gather each vertex's
/// spiral rows, flatten them into one `ℓ·F_in` row, then apply the affine map.
pub fn spiral_conv_node<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    table: &SpiralIndexTable,
    weight: Var,
    bias: Var,
    batch: usize,
) -> TResult<Var> {
    let rows = g.value(x).rows();
    let f_in = g.value(x).cols();
    let v = table.vertex_count();
    let l = table.length();
    if rows != v * batch || g.value(weight).rows() != l * f_in {
        return Err(TensorError::ShapeMismatch {
            op: "spiral_conv",
            left: vec![rows, f_in],
            right: g.value(weight).shape().to_vec(),
        });
    }
    let gathered = g.gather_rows(x, spiral_gather_index(table, batch))?;
    let flat = g.reshape(gathered, [batch * v, l * f_in])?;
    g.affine(flat, weight, bias)
}

/// Stand-alone spiral convolution of one `V × F_in` feature matrix.
pub fn spiral_conv<T: Real>(
    features: &Tensor<T>,
    table: &SpiralIndexTable,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> TResult<Tensor<T>> {
    let mut g = Graph::new();
    let x = g.constant(features.clone());
    let w = g.constant(weight.clone());
    let b = g.constant(bias.clone());
    let y = spiral_conv_node(&mut g, x, table, w, b, 1)?;
    Ok(g.value(y).clone())
}
