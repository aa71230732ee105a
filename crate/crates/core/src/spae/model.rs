use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::conv::{spiral_conv_node, SpiralConvLayer};
use crate::error::{Error, Result};
use crate::hierarchy::MeshHierarchy;
use crate::mesh::MeshFrame;
use crate::seed;
use crate::tensor::{xavier_uniform, CsrMatrix, Graph, ParamId, ParamStore, Real, TResult, Tensor, Var};

pub const ENCODER_WIDTHS: [usize; 4] = [16, 32, 64, 128];
pub const DECODER_WIDTHS: [usize; 5] = [128, 64, 32, 32, 16];
/// Hierarchy level each decoder layer convolves on. Every layer but the
/// last is preceded by one up-sampling step.
pub const DECODER_LEVELS: [usize; 5] = [3, 2, 1, 0, 0];
pub const ENCODER_DEPTH: usize = 4;

/// Spiral autoencoder: weights plus the hierarchy they are bound to.
#[derive(Clone)]
pub struct Spae<T> {
    hierarchy: Arc<MeshHierarchy>,
    latent_dim: usize,
    params: ParamStore<T>,
    encoder: Vec<SpiralConvLayer>,
    fc1: (ParamId, ParamId),
    fc2: (ParamId, ParamId),
    decoder: Vec<SpiralConvLayer>,
    output: SpiralConvLayer,
    down: Vec<Arc<CsrMatrix<T>>>,
    up: Vec<Arc<CsrMatrix<T>>>,
}

struct Builder<'a, T> {
    params: ParamStore<T>,
    rng: ChaCha8Rng,
    hierarchy: &'a MeshHierarchy,
}

impl<T: Real> Builder<'_, T> {
    fn dense(&mut self, name: &str, rows: usize, cols: usize) -> TResult<(ParamId, ParamId)> {
        let w = self.params.add(format!("{name}.weight"), xavier_uniform(&mut self.rng, rows, cols))?;
        let b = self.params.add(format!("{name}.bias"), Tensor::zeros([1, cols]))?;
        Ok((w, b))
    }

    fn conv(&mut self, name: &str, level: usize, in_features: usize, out_features: usize) -> TResult<SpiralConvLayer> {
        let length = self.hierarchy.levels[level].spiral.length();
        let (weight, bias) = self.dense(name, length * in_features, out_features)?;
        Ok(SpiralConvLayer {
            weight,
            bias,
            level,
            length,
            in_features,
            out_features,
        })
    }
}

impl<T: Real> Spae<T> {
    /// Freshly initialized autoencoder. Weights are drawn from a generator
    /// seeded by `seed`; biases start at zero.
    pub fn new(hierarchy: Arc<MeshHierarchy>, latent_dim: usize, seed: u64) -> Result<Self> {
        if hierarchy.depth() != ENCODER_DEPTH {
            return Err(Error::Config(format!(
                "the autoencoder needs a hierarchy with {ENCODER_DEPTH} decimation steps, got {}",
                hierarchy.depth()
            )));
        }
        if latent_dim == 0 {
            return Err(Error::Config("latent_dim must be positive".into()));
        }
        let mut b = Builder {
            params: ParamStore::new(),
            rng: ChaCha8Rng::seed_from_u64(seed::derive(seed, "spae-init")),
            hierarchy: &hierarchy,
        };
        let mut encoder = Vec::with_capacity(ENCODER_DEPTH);
        let mut f_in = 3;
        for (i, &w) in ENCODER_WIDTHS.iter().enumerate() {
            encoder.push(b.conv(&format!("spae.enc.{i}"), i, f_in, w)?);
            f_in = w;
        }
        let coarse = hierarchy.levels[ENCODER_DEPTH].vertex_count() * ENCODER_WIDTHS[3];
        let fc1 = b.dense("spae.fc1", coarse, latent_dim)?;
        let fc2 = b.dense("spae.fc2", latent_dim, coarse)?;
        let mut decoder = Vec::with_capacity(DECODER_WIDTHS.len());
        let mut f_in = ENCODER_WIDTHS[3];
        for (i, (&w, &level)) in DECODER_WIDTHS.iter().zip(&DECODER_LEVELS).enumerate() {
            decoder.push(b.conv(&format!("spae.dec.{i}"), level, f_in, w)?);
            f_in = w;
        }
        let output = b.conv("spae.out", 0, f_in, 3)?;
        let down = hierarchy.down.iter().map(|op| Arc::new(op.to_csr())).collect();
        let up = hierarchy.up.iter().map(|op| Arc::new(op.to_csr())).collect();
        let params = b.params;
        Ok(Self {
            hierarchy,
            latent_dim,
            params,
            encoder,
            fc1,
            fc2,
            decoder,
            output,
            down,
            up,
        })
    }

    /// Rebuilds the layout for `hierarchy` and copies weights by name.
    pub fn from_params<U: Real>(hierarchy: Arc<MeshHierarchy>, latent_dim: usize, params: &ParamStore<U>) -> Result<Self> {
        let mut model = Self::new(hierarchy, latent_dim, 0)?;
        model.params.load_from(params)?;
        Ok(model)
    }

    pub fn cast<U: Real>(&self) -> Spae<U> {
        Spae {
            hierarchy: self.hierarchy.clone(),
            latent_dim: self.latent_dim,
            params: self.params.cast(),
            encoder: self.encoder.clone(),
            fc1: self.fc1,
            fc2: self.fc2,
            decoder: self.decoder.clone(),
            output: self.output,
            down: self.down.iter().map(|m| Arc::new(m.cast())).collect(),
            up: self.up.iter().map(|m| Arc::new(m.cast())).collect(),
        }
    }

    pub fn hierarchy(&self) -> &Arc<MeshHierarchy> {
        &self.hierarchy
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn vertex_count(&self) -> usize {
        self.hierarchy.levels[0].vertex_count()
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn encoder_layers(&self) -> &[SpiralConvLayer] {
        &self.encoder
    }

    pub fn decoder_layers(&self) -> &[SpiralConvLayer] {
        &self.decoder
    }

    pub fn output_layer(&self) -> SpiralConvLayer {
        self.output
    }

    pub fn fc1(&self) -> (ParamId, ParamId) {
        self.fc1
    }

    pub fn fc2(&self) -> (ParamId, ParamId) {
        self.fc2
    }

    fn conv(&self, g: &mut Graph<T>, x: Var, layer: &SpiralConvLayer, batch: usize) -> TResult<Var> {
        let table = &self.hierarchy.levels[layer.level].spiral;
        let (w, b) = (g.param(layer.weight), g.param(layer.bias));
        spiral_conv_node(g, x, table, w, b, batch)
    }

    /// `batch·V₀ × 3` coordinates to `batch × C` codes. `g` must have been
    /// created with [`Graph::with_params`] on this model's store.
    pub fn encode_node(&self, g: &mut Graph<T>, x: Var, batch: usize) -> TResult<Var> {
        let mut h = x;
        for (i, layer) in self.encoder.iter().enumerate() {
            h = self.conv(g, h, layer, batch)?;
            h = g.elu(h)?;
            h = g.sparse_apply(self.down[i].clone(), h, batch)?;
        }
        let width = self.hierarchy.levels[ENCODER_DEPTH].vertex_count() * ENCODER_WIDTHS[3];
        let flat = g.reshape(h, [batch, width])?;
        g.affine(flat, g.param(self.fc1.0), g.param(self.fc1.1))
    }

    /// `batch × C` codes to `batch·V₀ × 3` coordinates.
    pub fn decode_node(&self, g: &mut Graph<T>, z: Var, batch: usize) -> TResult<Var> {
        let h = g.affine(z, g.param(self.fc2.0), g.param(self.fc2.1))?;
        let coarse = self.hierarchy.levels[ENCODER_DEPTH].vertex_count();
        let mut h = g.reshape(h, [batch * coarse, ENCODER_WIDTHS[3]])?;
        let mut level = ENCODER_DEPTH;
        for layer in &self.decoder {
            if layer.level < level {
                h = g.sparse_apply(self.up[layer.level].clone(), h, batch)?;
                level = layer.level;
            }
            h = self.conv(g, h, layer, batch)?;
            h = g.elu(h)?;
        }
        self.conv(g, h, &self.output, batch)
    }

    /// Codes for a batch of frames, one row per frame.
    pub fn encode_frames(&self, frames: &[&MeshFrame]) -> Result<Tensor<T>> {
        let x = frames_tensor(frames, self.vertex_count())?;
        let mut g = Graph::with_params(&self.params);
        let x = g.constant(x);
        let z = self.encode_node(&mut g, x, frames.len())?;
        Ok(g.value(z).clone())
    }

    pub fn encode(&self, frame: &MeshFrame) -> Result<Vec<T>> {
        Ok(self.encode_frames(&[frame])?.into_data())
    }

    /// Decodes `batch × C` codes into `batch·V₀ × 3` coordinates.
    pub fn decode_codes(&self, codes: &Tensor<T>) -> Result<Tensor<T>> {
        if !codes.is_matrix() || codes.cols() != self.latent_dim {
            return Err(Error::Config(format!(
                "codes must be n × {}, got {:?}",
                self.latent_dim,
                codes.shape()
            )));
        }
        let mut g = Graph::with_params(&self.params);
        let z = g.constant(codes.clone());
        let y = self.decode_node(&mut g, z, codes.rows())?;
        Ok(g.value(y).clone())
    }

    pub fn decode(&self, code: &[T]) -> Result<MeshFrame> {
        let codes = Tensor::matrix(1, code.len(), code.to_vec())?;
        let y = self.decode_codes(&codes)?;
        Ok(tensor_frame(&y))
    }
}

/// Stacks frames into a `frames·V × 3` matrix.
pub fn frames_tensor<T: Real>(frames: &[&MeshFrame], vertex_count: usize) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(frames.len() * vertex_count * 3);
    for f in frames {
        if f.len() != vertex_count {
            return Err(crate::mesh::MeshError::VertexCount {
                expected: vertex_count,
                got: f.len(),
            }
            .into());
        }
        data.extend(f.flat().map(|x| T::of(x as f64)));
    }
    Ok(Tensor::matrix(frames.len() * vertex_count, 3, data)?)
}

pub fn tensor_frame<T: Real>(t: &Tensor<T>) -> MeshFrame {
    MeshFrame::new(
        t.data()
            .chunks_exact(3)
            .map(|p| [p[0].f64() as f32, p[1].f64() as f32, p[2].f64() as f32])
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::build_hierarchy;
    use crate::mesh::icosphere;

    fn model(c: usize) -> Spae<f64> {
        let (topo, frame) = icosphere(2);
        let h = build_hierarchy(&topo, &frame, &[2.0; 4], &[12, 12, 10, 10, 8]).unwrap();
        Spae::new(Arc::new(h), c, 3).unwrap()
    }

    #[test]
    fn layout_and_names() {
        let m = model(32);
        let p = m.params();
        assert_eq!(p.get(p.id("spae.enc.0.weight").unwrap()).shape(), &[36, 16]);
        assert_eq!(p.get(p.id("spae.fc1.weight").unwrap()).shape(), &[11 * 128, 32]);
        assert_eq!(p.get(p.id("spae.fc2.weight").unwrap()).shape(), &[32, 11 * 128]);
        assert_eq!(p.get(p.id("spae.dec.0.weight").unwrap()).shape(), &[10 * 128, 128]);
        assert_eq!(p.get(p.id("spae.dec.4.weight").unwrap()).shape(), &[12 * 32, 16]);
        assert_eq!(p.get(p.id("spae.out.weight").unwrap()).shape(), &[12 * 16, 3]);
        let widths: Vec<usize> = m.decoder_layers().iter().map(|l| l.out_features).collect();
        assert_eq!(widths, DECODER_WIDTHS);
    }

    #[test]
    fn shapes_and_purity() {
        let m = model(8);
        let (_, frame) = icosphere(2);
        let a = m.encode(&frame).unwrap();
        let b = m.encode(&frame).unwrap();
        assert_eq!(a.len(), 8);
        assert_eq!(a, b);
        let rec = m.decode(&a).unwrap();
        assert_eq!(rec.len(), 162);
        assert_eq!(rec, m.decode(&a).unwrap());
    }

    #[test]
    fn batching_matches_single_frames() {
        let m = model(8);
        let (_, f0) = icosphere(2);
        let f1 = MeshFrame::new(f0.coords().iter().map(|p| [p[0] * 0.5, p[1], -p[2]]).collect());
        let both = m.encode_frames(&[&f0, &f1]).unwrap();
        assert_eq!(both.row(0), m.encode(&f0).unwrap().as_slice());
        assert_eq!(both.row(1), m.encode(&f1).unwrap().as_slice());
    }

    #[test]
    fn wrong_depth_rejected() {
        let (topo, frame) = icosphere(2);
        let h = build_hierarchy(&topo, &frame, &[2.0; 3], &[8]).unwrap();
        assert!(Spae::<f32>::new(Arc::new(h), 8, 0).is_err());
    }
}
