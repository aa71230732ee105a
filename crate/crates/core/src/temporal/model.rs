use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::attention::{qkv_project_node, self_attention_node};
use crate::error::{Error, Result};
use crate::seed;
use crate::spae::EmbeddingSequence;
use crate::tensor::{
    xavier_uniform, CsrMatrix, Graph, ParamId, ParamStore, Real, TResult, Tensor, TensorError, Var, GATHER_PAD,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadKind {
    Transformer,
    Mlp,
    Lstm,
    Cnn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PeMode {
    None,
    Sinusoidal,
    Learned,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pooling {
    Mean,
    ClassToken,
}

macro_rules! named_enum {
    ($ty:ident, $what:literal, $($variant:ident => $name:literal),+) => {
        impl $ty {
            pub fn name(self) -> &'static str {
                match self {
                    $($ty::$variant => $name),+
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    _ => Err(Error::Config(format!(
                        concat!("unknown ", $what, " {:?} (expected one of: {})"),
                        s,
                        [$($name),+].join(", ")
                    ))),
                }
            }
        }
    };
}

named_enum!(HeadKind, "head", Transformer => "transformer", Mlp => "mlp", Lstm => "lstm", Cnn => "cnn");
named_enum!(PeMode, "positional encoding", None => "none", Sinusoidal => "sinusoidal", Learned => "learned");
named_enum!(Pooling, "pooling", Mean => "mean", ClassToken => "cls");

/// Architecture of a temporal classifier. Fields that do not apply to the
/// chosen `kind` are ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierConfig {
    pub kind: HeadKind,
    pub input_dim: usize,
    pub n_classes: usize,
    pub d_model: usize,
    pub heads: Vec<usize>,
    pub pe: PeMode,
    pub pooling: Pooling,
    pub residual: bool,
    pub feed_forward: bool,
    pub layer_norm: bool,
    pub ffn_hidden: usize,
    /// Capacity of the learned position table.
    pub max_len: usize,
    /// Width of the ablation heads' hidden layers.
    pub hidden: usize,
    /// Sequence length; only the MLP head depends on it.
    pub seq_len: usize,
}

impl ClassifierConfig {
    pub fn transformer(input_dim: usize, n_classes: usize) -> Self {
        Self {
            kind: HeadKind::Transformer,
            input_dim,
            n_classes,
            d_model: 128,
            heads: vec![2, 2, 2],
            pe: PeMode::Sinusoidal,
            pooling: Pooling::Mean,
            residual: true,
            feed_forward: true,
            layer_norm: true,
            ffn_hidden: 256,
            max_len: 1024,
            hidden: 128,
            seq_len: 24,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_dim == 0 || self.n_classes < 2 {
            return bad(format!("need input_dim ≥ 1 and n_classes ≥ 2, got {} and {}", self.input_dim, self.n_classes));
        }
        match self.kind {
            HeadKind::Transformer => {
                if self.heads.len() != 3 {
                    return bad(format!("the transformer has 3 attention layers, got {} head counts", self.heads.len()));
                }
                if let Some(&h) = self.heads.iter().find(|&&h| h == 0 || !self.d_model.is_multiple_of(h)) {
                    return bad(format!("d_model {} is not divisible by head count {h}", self.d_model));
                }
                if self.feed_forward && self.ffn_hidden == 0 {
                    return bad("ffn_hidden must be positive".into());
                }
                if self.pe == PeMode::Learned && self.max_len == 0 {
                    return bad("max_len must be positive".into());
                }
            }
            _ => {
                if self.hidden == 0 || self.seq_len == 0 {
                    return bad("hidden and seq_len must be positive".into());
                }
            }
        }
        Ok(())
    }

    /// `key=value` lines recorded in checkpoints. The sequence length is
    /// only recorded for the MLP, whose shape depends on it.
    pub fn to_meta(&self) -> String {
        let heads: Vec<String> = self.heads.iter().map(usize::to_string).collect();
        let mut s = format!(
            "kind={}\ninput_dim={}\nn_classes={}\nd_model={}\nheads={}\npe={}\npooling={}\nresidual={}\nfeed_forward={}\nlayer_norm={}\nffn_hidden={}\nmax_len={}\nhidden={}\n",
            self.kind,
            self.input_dim,
            self.n_classes,
            self.d_model,
            heads.join(","),
            self.pe,
            self.pooling,
            self.residual,
            self.feed_forward,
            self.layer_norm,
            self.ffn_hidden,
            self.max_len,
            self.hidden
        );
        if self.kind == HeadKind::Mlp {
            s.push_str(&format!("seq_len={}\n", self.seq_len));
        }
        s
    }

    pub fn from_meta(meta: &str) -> Result<Self> {
        let mut c = Self::transformer(1, 2);
        let bad = |k: &str, v: &str| Error::Config(format!("checkpoint metadata: bad value {v:?} for {k}"));
        for line in meta.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| bad("line", line))?;
            let num = || v.parse::<usize>().map_err(|_| bad(k, v));
            let flag = || v.parse::<bool>().map_err(|_| bad(k, v));
            match k {
                "kind" => c.kind = v.parse()?,
                "input_dim" => c.input_dim = num()?,
                "n_classes" => c.n_classes = num()?,
                "d_model" => c.d_model = num()?,
                "heads" => {
                    c.heads = v
                        .split(',')
                        .map(|h| h.parse().map_err(|_| bad(k, v)))
                        .collect::<Result<_>>()?
                }
                "pe" => c.pe = v.parse()?,
                "pooling" => c.pooling = v.parse()?,
                "residual" => c.residual = flag()?,
                "feed_forward" => c.feed_forward = flag()?,
                "layer_norm" => c.layer_norm = flag()?,
                "ffn_hidden" => c.ffn_hidden = num()?,
                "max_len" => c.max_len = num()?,
                "hidden" => c.hidden = num()?,
                "seq_len" => c.seq_len = num()?,
                _ => {}
            }
        }
        c.validate()?;
        Ok(c)
    }
}

type Dense = (ParamId, ParamId);

#[derive(Clone, Debug)]
struct AttentionLayer {
    heads: Vec<[ParamId; 3]>,
    out: Dense,
    ln1: Option<Dense>,
    ln2: Option<Dense>,
    ffn: Option<(Dense, Dense)>,
}

#[derive(Clone, Debug)]
enum Layout {
    Transformer {
        input: Dense,
        pos: Option<ParamId>,
        cls: Option<ParamId>,
        layers: Vec<AttentionLayer>,
        final_ln: Option<Dense>,
        fc3: Dense,
    },
    Mlp {
        hidden: Vec<Dense>,
        out: Dense,
    },
    Lstm {
        layers: Vec<Dense>,
        out: Dense,
    },
    Cnn {
        convs: Vec<Dense>,
        out: Dense,
    },
}

/// Logits and lowest-index argmax for one sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MemoryProfile {
    /// Every non-parameter node value, inputs included.
    pub activation_bytes: usize,
    /// Raw, scaled and normalized attention scores over all heads and layers.
    pub attention_score_bytes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction<T> {
    pub logits: Vec<T>,
    pub label: usize,
}

/// First index of the maximum; NaN entries never win.
pub fn argmax<T: Real>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] || values[best].is_nan() {
            best = i;
        }
    }
    best
}

/// Standard sinusoidal table: column `2i` is `sin(p / 10000^(2i/d))`,
/// column `2i+1` the matching cosine.
pub fn sinusoidal_encoding<T: Real>(len: usize, d_model: usize) -> Tensor<T> {
    Tensor::from_fn(len, d_model, |p, j| {
        let i = (j / 2) as f64;
        let angle = p as f64 / 10000f64.powf(2.0 * i / d_model as f64);
        T::of(if j % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

/// Temporal classifier over embedding sequences: the attention model or one
/// of the MLP/LSTM/CNN ablation heads.
#[derive(Clone, Debug)]
pub struct Classifier<T> {
    config: ClassifierConfig,
    params: ParamStore<T>,
    layout: Layout,
}

struct Builder<T> {
    params: ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<T: Real> Builder<T> {
    fn dense(&mut self, name: &str, rows: usize, cols: usize) -> TResult<Dense> {
        let w = self.params.add(format!("{name}.weight"), xavier_uniform(&mut self.rng, rows, cols))?;
        let b = self.params.add(format!("{name}.bias"), Tensor::zeros([1, cols]))?;
        Ok((w, b))
    }

    fn norm(&mut self, name: &str, d: usize) -> TResult<Dense> {
        let g = self.params.add(format!("{name}.gain"), Tensor::full([1, d], T::one()))?;
        let b = self.params.add(format!("{name}.bias"), Tensor::zeros([1, d]))?;
        Ok((g, b))
    }

    fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> TResult<ParamId> {
        self.params.add(name, xavier_uniform(&mut self.rng, rows, cols))
    }
}

impl<T: Real> Classifier<T> {
    pub fn new(config: ClassifierConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            params: ParamStore::new(),
            rng: ChaCha8Rng::seed_from_u64(seed::derive(seed, "classifier-init")),
        };
        let c = &config;
        let layout = match c.kind {
            HeadKind::Transformer => {
                let d = c.d_model;
                let input = b.dense("trf.input", c.input_dim, d)?;
                let pos = match c.pe {
                    PeMode::Learned => Some(b.matrix("trf.pos", c.max_len, d)?),
                    _ => None,
                };
                let cls = match c.pooling {
                    Pooling::ClassToken => Some(b.matrix("trf.cls", 1, d)?),
                    Pooling::Mean => None,
                };
                let mut layers = Vec::with_capacity(3);
                for (l, &h) in c.heads.iter().enumerate() {
                    let dh = d / h;
                    let p = format!("trf.layer{l}");
                    let heads = (0..h)
                        .map(|i| {
                            Ok([
                                b.matrix(&format!("{p}.head{i}.wq"), d, dh)?,
                                b.matrix(&format!("{p}.head{i}.wk"), d, dh)?,
                                b.matrix(&format!("{p}.head{i}.wv"), d, dh)?,
                            ])
                        })
                        .collect::<TResult<Vec<_>>>()?;
                    let out = b.dense(&format!("{p}.wo"), d, d)?;
                    let ln1 = c.layer_norm.then(|| b.norm(&format!("{p}.ln1"), d)).transpose()?;
                    let (ln2, ffn) = if c.feed_forward {
                        let ln2 = c.layer_norm.then(|| b.norm(&format!("{p}.ln2"), d)).transpose()?;
                        let f1 = b.dense(&format!("{p}.ff1"), d, c.ffn_hidden)?;
                        let f2 = b.dense(&format!("{p}.ff2"), c.ffn_hidden, d)?;
                        (ln2, Some((f1, f2)))
                    } else {
                        (None, None)
                    };
                    layers.push(AttentionLayer {
                        heads,
                        out,
                        ln1,
                        ln2,
                        ffn,
                    });
                }
                let final_ln = c.layer_norm.then(|| b.norm("trf.final_ln", d)).transpose()?;
                let fc3 = b.dense("trf.fc3", d, c.n_classes)?;
                Layout::Transformer {
                    input,
                    pos,
                    cls,
                    layers,
                    final_ln,
                    fc3,
                }
            }
            HeadKind::Mlp => {
                let mut hidden = Vec::with_capacity(3);
                let mut width = c.seq_len * c.input_dim;
                for i in 0..3 {
                    hidden.push(b.dense(&format!("mlp.fc{i}"), width, c.hidden)?);
                    width = c.hidden;
                }
                let out = b.dense("mlp.out", c.hidden, c.n_classes)?;
                Layout::Mlp { hidden, out }
            }
            HeadKind::Lstm => {
                let mut layers = Vec::with_capacity(3);
                let mut width = c.input_dim;
                for i in 0..3 {
                    layers.push(b.dense(&format!("lstm.layer{i}"), width + c.hidden, 4 * c.hidden)?);
                    width = c.hidden;
                }
                let out = b.dense("lstm.out", c.hidden, c.n_classes)?;
                Layout::Lstm { layers, out }
            }
            HeadKind::Cnn => {
                let mut convs = Vec::with_capacity(3);
                let mut width = c.input_dim;
                for i in 0..3 {
                    convs.push(b.dense(&format!("cnn.conv{i}"), 3 * width, c.hidden)?);
                    width = c.hidden;
                }
                let out = b.dense("cnn.out", c.hidden, c.n_classes)?;
                Layout::Cnn { convs, out }
            }
        };
        Ok(Self {
            config,
            params: b.params,
            layout,
        })
    }

    /// Rebuilds the layout from `config` and copies weights by name.
    pub fn from_params<U: Real>(config: ClassifierConfig, params: &ParamStore<U>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        model.params.load_from(params)?;
        Ok(model)
    }

    pub fn cast<U: Real>(&self) -> Classifier<U> {
        Classifier {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.element_count()
    }

    /// Buffers live after a forward pass on `batch` sequences of `len`
    /// zero tokens. The graph keeps every node until it is dropped, so
    /// these are also the peaks of a training step's forward half.
    pub fn memory_profile(&self, batch: usize, len: usize) -> Result<MemoryProfile> {
        let mut g = Graph::with_params(&self.params);
        let x = g.constant(Tensor::zeros([batch * len, self.config.input_dim]));
        self.logits_node(&mut g, x, batch, len)?;
        Ok(MemoryProfile {
            activation_bytes: g.activation_bytes(),
            attention_score_bytes: g.tagged_bytes(super::attention::SCORE_TAG),
        })
    }

    /// The table added to the projected tokens of a length-`len` sequence.
    pub fn positional_encoding(&self, len: usize) -> Result<Tensor<T>> {
        let d = self.config.d_model;
        match self.config.pe {
            PeMode::None => Ok(Tensor::zeros([len, d])),
            PeMode::Sinusoidal => Ok(sinusoidal_encoding(len, d)),
            PeMode::Learned => {
                if len > self.config.max_len {
                    return Err(Error::Config(format!(
                        "sequence length {len} exceeds the learned position table ({})",
                        self.config.max_len
                    )));
                }
                let Layout::Transformer { pos: Some(p), .. } = &self.layout else {
                    unreachable!("learned encoding implies a position table")
                };
                let table = self.params.get(*p);
                Ok(Tensor::matrix(len, d, table.data()[..len * d].to_vec())?)
            }
        }
    }

    /// Logits for `batch` stacked sequences of `len` tokens each; `x` is
    /// `batch·len × input_dim`. `g` must carry this model's parameters.
    pub fn logits_node(&self, g: &mut Graph<T>, x: Var, batch: usize, len: usize) -> Result<Var> {
        let (rows, cols) = (g.value(x).rows(), g.value(x).cols());
        if rows != batch * len || cols != self.config.input_dim {
            return Err(TensorError::ShapeMismatch {
                op: "classifier",
                left: vec![batch * len, self.config.input_dim],
                right: vec![rows, cols],
            }
            .into());
        }
        let p = |g: &Graph<T>, (w, b): Dense| (g.param(w), g.param(b));
        match &self.layout {
            Layout::Transformer {
                input,
                pos,
                cls,
                layers,
                final_ln,
                fc3,
            } => {
                let (w, b) = p(g, *input);
                let mut h = g.affine(x, w, b)?;
                match (self.config.pe, pos) {
                    (PeMode::Sinusoidal, _) => {
                        let pe = sinusoidal_encoding::<T>(len, self.config.d_model);
                        let tiled = tile_rows(&pe, batch);
                        let pe = g.constant(tiled);
                        h = g.add(h, pe)?;
                    }
                    (PeMode::Learned, Some(pos)) => {
                        if len > self.config.max_len {
                            return Err(Error::Config(format!(
                                "sequence length {len} exceeds the learned position table ({})",
                                self.config.max_len
                            )));
                        }
                        let index = (0..batch).flat_map(|_| 0..len).collect();
                        let table = g.param(*pos);
                        let pe = g.gather_rows(table, index)?;
                        h = g.add(h, pe)?;
                    }
                    _ => {}
                }
                let mut tokens = len;
                if let Some(cls) = cls {
                    let cls = g.param(*cls);
                    let mut parts = Vec::with_capacity(2 * batch);
                    for s in 0..batch {
                        parts.push(cls);
                        parts.push(g.gather_rows(h, (s * len..(s + 1) * len).collect())?);
                    }
                    h = g.concat_rows(&parts)?;
                    tokens += 1;
                }
                for layer in layers {
                    h = self.attention_layer(g, h, layer, batch, tokens)?;
                }
                if let Some(ln) = final_ln {
                    let (gain, bias) = p(g, *ln);
                    h = g.layer_norm(h, gain, bias)?;
                }
                let pooled = match cls {
                    Some(_) => g.gather_rows(h, (0..batch).map(|s| s * tokens).collect())?,
                    None => g.sparse_apply(mean_operator(tokens), h, batch)?,
                };
                let (w, b) = p(g, *fc3);
                Ok(g.affine(pooled, w, b)?)
            }
            Layout::Mlp { hidden, out } => {
                if len != self.config.seq_len {
                    return Err(Error::Config(format!(
                        "the MLP head was built for {} frames, got {len}",
                        self.config.seq_len
                    )));
                }
                let mut h = g.reshape(x, [batch, len * self.config.input_dim])?;
                for layer in hidden {
                    let (w, b) = p(g, *layer);
                    h = g.affine(h, w, b)?;
                    h = g.elu(h)?;
                }
                let (w, b) = p(g, *out);
                Ok(g.affine(h, w, b)?)
            }
            Layout::Lstm { layers, out } => {
                let hd = self.config.hidden;
                let mut steps: Vec<Var> = (0..len)
                    .map(|t| g.gather_rows(x, (0..batch).map(|s| s * len + t).collect()))
                    .collect::<TResult<_>>()?;
                for layer in layers {
                    let (w, b) = p(g, *layer);
                    let mut hs = g.constant(Tensor::zeros([batch, hd]));
                    let mut cs = g.constant(Tensor::zeros([batch, hd]));
                    for step in steps.iter_mut() {
                        let xin = g.concat_cols(&[*step, hs])?;
                        let gates = g.affine(xin, w, b)?;
                        let i = g.slice_cols(gates, 0, hd)?;
                        let i = g.sigmoid(i)?;
                        let f = g.slice_cols(gates, hd, hd)?;
                        let f = g.sigmoid(f)?;
                        let c = g.slice_cols(gates, 2 * hd, hd)?;
                        let c = g.tanh(c)?;
                        let o = g.slice_cols(gates, 3 * hd, hd)?;
                        let o = g.sigmoid(o)?;
                        let keep = g.mul(f, cs)?;
                        let write = g.mul(i, c)?;
                        cs = g.add(keep, write)?;
                        let squashed = g.tanh(cs)?;
                        hs = g.mul(o, squashed)?;
                        *step = hs;
                    }
                }
                let (w, b) = p(g, *out);
                Ok(g.affine(steps[len - 1], w, b)?)
            }
            Layout::Cnn { convs, out } => {
                let mut h = x;
                for conv in convs {
                    let width = g.value(h).cols();
                    let gathered = g.gather_rows(h, temporal_window(batch, len))?;
                    let flat = g.reshape(gathered, [batch * len, 3 * width])?;
                    let (w, b) = p(g, *conv);
                    h = g.affine(flat, w, b)?;
                    h = g.elu(h)?;
                }
                let pooled = g.sparse_apply(mean_operator(len), h, batch)?;
                let (w, b) = p(g, *out);
                Ok(g.affine(pooled, w, b)?)
            }
        }
    }

    fn attention_layer(&self, g: &mut Graph<T>, h: Var, layer: &AttentionLayer, batch: usize, len: usize) -> TResult<Var> {
        let p = |g: &Graph<T>, (w, b): Dense| (g.param(w), g.param(b));
        let a = match layer.ln1 {
            Some(ln) => {
                let (gain, bias) = p(g, ln);
                g.layer_norm(h, gain, bias)?
            }
            None => h,
        };
        let head_out = attention_block(g, a, &layer.heads, batch, len)?;
        let (w, b) = p(g, layer.out);
        let o = g.affine(head_out, w, b)?;
        let mut h = if self.config.residual { g.add(h, o)? } else { o };
        if let Some((f1, f2)) = layer.ffn {
            let a = match layer.ln2 {
                Some(ln) => {
                    let (gain, bias) = p(g, ln);
                    g.layer_norm(h, gain, bias)?
                }
                None => h,
            };
            let (w, b) = p(g, f1);
            let f = g.affine(a, w, b)?;
            let f = g.elu(f)?;
            let (w, b) = p(g, f2);
            let f = g.affine(f, w, b)?;
            h = if self.config.residual { g.add(h, f)? } else { f };
        }
        Ok(h)
    }

    /// Logits for every sequence, in batches of `batch_size`.
    pub fn predict(&self, seqs: &[EmbeddingSequence], batch_size: usize) -> Result<Vec<Prediction<T>>> {
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(batch_size.max(1)) {
            let (x, len) = stack_tokens::<T>(chunk)?;
            let mut g = Graph::with_params(&self.params);
            let x = g.constant(x);
            let logits = self.logits_node(&mut g, x, chunk.len(), len)?;
            let t = g.value(logits);
            for r in 0..chunk.len() {
                let logits = t.row(r).to_vec();
                out.push(Prediction {
                    label: argmax(&logits),
                    logits,
                });
            }
        }
        Ok(out)
    }

    pub fn classify(&self, seq: &EmbeddingSequence) -> Result<Prediction<T>> {
        Ok(self.predict(std::slice::from_ref(seq), 1)?.remove(0))
    }
}

/// Multi-head self-attention of `batch` independent sequences: per head,
/// project, attend within each sequence, and concatenate heads by column.
pub fn attention_block<T: Real>(g: &mut Graph<T>, x: Var, heads: &[[ParamId; 3]], batch: usize, len: usize) -> TResult<Var> {
    let mut outs = Vec::with_capacity(heads.len());
    for &[wq, wk, wv] in heads {
        let (wq, wk, wv) = (g.param(wq), g.param(wk), g.param(wv));
        let (q, k, v) = qkv_project_node(g, x, wq, wk, wv)?;
        if batch == 1 {
            outs.push(self_attention_node(g, q, k, v)?);
            continue;
        }
        let mut per_seq = Vec::with_capacity(batch);
        for s in 0..batch {
            let rows: Vec<usize> = (s * len..(s + 1) * len).collect();
            let qs = g.gather_rows(q, rows.clone())?;
            let ks = g.gather_rows(k, rows.clone())?;
            let vs = g.gather_rows(v, rows)?;
            per_seq.push(self_attention_node(g, qs, ks, vs)?);
        }
        outs.push(g.concat_rows(&per_seq)?);
    }
    if outs.len() == 1 {
        Ok(outs[0])
    } else {
        g.concat_cols(&outs)
    }
}

fn mean_operator<T: Real>(len: usize) -> Arc<CsrMatrix<T>> {
    let w = T::of(1.0 / len as f64);
    let triples: Vec<(usize, usize, T)> = (0..len).map(|t| (0, t, w)).collect();
    Arc::new(CsrMatrix::from_triples(1, len, &triples))
}

/// Gather index for a width-3 temporal window with zero padding.
fn temporal_window(batch: usize, len: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(batch * len * 3);
    for s in 0..batch {
        for t in 0..len {
            for k in 0..3 {
                let u = t as isize + k as isize - 1;
                out.push(if u < 0 || u >= len as isize { GATHER_PAD } else { s * len + u as usize });
            }
        }
    }
    out
}

fn tile_rows<T: Real>(t: &Tensor<T>, times: usize) -> Tensor<T> {
    let data = (0..times).flat_map(|_| t.data().iter().copied()).collect();
    Tensor::matrix(t.rows() * times, t.cols(), data).expect("tiled shape")
}

/// Stacks equal-length token sequences into one `n·L × C` matrix.
pub fn stack_tokens<T: Real>(seqs: &[EmbeddingSequence]) -> Result<(Tensor<T>, usize)> {
    let first = seqs.first().ok_or_else(|| Error::Config("empty batch".into()))?;
    let (len, width) = (first.len(), first.width());
    let mut data = Vec::with_capacity(seqs.len() * len * width);
    for s in seqs {
        if s.len() != len || s.width() != width {
            return Err(Error::Config(format!(
                "sequences in a batch must share a shape: {len}×{width} vs {}×{}",
                s.len(),
                s.width()
            )));
        }
        data.extend(s.tokens.data().iter().map(|&x| T::of(x as f64)));
    }
    Ok((Tensor::matrix(seqs.len() * len, width, data)?, len))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(len: usize, width: usize, salt: f32) -> EmbeddingSequence {
        let t = Tensor::from_fn(len, width, |i, j| ((i * 7 + j * 3) as f32 * 0.37 + salt).sin());
        EmbeddingSequence::new(t, Some(0)).unwrap()
    }

    fn small(kind: HeadKind) -> ClassifierConfig {
        ClassifierConfig {
            kind,
            d_model: 8,
            ffn_hidden: 16,
            hidden: 6,
            seq_len: 5,
            max_len: 16,
            ..ClassifierConfig::transformer(4, 3)
        }
    }

    #[test]
    fn every_head_emits_class_logits() {
        for kind in [HeadKind::Transformer, HeadKind::Mlp, HeadKind::Lstm, HeadKind::Cnn] {
            let m = Classifier::<f64>::new(small(kind), 1).unwrap();
            let p = m.classify(&seq(5, 4, 0.0)).unwrap();
            assert_eq!(p.logits.len(), 3, "{kind}");
            assert_eq!(p.label, argmax(&p.logits));
        }
    }

    #[test]
    fn batched_prediction_matches_single() {
        for kind in [HeadKind::Transformer, HeadKind::Mlp, HeadKind::Lstm, HeadKind::Cnn] {
            let m = Classifier::<f64>::new(small(kind), 2).unwrap();
            let seqs = vec![seq(5, 4, 0.0), seq(5, 4, 1.0), seq(5, 4, 2.0)];
            let batch = m.predict(&seqs, 3).unwrap();
            for (s, b) in seqs.iter().zip(&batch) {
                let single = m.classify(s).unwrap();
                for (x, y) in single.logits.iter().zip(&b.logits) {
                    assert!((x - y).abs() < 1e-12, "{kind}");
                }
            }
        }
    }

    #[test]
    fn transformer_size_is_independent_of_length() {
        let a = Classifier::<f32>::new(ClassifierConfig { seq_len: 16, ..small(HeadKind::Transformer) }, 0).unwrap();
        let b = Classifier::<f32>::new(ClassifierConfig { seq_len: 96, ..small(HeadKind::Transformer) }, 0).unwrap();
        assert_eq!(a.param_count(), b.param_count());
        let m16 = Classifier::<f32>::new(ClassifierConfig { seq_len: 16, ..small(HeadKind::Mlp) }, 0).unwrap();
        let m24 = Classifier::<f32>::new(ClassifierConfig { seq_len: 24, ..small(HeadKind::Mlp) }, 0).unwrap();
        assert!(m24.param_count() > m16.param_count());
    }

    #[test]
    fn sinusoidal_rows() {
        let pe = sinusoidal_encoding::<f64>(50, 6);
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!(pe.data().iter().all(|x| x.abs() <= 1.0));
        assert!((pe.at(1, 0) - 1f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn learned_table_capacity() {
        let m = Classifier::<f64>::new(ClassifierConfig { pe: PeMode::Learned, ..small(HeadKind::Transformer) }, 0).unwrap();
        assert!(m.positional_encoding(16).is_ok());
        assert!(m.positional_encoding(17).is_err());
        assert!(m.classify(&seq(17, 4, 0.0)).is_err());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0f32; 4]), 0);
    }

    #[test]
    fn meta_round_trip() {
        for kind in [HeadKind::Transformer, HeadKind::Mlp] {
            let c = ClassifierConfig {
                pe: PeMode::Learned,
                pooling: Pooling::ClassToken,
                residual: false,
                ..small(kind)
            };
            let back = ClassifierConfig::from_meta(&c.to_meta()).unwrap();
            assert_eq!(back.to_meta(), c.to_meta());
        }
        assert!(!small(HeadKind::Transformer).to_meta().contains("seq_len"));
    }

    #[test]
    fn config_validation() {
        let c = ClassifierConfig { heads: vec![3, 2, 2], ..small(HeadKind::Transformer) };
        assert!(Classifier::<f32>::new(c, 0).is_err());
        let c = ClassifierConfig { heads: vec![2, 2], ..small(HeadKind::Transformer) };
        assert!(Classifier::<f32>::new(c, 0).is_err());
        assert!("gru".parse::<HeadKind>().is_err());
        assert_eq!("cls".parse::<Pooling>().unwrap(), Pooling::ClassToken);
    }
}
