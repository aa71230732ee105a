//! Self-checks behind `spatr verify`: finite-difference gradients, naive
//! loop oracles and structural invariants. Every check reports the largest
//! error it observed next to its tolerance.

use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::hierarchy::{apply_sampling, build_hierarchy, build_spiral_table, MeshHierarchy, SamplingKind, SPIRAL_PAD};
use crate::mesh::{
    decode_sequence, encode_sequence, icosphere, normalize_frames, denormalize_frames, tetrahedron, MeshFrame,
    MeshSequence, TemplateTopology,
};
use crate::seed;
use crate::spae::{decode_embeddings, encode_embeddings, spiral_conv, EmbeddingSequence, Spae};
use crate::temporal::{self_attention, Classifier, ClassifierConfig, HeadKind, PeMode, Pooling};
use crate::tensor::{CsrMatrix, Graph, ParamStore, Tensor, Var, GATHER_PAD};

const FD_EPS: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-5;
const ORACLE_TOL: f64 = 1e-12;

/// Deliberate defects used to prove that the suite can fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Scales the analytic matmul gradient by `1 + 1e-3`.
    CorruptGradient,
}

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub seeds: u64,
    pub fault: Option<Fault>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { seeds: 10, fault: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn new(name: impl Into<String>, max_error: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            max_error,
            tolerance,
            passed: max_error.is_finite() && max_error <= tolerance,
        }
    }

    fn from_result(name: &str, r: Result<f64>, tolerance: f64) -> Self {
        match r {
            Ok(e) => Self::new(name, e, tolerance),
            Err(_) => Self::new(name, f64::INFINITY, tolerance),
        }
    }
}

/// One line per check, then a summary line.
pub fn render_report(checks: &[Check]) -> String {
    let mut out = String::new();
    for c in checks {
        out.push_str(&format!(
            "{} {:<34} max_error={:.3e} tol={:.0e}\n",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.max_error,
            c.tolerance
        ));
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    out.push_str(&format!("{} checks, {} failed\n", checks.len(), failed));
    out
}

/// Below this magnitude gradients are compared absolutely.
pub const ABS_FLOOR: f64 = 1e-8;

/// Relative error, or absolute error where both values are tiny.
pub fn grad_error(analytic: f64, numeric: f64) -> f64 {
    grad_error_with_floor(analytic, numeric, ABS_FLOOR)
}

/// The absolute comparison below the floor.
pub fn grad_error_with_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if analytic.abs() + numeric.abs() < floor {
        diff
    } else {
        diff / analytic.abs().max(numeric.abs())
    }
}

/// Error relative to `max(|a|, |n|, scale)`.
pub fn scaled_grad_error(analytic: f64, numeric: f64, scale: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(scale)
}

#[derive(Clone, Copy, Debug)]
enum Compare {
    Floor(f64),
    Scaled(f64),
}

impl Compare {
    fn error(self, a: f64, n: f64) -> f64 {
        match self {
            Compare::Floor(f) => grad_error_with_floor(a, n, f),
            Compare::Scaled(s) => scaled_grad_error(a, n, s),
        }
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

type Build = dyn Fn(&mut Graph<f64>, &[Var]) -> crate::tensor::TResult<Var>;

/// Central differences against backward for every entry of every input.
fn fd_inputs(inputs: &[Tensor<f64>], build: &Build, corrupt: bool) -> Result<f64> {
    let eval = |ins: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.input(t.clone())).collect();
        let l = build(&mut g, &vars)?;
        Ok(g.value(l).item())
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    let mut worst = 0.0f64;
    for (i, t) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[i]);
        for j in 0..t.len() {
            let mut ins = inputs.to_vec();
            ins[i].data_mut()[j] += FD_EPS;
            let plus = eval(&ins)?;
            ins[i].data_mut()[j] -= 2.0 * FD_EPS;
            let minus = eval(&ins)?;
            let numeric = (plus - minus) / (2.0 * FD_EPS);
            let a = analytic.data()[j] * if corrupt { 1.0 + 1e-3 } else { 1.0 };
            worst = worst.max(grad_error(a, numeric));
        }
    }
    Ok(worst)
}

/// Checks `per_tensor` random entries of every parameter tensor (all
/// entries when the tensor is smaller).
fn fd_params(
    store: &ParamStore<f64>,
    eval: &dyn Fn(&ParamStore<f64>) -> Result<(Graph<f64>, Var)>,
    per_tensor: usize,
    compare: Compare,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let (g, loss) = eval(store)?;
    let grads = g.backward(loss)?.into_param_grads();
    drop(g);
    let value = |s: &ParamStore<f64>| -> Result<f64> {
        let (g, l) = eval(s)?;
        Ok(g.value(l).item())
    };
    let mut worst = 0.0f64;
    let mut probe = store.clone();
    for id in store.ids().collect::<Vec<_>>() {
        let n = store.get(id).len();
        let entries: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            (0..per_tensor).map(|_| rng.gen_range(0..n)).collect()
        };
        for j in entries {
            let orig = probe.get(id).data()[j];
            probe.get_mut(id).data_mut()[j] = orig + FD_EPS;
            let plus = value(&probe)?;
            probe.get_mut(id).data_mut()[j] = orig - FD_EPS;
            let minus = value(&probe)?;
            probe.get_mut(id).data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * FD_EPS);
            worst = worst.max(compare.error(grads[id.index()].data()[j], numeric));
        }
    }
    Ok(worst)
}

/// `mean(out ⊙ w)` for a fixed random `w`, turning any output into a
/// scalar with a generic gradient.
fn probe_loss(g: &mut Graph<f64>, out: Var, w: &Tensor<f64>) -> crate::tensor::TResult<Var> {
    let w = g.constant(w.clone().reshaped(g.value(out).shape().to_vec())?);
    let prod = g.mul(out, w)?;
    g.mean(prod)
}

struct OpCase {
    name: &'static str,
    inputs: Vec<Tensor<f64>>,
    build: Box<Build>,
}

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<OpCase> {
    let mut cases = Vec::new();
    let mut case = |name, inputs: Vec<Tensor<f64>>, out_len: usize, rng: &mut ChaCha8Rng, f: Box<Build>| {
        let w = Tensor::from_fn(1, out_len, |_, _| rng.gen_range(-1.0..1.0));
        let build: Box<Build> = Box::new(move |g, v| {
            let out = f(g, v)?;
            probe_loss(g, out, &w)
        });
        cases.push(OpCase { name, inputs, build });
    };
    let (a, b) = (rand_tensor(rng, 4, 3), rand_tensor(rng, 3, 5));
    case("matmul", vec![a, b], 20, rng, Box::new(|g, v| g.matmul(v[0], v[1])));
    case("transpose", vec![rand_tensor(rng, 3, 4)], 12, rng, Box::new(|g, v| g.transpose(v[0])));
    case("add", vec![rand_tensor(rng, 3, 4), rand_tensor(rng, 3, 4)], 12, rng, Box::new(|g, v| g.add(v[0], v[1])));
    case("mul", vec![rand_tensor(rng, 3, 4), rand_tensor(rng, 3, 4)], 12, rng, Box::new(|g, v| g.mul(v[0], v[1])));
    case("add_bias", vec![rand_tensor(rng, 3, 4), rand_tensor(rng, 1, 4)], 12, rng, Box::new(|g, v| g.add_bias(v[0], v[1])));
    case("scale", vec![rand_tensor(rng, 3, 4)], 12, rng, Box::new(|g, v| g.scale(v[0], -1.7)));
    case("elu", vec![rand_tensor(rng, 4, 4)], 16, rng, Box::new(|g, v| g.elu(v[0])));
    case("sigmoid", vec![rand_tensor(rng, 4, 4)], 16, rng, Box::new(|g, v| g.sigmoid(v[0])));
    case("tanh", vec![rand_tensor(rng, 4, 4)], 16, rng, Box::new(|g, v| g.tanh(v[0])));
    case("softmax_rows", vec![rand_tensor(rng, 3, 5)], 15, rng, Box::new(|g, v| g.softmax_rows(v[0])));
    case(
        "gather_rows",
        vec![rand_tensor(rng, 4, 3)],
        18,
        rng,
        Box::new(|g, v| g.gather_rows(v[0], vec![2, 0, GATHER_PAD, 2, 3, 1])),
    );
    let triples: Vec<(usize, usize, f64)> = (0..7).map(|_| (rng.gen_range(0..3), rng.gen_range(0..4), rng.gen_range(-1.0..1.0))).collect();
    let m = Arc::new(CsrMatrix::from_triples(3, 4, &triples));
    case(
        "sparse_apply",
        vec![rand_tensor(rng, 8, 2)],
        12,
        rng,
        Box::new(move |g, v| g.sparse_apply(m.clone(), v[0], 2)),
    );
    case(
        "concat_rows",
        vec![rand_tensor(rng, 2, 3), rand_tensor(rng, 3, 3)],
        21,
        rng,
        Box::new(|g, v| g.concat_rows(&[v[0], v[1], v[0]]).and_then(|c| g.slice_cols(c, 0, 3))),
    );
    case(
        "concat_cols",
        vec![rand_tensor(rng, 3, 2), rand_tensor(rng, 3, 1)],
        15,
        rng,
        Box::new(|g, v| g.concat_cols(&[v[0], v[1], v[0]])),
    );
    case("slice_cols", vec![rand_tensor(rng, 3, 5)], 6, rng, Box::new(|g, v| g.slice_cols(v[0], 1, 2)));
    case("reshape", vec![rand_tensor(rng, 3, 4)], 12, rng, Box::new(|g, v| g.reshape(v[0], [2, 6])));
    case("mean", vec![rand_tensor(rng, 3, 4)], 1, rng, Box::new(|g, v| g.mean(v[0])));
    case("mean_rows", vec![rand_tensor(rng, 3, 4)], 4, rng, Box::new(|g, v| g.mean_rows(v[0])));
    case(
        "layer_norm",
        vec![rand_tensor(rng, 3, 5), rand_tensor(rng, 1, 5), rand_tensor(rng, 1, 5)],
        15,
        rng,
        Box::new(|g, v| g.layer_norm(v[0], v[1], v[2])),
    );
    cases.push(OpCase {
        name: "l1_loss",
        inputs: vec![rand_tensor(rng, 4, 3), rand_tensor(rng, 4, 3)],
        build: Box::new(|g, v| g.l1_loss(v[0], v[1])),
    });
    let labels: Vec<usize> = (0..4).map(|_| rng.gen_range(0..5)).collect();
    cases.push(OpCase {
        name: "cross_entropy",
        inputs: vec![rand_tensor(rng, 4, 5)],
        build: Box::new(move |g, v| g.cross_entropy(v[0], &labels)),
    });
    let w = rand_tensor(rng, 4, 4);
    cases.push(OpCase {
        name: "attention",
        inputs: vec![rand_tensor(rng, 3, 4), rand_tensor(rng, 3, 4), rand_tensor(rng, 3, 2)],
        build: Box::new(move |g, v| {
            let out = crate::temporal::self_attention_node(g, v[0], v[1], v[2])?;
            probe_loss(g, out, &w.clone().reshaped([1, 16])?.slice_prefix(6))
        }),
    });
    cases
}

trait SlicePrefix {
    fn slice_prefix(self, n: usize) -> Tensor<f64>;
}

impl SlicePrefix for Tensor<f64> {
    fn slice_prefix(self, n: usize) -> Tensor<f64> {
        Tensor::matrix(1, n, self.data()[..n].to_vec()).expect("prefix")
    }
}

fn toy_hierarchy() -> Result<MeshHierarchy> {
    let (topo, frame) = icosphere(1);
    Ok(build_hierarchy(&topo, &frame, &[2.0; 4], &[12, 12, 10, 8, 6])?)
}

pub fn spae_gradient(seed_value: u64, rng: &mut ChaCha8Rng) -> Result<f64> {
    let h = Arc::new(toy_hierarchy()?);
    let model = Spae::<f64>::new(h, 8, seed_value)?;
    let v = model.vertex_count();
    let x = rand_tensor(rng, v, 3);
    let target = rand_tensor(rng, v, 3);
    let eval = |store: &ParamStore<f64>| -> Result<(Graph<f64>, Var)> {
        let mut g = Graph::with_params(store);
        let xi = g.constant(x.clone());
        let t = g.constant(target.clone());
        let z = model.encode_node(&mut g, xi, 1)?;
        let y = model.decode_node(&mut g, z, 1)?;
        let loss = g.l1_loss(y, t)?;
        Ok((g, loss))
    };
    fd_params(model.params(), &eval, 4, Compare::Floor(ABS_FLOOR), rng)
}

fn classifier_gradient(config: ClassifierConfig, seed_value: u64, compare: Compare, rng: &mut ChaCha8Rng) -> Result<f64> {
    let len = config.seq_len;
    let model = Classifier::<f64>::new(config, seed_value)?;
    let batch = 2;
    let x = rand_tensor(rng, batch * len, model.config().input_dim);
    let labels: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..model.config().n_classes)).collect();
    let eval = |store: &ParamStore<f64>| -> Result<(Graph<f64>, Var)> {
        let mut g = Graph::with_params(store);
        let xi = g.constant(x.clone());
        let logits = model.logits_node(&mut g, xi, batch, len)?;
        let loss = g.cross_entropy(logits, &labels)?;
        Ok((g, loss))
    };
    fd_params(model.params(), &eval, 24, compare, rng)
}

/// The toy transformer used by the gradient checks: 3 tokens, width 8.
pub fn toy_transformer(pe: PeMode, pooling: Pooling) -> ClassifierConfig {
    ClassifierConfig {
        d_model: 8,
        ffn_hidden: 8,
        seq_len: 3,
        max_len: 4,
        pe,
        pooling,
        ..ClassifierConfig::transformer(5, 3)
    }
}

fn gradient_checks(opts: &VerifyOptions, out: &mut Vec<Check>) {
    let corrupt = opts.fault == Some(Fault::CorruptGradient);
    let mut worst: HashMap<&'static str, f64> = HashMap::new();
    let mut order = Vec::new();
    for s in 0..opts.seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive_indexed(0, "verify-grad", s));
        for case in op_cases(&mut rng) {
            let e = fd_inputs(&case.inputs, &*case.build, corrupt && case.name == "matmul").unwrap_or(f64::INFINITY);
            if !worst.contains_key(case.name) {
                order.push(case.name);
            }
            let w = worst.entry(case.name).or_insert(0.0);
            *w = w.max(e);
        }
    }
    for name in order {
        out.push(Check::new(format!("grad/{name}"), worst[name], GRAD_TOL));
    }

    // The extra heads have many entries near 1e-7, where central-difference
    // roundoff (~1e-11 on a loss of ~1) swamps a relative comparison.
    let extra = Compare::Scaled(1e-5);
    let plain = || toy_transformer(PeMode::None, Pooling::Mean);
    let composite: [(&str, &dyn Fn(u64, &mut ChaCha8Rng) -> Result<f64>); 6] = [
        ("grad/spae(icosphere-1,C=8)", &spae_gradient),
        ("grad/transformer(L=3,d=8)", &|s, r| {
            classifier_gradient(toy_transformer(PeMode::Sinusoidal, Pooling::Mean), s, Compare::Floor(ABS_FLOOR), r)
        }),
        ("grad/transformer(learned,cls)", &|s, r| {
            classifier_gradient(toy_transformer(PeMode::Learned, Pooling::ClassToken), s, extra, r)
        }),
        ("grad/mlp_head", &|s, r| {
            classifier_gradient(ClassifierConfig { kind: HeadKind::Mlp, hidden: 6, ..plain() }, s, extra, r)
        }),
        ("grad/lstm_head", &|s, r| {
            classifier_gradient(ClassifierConfig { kind: HeadKind::Lstm, hidden: 4, ..plain() }, s, extra, r)
        }),
        ("grad/cnn_head", &|s, r| {
            classifier_gradient(ClassifierConfig { kind: HeadKind::Cnn, hidden: 4, ..plain() }, s, extra, r)
        }),
    ];
    for (name, f) in composite {
        let mut e = 0.0f64;
        for s in 0..opts.seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive_indexed(1, name, s));
            e = e.max(f(s, &mut rng).unwrap_or(f64::INFINITY));
        }
        out.push(Check::new(name, e, GRAD_TOL));
    }
}

fn naive_matmul(a: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for t in 0..k {
                s += a.at(i, t) * b.at(t, j);
            }
            out[i * n + j] = s;
        }
    }
    out
}

fn naive_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn graph_unary(x: &Tensor<f64>, f: impl FnOnce(&mut Graph<f64>, Var) -> crate::tensor::TResult<Var>) -> Result<Tensor<f64>> {
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let y = f(&mut g, v)?;
    Ok(g.value(y).clone())
}

fn oracle_checks(out: &mut Vec<Check>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(0, "verify-oracle"));
    let r = &mut rng;

    let matmul = (|| -> Result<f64> {
        let mut worst = 0.0f64;
        for (m, k, n) in [(5, 4, 3), (16, 16, 16), (1, 7, 2)] {
            let (a, b) = (rand_tensor(r, m, k), rand_tensor(r, k, n));
            let mut g = Graph::new();
            let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
            let y = g.matmul(va, vb)?;
            worst = worst.max(max_diff(g.value(y).data(), &naive_matmul(&a, &b)));
        }
        Ok(worst)
    })();
    out.push(Check::from_result("oracle/matmul", matmul, ORACLE_TOL));

    let softmax = (|| -> Result<f64> {
        let x = rand_tensor(r, 16, 9).reshaped([16, 9])?;
        let x = Tensor::from_fn(16, 9, |i, j| x.at(i, j) * 20.0);
        let y = graph_unary(&x, |g, v| g.softmax_rows(v))?;
        let want: Vec<f64> = (0..16).flat_map(|i| naive_softmax(x.row(i))).collect();
        Ok(max_diff(y.data(), &want))
    })();
    out.push(Check::from_result("oracle/softmax_rows", softmax, ORACLE_TOL));

    let losses = (|| -> Result<f64> {
        let (p, t) = (rand_tensor(r, 7, 3), rand_tensor(r, 7, 3));
        let mut g = Graph::new();
        let (vp, vt) = (g.constant(p.clone()), g.constant(t.clone()));
        let l1 = g.l1_loss(vp, vt)?;
        let want_l1 = p.data().iter().zip(t.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / 21.0;
        let logits = Tensor::from_fn(6, 5, |_, _| r.gen_range(-4.0..4.0));
        let labels: Vec<usize> = (0..6).map(|_| r.gen_range(0..5)).collect();
        let vl = g.constant(logits.clone());
        let ce = g.cross_entropy(vl, &labels)?;
        let mut want_ce = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let probs = naive_softmax(logits.row(i));
            for (c, p) in probs.iter().enumerate() {
                let y_c = if c == y { 1.0 } else { 0.0 };
                want_ce -= y_c * p.ln();
            }
        }
        want_ce /= 6.0;
        Ok(((g.value(l1).item() - want_l1).abs()).max((g.value(ce).item() - want_ce).abs()))
    })();
    out.push(Check::from_result("oracle/losses", losses, ORACLE_TOL));

    let spiral = (|| -> Result<f64> {
        let (topo, frame) = icosphere(0);
        let table = build_spiral_table(&topo, 14, &frame)?;
        let x = rand_tensor(r, 12, 3);
        let w = rand_tensor(r, 14 * 3, 4);
        let b = rand_tensor(r, 1, 4);
        let y = spiral_conv(&x, &table, &w, &b)?;
        let mut want = vec![0.0; 12 * 4];
        for v in 0..12 {
            for o in 0..4 {
                let mut s = b.data()[o];
                for (k, &u) in table.row(v).iter().enumerate() {
                    if u == SPIRAL_PAD {
                        continue;
                    }
                    for f in 0..3 {
                        s += x.at(u as usize, f) * w.at(k * 3 + f, o);
                    }
                }
                want[v * 4 + o] = s;
            }
        }
        Ok(max_diff(y.data(), &want))
    })();
    out.push(Check::from_result("oracle/spiral_conv", spiral, ORACLE_TOL));

    let sampling = (|| -> Result<f64> {
        let h = toy_hierarchy()?;
        let mut worst = 0.0f64;
        for op in h.down.iter().chain(&h.up) {
            let x = rand_tensor(r, op.cols, 3);
            let y = apply_sampling(op, &x)?;
            let dense = op.to_dense();
            let mut want = vec![0.0; op.rows * 3];
            for i in 0..op.rows {
                for j in 0..3 {
                    want[i * 3 + j] = (0..op.cols).map(|k| dense[i * op.cols + k] * x.at(k, j)).sum();
                }
            }
            worst = worst.max(max_diff(y.data(), &want));
        }
        Ok(worst)
    })();
    out.push(Check::from_result("oracle/apply_sampling", sampling, ORACLE_TOL));

    let attention = (|| -> Result<f64> {
        let (q, k, v) = (rand_tensor(r, 6, 4), rand_tensor(r, 6, 4), rand_tensor(r, 6, 3));
        let y = self_attention(&q, &k, &v)?;
        let mut want = vec![0.0; 6 * 3];
        for i in 0..6 {
            let scores: Vec<f64> = (0..6)
                .map(|j| (0..4).map(|c| q.at(i, c) * k.at(j, c)).sum::<f64>() / 2.0)
                .collect();
            let w = naive_softmax(&scores);
            for (j, wj) in w.iter().enumerate() {
                for c in 0..3 {
                    want[i * 3 + c] += wj * v.at(j, c);
                }
            }
        }
        Ok(max_diff(y.data(), &want))
    })();
    out.push(Check::from_result("oracle/attention", attention, ORACLE_TOL));
}

/// Counterclockwise neighbor cycle of `v` computed straight from the faces.
fn face_cycle(faces: &[[u32; 3]], v: u32) -> Vec<u32> {
    let mut next = HashMap::new();
    for f in faces {
        for k in 0..3 {
            if f[k] == v {
                next.insert(f[(k + 1) % 3], f[(k + 2) % 3]);
            }
        }
    }
    let start = *next.keys().min().expect("vertex has faces");
    let mut cycle = vec![start];
    let mut cur = next[&start];
    while cur != start {
        cycle.push(cur);
        cur = next[&cur];
    }
    cycle
}

/// Spiral row computed from the faces, independent of the topology's
/// adjacency lists.
pub fn brute_force_spiral(faces: &[[u32; 3]], v: u32, length: usize) -> Vec<u32> {
    let mut row = vec![v];
    let mut seen: HashSet<u32> = HashSet::from([v]);
    let mut ring = vec![v];
    while row.len() < length && !ring.is_empty() {
        let mut next = Vec::new();
        for &u in &ring {
            let cycle = face_cycle(faces, u);
            let fresh: Vec<usize> = (0..cycle.len()).filter(|&i| !seen.contains(&cycle[i])).collect();
            let Some(&start) = fresh.iter().min_by_key(|&&i| cycle[i]) else { continue };
            for j in 0..cycle.len() {
                let w = cycle[(start + j) % cycle.len()];
                if seen.insert(w) {
                    next.push(w);
                }
            }
        }
        row.extend(next.iter().copied());
        ring = next;
    }
    row.truncate(length);
    row.resize(length, SPIRAL_PAD);
    row
}

fn bfs_distances(topo: &TemplateTopology, v: usize) -> Vec<usize> {
    let mut d = vec![usize::MAX; topo.vertex_count()];
    d[v] = 0;
    let mut q = VecDeque::from([v]);
    while let Some(u) = q.pop_front() {
        for &w in topo.neighbors(u) {
            if d[w as usize] == usize::MAX {
                d[w as usize] = d[u] + 1;
                q.push_back(w as usize);
            }
        }
    }
    d
}

/// Number of spiral rows that disagree with the brute-force enumerator or
/// violate the ring structure.
pub fn spiral_mismatches(topo: &TemplateTopology, frame: &MeshFrame, length: usize) -> Result<usize> {
    let table = build_spiral_table(topo, length, frame)?;
    let mut bad = 0;
    for v in 0..topo.vertex_count() {
        let row = table.row(v);
        let want = brute_force_spiral(topo.faces(), v as u32, length);
        let d = bfs_distances(topo, v);
        let real: Vec<u32> = row.iter().copied().take_while(|&i| i != SPIRAL_PAD).collect();
        let tail_ok = row[real.len()..].iter().all(|&i| i == SPIRAL_PAD);
        let unique = real.iter().collect::<HashSet<_>>().len() == real.len();
        let rings_ok = real.windows(2).all(|w| d[w[0] as usize] <= d[w[1] as usize]);
        // Every ring before the last one reached must be complete.
        let last = real.last().map_or(0, |&u| d[u as usize]);
        let complete = (0..last).all(|k| {
            let in_row = real.iter().filter(|&&u| d[u as usize] == k).count();
            in_row == d.iter().filter(|&&x| x == k).count()
        });
        if row != want.as_slice() || row[0] != v as u32 || !tail_ok || !unique || !rings_ok || !complete {
            bad += 1;
        }
    }
    Ok(bad)
}

fn invariant_checks(out: &mut Vec<Check>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(0, "verify-invariants"));
    let r = &mut rng;

    let spirals = (|| -> Result<f64> {
        let mut bad = 0;
        let (tt, tf) = tetrahedron();
        bad += spiral_mismatches(&tt, &tf, 4)?;
        for s in [0, 1] {
            let (t, f) = icosphere(s);
            for len in [1, 7, 12, 24] {
                bad += spiral_mismatches(&t, &f, len)?;
            }
        }
        let (t, f) = icosphere(2);
        let h = build_hierarchy(&t, &f, &[2.0; 4], &[12])?;
        for level in h.levels.iter().filter(|l| l.vertex_count() <= 50) {
            bad += spiral_mismatches(&level.topology, &level.reference, 12)?;
        }
        Ok(bad as f64)
    })();
    out.push(Check::from_result("invariant/spiral_brute_force", spirals, 0.0));

    let operators = (|| -> Result<(f64, f64)> {
        let (t, f) = icosphere(2);
        let h = build_hierarchy(&t, &f, &[2.0; 4], &[12])?;
        let mut down_bad = 0.0f64;
        let mut up_err = 0.0f64;
        for op in h.down.iter().chain(&h.up) {
            let mut per_row: Vec<Vec<f64>> = vec![Vec::new(); op.rows];
            for &(row, _, w) in &op.entries {
                per_row[row as usize].push(w);
            }
            for ws in per_row {
                match op.kind {
                    SamplingKind::Down => {
                        if ws != [1.0] {
                            down_bad += 1.0;
                        }
                    }
                    SamplingKind::Up => {
                        if ws.is_empty() || ws.len() > 3 || ws.iter().any(|&w| w < 0.0) {
                            up_err = f64::INFINITY;
                        }
                        up_err = up_err.max((ws.iter().sum::<f64>() - 1.0).abs());
                    }
                }
            }
        }
        Ok((down_bad, up_err))
    })();
    let (down, up) = operators.unwrap_or((f64::INFINITY, f64::INFINITY));
    out.push(Check::new("invariant/down_one_hot", down, 0.0));
    out.push(Check::new("invariant/up_row_sums", up, 1e-6));

    let softmax = (|| -> Result<f64> {
        let x = Tensor::from_fn(1000, 7, |_, _| r.gen_range(-30.0..30.0));
        let shifted = Tensor::from_fn(1000, 7, |i, j| x.at(i, j) + (i as f64) * 0.37 - 100.0);
        let y = graph_unary(&x, |g, v| g.softmax_rows(v))?;
        let ys = graph_unary(&shifted, |g, v| g.softmax_rows(v))?;
        let sums = (0..1000).map(|i| (y.row(i).iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max);
        Ok(sums.max(max_diff(y.data(), ys.data())))
    })();
    out.push(Check::from_result("invariant/softmax_rows", softmax, 1e-9));

    let norm = (|| -> Result<f64> {
        let mut worst = 0.0f64;
        for _ in 0..100 {
            // Kept within magnitude ~2, where an f32 ulp is 2.4e-7.
            let scale = r.gen_range(0.01..1.0);
            let shift: [f32; 3] = std::array::from_fn(|_| r.gen_range(-1.0..1.0));
            let frame = MeshFrame::new(
                (0..20)
                    .map(|_| std::array::from_fn(|k| shift[k] + scale * r.gen_range(-1.0f32..1.0)))
                    .collect(),
            );
            let (n, stats) = normalize_frames(std::slice::from_ref(&frame))?;
            let back = denormalize_frames(&n, &stats);
            for (a, b) in back[0].coords().iter().zip(frame.coords()) {
                for k in 0..3 {
                    worst = worst.max(((a[k] - b[k]) as f64).abs());
                }
            }
        }
        Ok(worst)
    })();
    out.push(Check::from_result("invariant/normalize_round_trip", norm, 1e-6));

    let files = (|| -> Result<f64> {
        let (t, f) = icosphere(1);
        let seq = crate::mesh::synth_generate((&t, &f), 2, 5, 6)?;
        let bytes = encode_sequence(&seq);
        let back: MeshSequence = decode_sequence(&bytes, Some(t.checksum()))?;
        let emb = EmbeddingSequence::new(rand_tensor(r, 4, 5).cast(), Some(1))?;
        let eb = encode_embeddings(std::slice::from_ref(&emb))?;
        let eback = decode_embeddings(&eb)?;
        let ok = back == seq && encode_sequence(&back) == bytes && eback == vec![emb] && encode_embeddings(&eback)? == eb;
        Ok(if ok { 0.0 } else { 1.0 })
    })();
    out.push(Check::from_result("invariant/file_round_trips", files, 0.0));
}

pub fn run_checks(opts: &VerifyOptions) -> Vec<Check> {
    let mut out = Vec::new();
    gradient_checks(opts, &mut out);
    oracle_checks(&mut out);
    invariant_checks(&mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grad_error_switches_to_absolute() {
        assert_eq!(grad_error(1e-10, 2e-10), 1e-10);
        assert!((grad_error(1.0, 1.001) - 0.001 / 1.001).abs() < 1e-15);
    }

    #[test]
    fn brute_force_matches_tetrahedron_example() {
        let (t, _) = tetrahedron();
        assert_eq!(brute_force_spiral(t.faces(), 0, 4), vec![0, 1, 2, 3]);
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let opts = VerifyOptions {
            seeds: 1,
            fault: Some(Fault::CorruptGradient),
        };
        let mut checks = Vec::new();
        gradient_checks(&opts, &mut checks);
        let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        assert_eq!(failed, vec!["grad/matmul"]);
    }
}
