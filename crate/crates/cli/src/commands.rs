use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use spatr::hierarchy::{build_hierarchy, decode_hierarchy, save_hierarchy, HierarchyKey, MeshHierarchy};
use spatr::mesh::{
    icosphere, load_sequence, load_template, read_manifest, split_by_subject, synth_generate, tetrahedron,
    uniform_sample_indices, write_manifest, write_template, DatasetSplit, ManifestRow, MeshFrame, MeshSequence,
    NormStats, SynthClass, TemplateTopology,
};
use spatr::seed;
use spatr::spae::{
    encode_dataset, load_embeddings, reconstruction_error, save_embeddings, train_spae, EmbeddingSequence, Spae,
    SpaeTrainConfig,
};
use spatr::temporal::{
    evaluate, train_classifier, write_confusion_csv, write_metrics_csv, Classifier, ClassifierConfig,
    ClassifierTrainConfig, EpochMetrics, HeadKind,
};
use spatr::tensor::{encode_checkpoint, load_checkpoint};
use spatr::verify::{render_report, run_checks, Fault, VerifyOptions};

use crate::config::RunConfig;

/// Bad invocation, configuration or missing inputs; exit code 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// A check that ran and failed; exit code 1.
#[derive(Debug)]
pub struct Failed(pub String);

impl fmt::Display for Failed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Failed {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn require(path: &Path, what: &str, producer: &str) -> Result<()> {
    if !path.exists() {
        return Err(usage(format!(
            "{what} not found at {}; run `spatr {producer}` first with the same --config/--out",
            path.display()
        )));
    }
    Ok(())
}

pub struct Paths {
    pub data: PathBuf,
    pub manifest: PathBuf,
    pub hierarchy: PathBuf,
    pub spae: PathBuf,
    pub norm: PathBuf,
    pub spae_loss: PathBuf,
    pub train_embeddings: PathBuf,
    pub test_embeddings: PathBuf,
    pub classifier: PathBuf,
    pub metrics: PathBuf,
}

impl Paths {
    pub fn new(c: &RunConfig) -> Self {
        let out = &c.out_dir;
        let data = c.data_dir();
        Self {
            manifest: data.join("manifest.csv"),
            data,
            hierarchy: c.cache_dir().join("hierarchy.spth"),
            spae: out.join("spae.sptc"),
            norm: out.join("spae_norm.txt"),
            spae_loss: out.join("spae_loss.csv"),
            train_embeddings: out.join("embeddings").join("train.spte"),
            test_embeddings: out.join("embeddings").join("test.spte"),
            classifier: out.join("classifier.sptc"),
            metrics: out.join("metrics.csv"),
        }
    }

    pub fn confusion(&self, out: &Path, reversed: bool) -> PathBuf {
        out.join(if reversed { "confusion_reversed.csv" } else { "confusion.csv" })
    }
}

pub fn resolve_template(spec: &str) -> Result<(TemplateTopology, MeshFrame)> {
    if spec == "tetrahedron" {
        return Ok(tetrahedron());
    }
    if let Some(n) = spec.strip_prefix("icosphere:") {
        let n: u32 = n.parse().map_err(|_| usage(format!("template: bad subdivision count in {spec:?}")))?;
        if n > 6 {
            bail!(usage(format!("template: icosphere:{n} is too fine (max 6)")));
        }
        return Ok(icosphere(n));
    }
    let path = Path::new(spec);
    require(path, "template mesh", "gen-data")?;
    Ok(load_template(path)?)
}

pub fn gen_data(c: &RunConfig) -> Result<()> {
    let (topo, frame) = resolve_template(&c.template)?;
    let p = Paths::new(c);
    std::fs::create_dir_all(&p.data).with_context(|| format!("creating {}", p.data.display()))?;
    write_template(&p.data.join("template.obj"), &topo, &frame)?;
    let mut rows = Vec::new();
    let mut counts = vec![0usize; c.classes.len()];
    for subject in 0..c.subjects as u64 {
        for (label, &class_id) in c.classes.iter().enumerate() {
            SynthClass::from_id(class_id).map_err(|e| usage(e.to_string()))?;
            let index = subject * c.classes.len() as u64 + label as u64;
            let s = seed::derive_indexed(c.seed, "data", index);
            let mut seq = synth_generate((&topo, &frame), class_id, s, c.sequence_length)?;
            seq.label = Some(label as u32);
            let name = format!("s{subject:03}_c{label}.sptr");
            spatr::mesh::save_sequence(&p.data.join(&name), &seq)?;
            rows.push(ManifestRow {
                path: name.into(),
                label: label as u32,
                subject_id: subject,
            });
            counts[label] += 1;
        }
    }
    write_manifest(&p.manifest, &rows)?;
    println!("wrote {} sequences to {}", rows.len(), p.data.display());
    for (label, (&class_id, n)) in c.classes.iter().zip(&counts).enumerate() {
        let name = SynthClass::from_id(class_id)?.name();
        println!("  class {label} ({name}): {n}");
    }
    Ok(())
}

fn hierarchy_key(c: &RunConfig, topo: &TemplateTopology) -> HierarchyKey {
    // A single spiral length applies to every level.
    let spiral_lengths = match c.spiral_lengths.as_slice() {
        [l] => vec![*l; c.factors.len() + 1],
        ls => ls.to_vec(),
    };
    HierarchyKey {
        checksum: topo.checksum(),
        factors: c.factors.clone(),
        spiral_lengths,
    }
}

/// Loads the cached hierarchy when its key matches the configuration,
/// otherwise builds and caches it.
pub fn ensure_hierarchy(c: &RunConfig, rebuild: bool, verbose: bool) -> Result<MeshHierarchy> {
    let (topo, frame) = resolve_template(&c.template)?;
    let path = Paths::new(c).hierarchy;
    let want = hierarchy_key(c, &topo);
    if !rebuild && path.exists() {
        let cached = std::fs::read(&path)
            .map_err(anyhow::Error::from)
            .and_then(|b| decode_hierarchy(&b).map_err(Into::into));
        match cached {
            Ok(h) if h.key() == want => {
                if verbose {
                    println!("cache hit: {}", path.display());
                }
                return Ok(h);
            }
            Ok(_) => eprintln!(
                "warning: cached hierarchy {} was built for a different template or settings; rebuilding",
                path.display()
            ),
            Err(e) => eprintln!("warning: cached hierarchy {} is unreadable ({e}); rebuilding", path.display()),
        }
    }
    let h = build_hierarchy(&topo, &frame, &c.factors, &c.spiral_lengths)?;
    save_hierarchy(&path, &h)?;
    if verbose {
        println!("built hierarchy: {}", path.display());
    }
    Ok(h)
}

pub fn level_chain(h: &MeshHierarchy) -> String {
    let sizes: Vec<String> = h.level_sizes().iter().map(usize::to_string).collect();
    sizes.join(" → ")
}

pub fn build_hierarchy_cmd(c: &RunConfig, rebuild: bool) -> Result<()> {
    let h = ensure_hierarchy(c, rebuild, true)?;
    println!("levels: {}", level_chain(&h));
    Ok(())
}

fn load_dataset(c: &RunConfig) -> Result<DatasetSplit<MeshSequence>> {
    let p = Paths::new(c);
    require(&p.manifest, "dataset manifest", "gen-data")?;
    let rows = read_manifest(&p.manifest)?;
    if rows.is_empty() {
        return Err(usage(format!("manifest {} lists no sequences", p.manifest.display())));
    }
    let (topo, _) = resolve_template(&c.template)?;
    let mut items = Vec::with_capacity(rows.len());
    for row in rows {
        let mut seq = load_sequence(&row.path, Some(topo.checksum()))
            .with_context(|| format!("loading {}", row.path.display()))?;
        seq.label = Some(row.label);
        items.push((seq, row.subject_id));
    }
    Ok(split_by_subject(items, c.split_fraction, seed::derive(c.seed, "split"))?)
}

fn norm_text(n: &NormStats) -> String {
    format!(
        "center = {},{},{}\nscale = {}\n",
        n.center[0], n.center[1], n.center[2], n.scale
    )
}

fn parse_norm(text: &str) -> Result<NormStats> {
    let mut center = None;
    let mut scale = None;
    for line in text.lines() {
        let Some((k, v)) = line.split_once('=') else { continue };
        match k.trim() {
            "center" => {
                let xs: Vec<f64> = v.split(',').map(|x| x.trim().parse()).collect::<Result<_, _>>()?;
                if xs.len() != 3 {
                    bail!("center needs three values");
                }
                center = Some([xs[0], xs[1], xs[2]]);
            }
            "scale" => scale = Some(v.trim().parse()?),
            _ => {}
        }
    }
    match (center, scale) {
        (Some(center), Some(scale)) => Ok(NormStats { center, scale }),
        _ => bail!("normalization file lacks center or scale"),
    }
}

fn meta_value<'a>(meta: &'a str, key: &str) -> Option<&'a str> {
    meta.lines().find_map(|l| l.strip_prefix(key)?.strip_prefix('='))
}

pub fn train_spae_cmd(c: &RunConfig) -> Result<()> {
    let h = Arc::new(ensure_hierarchy(c, false, false)?);
    let split = load_dataset(c)?;
    let p = Paths::new(c);
    let norm = NormStats::fit(split.train.iter().flat_map(|s| s.frames.iter()))?;
    let mut frames = Vec::new();
    for s in &split.train {
        let idx: Vec<usize> = match c.spae_frames_per_sequence {
            0 => (0..s.len()).collect(),
            n => uniform_sample_indices(s.len(), n.min(s.len()))?,
        };
        frames.extend(idx.into_iter().map(|i| norm.apply(&s.frames[i])));
    }
    let mut model = Spae::<f32>::new(h, c.latent_dim, seed::derive(c.seed, "spae"))?;
    let tc = SpaeTrainConfig {
        epochs: c.spae_epochs,
        batch_size: c.spae_batch_size,
        learning_rate: c.spae_learning_rate,
        decay_rate: c.spae_decay_rate,
        weight_decay: c.spae_weight_decay,
        seed: c.seed,
        checkpoint_every: c.spae_checkpoint_every,
        checkpoint_path: Some(p.spae.clone()),
    };
    tc.validate().map_err(|e| usage(e.to_string()))?;
    println!(
        "training autoencoder on {} frames from {} sequences",
        frames.len(),
        split.train.len()
    );
    let every = (c.spae_epochs / 10).max(1);
    let report = train_spae(&mut model, &frames, &tc, |e, loss| {
        if (e + 1) % every == 0 || e == 0 {
            println!("  epoch {:>4}  loss {loss:.6}", e + 1);
        }
    })?;
    std::fs::write(&p.norm, norm_text(&norm)).with_context(|| format!("writing {}", p.norm.display()))?;
    let mut csv = String::from("epoch,train_loss\n");
    for (e, l) in report.epoch_losses.iter().enumerate() {
        csv.push_str(&format!("{e},{l}\n"));
    }
    std::fs::write(&p.spae_loss, csv).with_context(|| format!("writing {}", p.spae_loss.display()))?;
    println!(
        "mean per-vertex L1 on training frames: {:.5}",
        reconstruction_error(&model, &frames)?
    );
    println!("checkpoint: {}", p.spae.display());
    Ok(())
}

fn load_spae(c: &RunConfig) -> Result<(Spae<f32>, NormStats)> {
    let p = Paths::new(c);
    require(&p.spae, "autoencoder checkpoint", "train-spae")?;
    require(&p.norm, "normalization statistics", "train-spae")?;
    let h = Arc::new(ensure_hierarchy(c, false, false)?);
    let ckpt = load_checkpoint(&p.spae)?;
    let latent: usize = meta_value(&ckpt.meta, "latent_dim")
        .and_then(|v| v.parse().ok())
        .context("autoencoder checkpoint lacks latent_dim")?;
    let topo = meta_value(&ckpt.meta, "topology").unwrap_or_default();
    let want = format!("{:#018x}", h.levels[0].topology.checksum());
    if topo != want {
        return Err(usage(format!(
            "autoencoder checkpoint was trained on topology {topo}, but the template is {want}; retrain with `spatr train-spae`"
        )));
    }
    let model = Spae::from_params(h, latent, &ckpt.params)?;
    let norm = parse_norm(&std::fs::read_to_string(&p.norm)?)?;
    Ok((model, norm))
}

pub fn encode_cmd(c: &RunConfig) -> Result<()> {
    let (model, norm) = load_spae(c)?;
    let split = load_dataset(c)?;
    let p = Paths::new(c);
    let train = encode_dataset(&split.train, &model, &norm)?;
    let test = encode_dataset(&split.test, &model, &norm)?;
    save_embeddings(&p.train_embeddings, &train)?;
    save_embeddings(&p.test_embeddings, &test)?;
    println!(
        "encoded {} train and {} test sequences to C = {} embeddings in {}",
        train.len(),
        test.len(),
        model.latent_dim(),
        p.train_embeddings.parent().unwrap_or(Path::new(".")).display()
    );
    Ok(())
}

/// Embedding sequences with `frames` uniformly sampled tokens each.
pub fn load_embedding_split(c: &RunConfig, frames: usize) -> Result<DatasetSplit<EmbeddingSequence>> {
    let p = Paths::new(c);
    require(&p.train_embeddings, "embedding cache", "encode")?;
    require(&p.test_embeddings, "embedding cache", "encode")?;
    let sample = |seqs: Vec<EmbeddingSequence>| -> Result<Vec<EmbeddingSequence>> {
        seqs.iter()
            .map(|s| {
                s.uniform_sample(frames).map_err(|e| {
                    usage(format!("cannot take {frames} frames from a {}-frame sequence: {e}", s.len()))
                })
            })
            .collect()
    };
    Ok(DatasetSplit {
        train: sample(load_embeddings(&p.train_embeddings)?)?,
        test: sample(load_embeddings(&p.test_embeddings)?)?,
        split_fraction: c.split_fraction,
    })
}

fn class_count(c: &RunConfig, data: &DatasetSplit<EmbeddingSequence>) -> usize {
    let max_label = data.train.iter().chain(&data.test).filter_map(|s| s.label).max();
    c.classes.len().max(max_label.map_or(0, |l| l as usize + 1))
}

pub fn classifier_config(c: &RunConfig, input_dim: usize, n_classes: usize, frames: usize) -> ClassifierConfig {
    ClassifierConfig {
        kind: c.head,
        d_model: c.d_model,
        heads: c.heads.clone(),
        pe: c.pe,
        pooling: c.pooling,
        residual: c.residual,
        feed_forward: c.feed_forward,
        layer_norm: c.layer_norm,
        ffn_hidden: c.ffn_hidden,
        hidden: c.hidden,
        seq_len: frames,
        max_len: ClassifierConfig::transformer(input_dim, n_classes).max_len.max(frames),
        ..ClassifierConfig::transformer(input_dim, n_classes)
    }
}

fn train_config(c: &RunConfig, checkpoint: Option<PathBuf>) -> ClassifierTrainConfig {
    ClassifierTrainConfig {
        epochs: c.clf_epochs,
        batch_size: c.clf_batch_size,
        learning_rate: c.clf_learning_rate,
        decay_rate: c.clf_decay_rate,
        weight_decay: c.clf_weight_decay,
        seed: c.seed,
        checkpoint_path: checkpoint,
    }
}

/// Trains one classifier; prints a line every tenth of the run when `log`.
pub fn fit_classifier(
    c: &RunConfig,
    data: &DatasetSplit<EmbeddingSequence>,
    checkpoint: Option<PathBuf>,
    log: bool,
) -> Result<(Classifier<f32>, Vec<EpochMetrics>)> {
    let width = data.train.first().map(|s| s.width()).context("no training sequences")?;
    let config = classifier_config(c, width, class_count(c, data), c.frames);
    config.validate().map_err(|e| usage(e.to_string()))?;
    let mut model = Classifier::new(config, seed::derive(c.seed, "classifier"))?;
    let every = (c.clf_epochs / 10).max(1);
    let history = train_classifier(&mut model, data, &train_config(c, checkpoint), |m| {
        if log && ((m.epoch + 1) % every == 0 || m.epoch == 0) {
            println!(
                "  epoch {:>4}  loss {:.6}  test accuracy {:.4}",
                m.epoch + 1,
                m.train_loss,
                m.test_accuracy
            );
        }
    })?;
    Ok((model, history))
}

pub fn train_classifier_cmd(c: &RunConfig) -> Result<()> {
    let data = load_embedding_split(c, c.frames)?;
    let p = Paths::new(c);
    println!(
        "training {} head on {} sequences of {} frames",
        c.head,
        data.train.len(),
        c.frames
    );
    let (model, history) = fit_classifier(c, &data, Some(p.classifier.clone()), true)?;
    write_metrics_csv(&p.metrics, &history)?;
    let last = history.last().expect("at least one epoch");
    println!("parameters: {}", model.param_count());
    println!("final test accuracy: {:.4}", last.test_accuracy);
    println!("checkpoint: {}\nmetrics: {}", p.classifier.display(), p.metrics.display());
    Ok(())
}

pub fn load_classifier(path: &Path) -> Result<Classifier<f32>> {
    require(path, "classifier checkpoint", "train-classifier")?;
    let ckpt = load_checkpoint(path)?;
    let config = ClassifierConfig::from_meta(&ckpt.meta)?;
    Ok(Classifier::from_params(config, &ckpt.params)?)
}

pub fn eval_cmd(c: &RunConfig, reversed: bool, min_accuracy: Option<f64>) -> Result<()> {
    let p = Paths::new(c);
    let model = load_classifier(&p.classifier)?;
    let frames = if model.config().kind == HeadKind::Mlp { model.config().seq_len } else { c.frames };
    let mut test = load_embedding_split(c, frames)?.test;
    if reversed {
        test = test.iter().map(EmbeddingSequence::reversed).collect();
    }
    let eval = evaluate(&model, &test)?;
    let correct = eval.predictions.iter().zip(&eval.labels).filter(|(a, b)| a == b).count();
    let path = p.confusion(&c.out_dir, reversed);
    write_confusion_csv(&path, &eval.confusion)?;
    println!(
        "{}accuracy: {:.4} ({correct}/{})",
        if reversed { "time-reversed " } else { "" },
        eval.accuracy,
        test.len()
    );
    println!("confusion matrix: {}", path.display());
    if let Some(min) = min_accuracy {
        if eval.accuracy < min {
            bail!(Failed(format!("accuracy {:.4} is below the required {min}", eval.accuracy)));
        }
    }
    Ok(())
}

pub fn verify_cmd(seeds: u64, fault: Option<Fault>) -> Result<()> {
    let checks = run_checks(&VerifyOptions { seeds, fault });
    print!("{}", render_report(&checks));
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    if !failed.is_empty() {
        bail!(Failed(format!("failed checks: {}", failed.join(", "))));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepAxis {
    /// Accuracy against the number of sampled frames.
    Frames,
    /// Accuracy against the per-layer head counts.
    Heads,
    /// Every head kind at every frame count, with memory columns.
    Ablation,
}

const FRAMES_REFERENCE: &str =
    "# reference full-scale result (MoVi, not asserted): accuracy peaks at 48 frames with 95.42%";
const HEADS_REFERENCE: &str =
    "# reference full-scale trend (MoVi, not asserted): [2,2,2] beats [1,1,1]; more heads plateau or decline";

struct SweepRow {
    frames: usize,
    head: HeadKind,
    heads: Vec<usize>,
    accuracy: f64,
    params: usize,
    checkpoint_bytes: usize,
    activation_bytes: usize,
    attention_bytes: usize,
}

fn sweep_point(c: &RunConfig, cache: &mut BTreeMap<usize, DatasetSplit<EmbeddingSequence>>) -> Result<SweepRow> {
    if !cache.contains_key(&c.frames) {
        let data = load_embedding_split(c, c.frames)?;
        cache.insert(c.frames, data);
    }
    let data = &cache[&c.frames];
    let (model, history) = fit_classifier(c, data, None, false)?;
    let memory = model.memory_profile(c.clf_batch_size, c.frames)?;
    Ok(SweepRow {
        frames: c.frames,
        head: c.head,
        heads: c.heads.clone(),
        accuracy: history.last().expect("epochs > 0").test_accuracy,
        params: model.param_count(),
        checkpoint_bytes: encode_checkpoint(model.params(), None, &model.config().to_meta()).len(),
        activation_bytes: memory.activation_bytes,
        attention_bytes: memory.attention_score_bytes,
    })
}

pub fn sweep_cmd(c: &RunConfig, axis: SweepAxis) -> Result<()> {
    let mut points = Vec::new();
    match axis {
        SweepAxis::Frames => points.extend(c.sweep_frames.iter().map(|&n| RunConfig { frames: n, ..c.clone() })),
        SweepAxis::Heads => points.extend(c.sweep_heads.iter().map(|h| RunConfig { heads: h.clone(), ..c.clone() })),
        SweepAxis::Ablation => {
            for &n in &c.sweep_frames {
                for head in [HeadKind::Transformer, HeadKind::Mlp, HeadKind::Lstm, HeadKind::Cnn] {
                    points.push(RunConfig { frames: n, head, ..c.clone() });
                }
            }
        }
    }
    let mut cache = BTreeMap::new();
    let mut rows = Vec::new();
    for point in &points {
        let row = sweep_point(point, &mut cache)?;
        println!(
            "  frames {:>4}  head {:<11}  heads {:<7}  accuracy {:.4}",
            row.frames,
            row.head.to_string(),
            row.heads.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
            row.accuracy
        );
        rows.push(row);
    }
    let (name, header) = match axis {
        SweepAxis::Frames => ("sweep_frames.csv", Some(FRAMES_REFERENCE)),
        SweepAxis::Heads => ("sweep_heads.csv", Some(HEADS_REFERENCE)),
        SweepAxis::Ablation => ("sweep_ablation.csv", None),
    };
    let mut csv = String::new();
    if let Some(h) = header {
        csv.push_str(h);
        csv.push('\n');
    }
    csv.push_str("frames,head,heads,accuracy,param_count,checkpoint_bytes,activation_bytes,attention_score_bytes\n");
    for r in &rows {
        let heads: Vec<String> = r.heads.iter().map(usize::to_string).collect();
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.frames,
            r.head,
            heads.join(" "),
            r.accuracy,
            r.params,
            r.checkpoint_bytes,
            r.activation_bytes,
            r.attention_bytes
        ));
    }
    let path = c.out_dir.join(name);
    std::fs::create_dir_all(&c.out_dir)?;
    std::fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
    println!("sweep report: {}", path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norm_file_round_trip() {
        let n = NormStats {
            center: [0.1, -2.5, 1e-7],
            scale: 3.25,
        };
        assert_eq!(parse_norm(&norm_text(&n)).unwrap(), n);
        assert!(parse_norm("scale = 1").is_err());
    }

    #[test]
    fn meta_lookup() {
        let meta = "kind=spae\nlatent_dim=64\n";
        assert_eq!(meta_value(meta, "latent_dim"), Some("64"));
        assert_eq!(meta_value(meta, "latent"), None);
    }

    #[test]
    fn template_specs() {
        assert_eq!(resolve_template("icosphere:1").unwrap().0.vertex_count(), 42);
        assert_eq!(resolve_template("tetrahedron").unwrap().0.vertex_count(), 4);
        assert!(resolve_template("icosphere:x").is_err());
        assert!(resolve_template("/no/such/file.obj").is_err());
    }
}
