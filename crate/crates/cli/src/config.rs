//! Flat `key = value` run configuration. Defaults are the full-scale
//! hyperparameters; `configs/desk.conf` holds the CPU profile.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use spatr::temporal::{HeadKind, PeMode, Pooling};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: usize,
    pub out_dir: PathBuf,
    /// Defaults to `<out>/data`.
    pub data_dir: Option<PathBuf>,
    /// Defaults to `<out>/cache`; `SPATR_CACHE_DIR` takes precedence.
    pub cache_dir: Option<PathBuf>,
    /// `icosphere:<subdivisions>`, `tetrahedron`, or an OBJ path.
    pub template: String,

    pub classes: Vec<u32>,
    pub subjects: usize,
    pub sequence_length: usize,
    pub split_fraction: f64,

    pub factors: Vec<f64>,
    pub spiral_lengths: Vec<usize>,

    pub latent_dim: usize,
    pub spae_epochs: usize,
    pub spae_batch_size: usize,
    pub spae_learning_rate: f64,
    pub spae_decay_rate: f64,
    pub spae_weight_decay: f64,
    /// Frames drawn uniformly from each training sequence; 0 uses all.
    pub spae_frames_per_sequence: usize,
    pub spae_checkpoint_every: usize,

    pub head: HeadKind,
    pub pe: PeMode,
    pub pooling: Pooling,
    pub heads: Vec<usize>,
    pub d_model: usize,
    pub ffn_hidden: usize,
    pub hidden: usize,
    pub residual: bool,
    pub feed_forward: bool,
    pub layer_norm: bool,
    pub frames: usize,
    pub clf_epochs: usize,
    pub clf_batch_size: usize,
    pub clf_learning_rate: f64,
    pub clf_decay_rate: f64,
    pub clf_weight_decay: f64,

    pub sweep_frames: Vec<usize>,
    pub sweep_heads: Vec<Vec<usize>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 1,
            out_dir: PathBuf::from("spatr-out"),
            data_dir: None,
            cache_dir: None,
            template: "icosphere:2".into(),
            classes: vec![0, 1, 2],
            subjects: 40,
            sequence_length: 192,
            split_fraction: 0.8,
            factors: vec![4.0; 4],
            spiral_lengths: vec![9; 5],
            latent_dim: 1024,
            spae_epochs: 300,
            spae_batch_size: 8,
            spae_learning_rate: 1e-3,
            spae_decay_rate: 0.99,
            spae_weight_decay: 5e-5,
            spae_frames_per_sequence: 0,
            spae_checkpoint_every: 50,
            head: HeadKind::Transformer,
            pe: PeMode::Sinusoidal,
            pooling: Pooling::Mean,
            heads: vec![2, 2, 2],
            d_model: 128,
            ffn_hidden: 256,
            hidden: 128,
            residual: true,
            feed_forward: true,
            layer_norm: true,
            frames: 24,
            clf_epochs: 100,
            clf_batch_size: 8,
            clf_learning_rate: 1e-4,
            clf_decay_rate: 0.7,
            clf_weight_decay: 0.0,
            sweep_frames: vec![16, 24, 48, 96, 192],
            sweep_heads: vec![vec![1, 1, 1], vec![2, 2, 2], vec![4, 4, 4]],
        }
    }
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| anyhow!("{key}: cannot parse {s:?}")))
        .collect()
}

fn one<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| anyhow!("{key}: cannot parse {v:?}"))
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// `1,1,1;2,2,2` to `[[1,1,1],[2,2,2]]`.
pub fn parse_head_sets(v: &str) -> Result<Vec<Vec<usize>>> {
    v.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| list("sweep_heads", s))
        .collect()
}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        match key {
            "seed" => self.seed = one(key, v)?,
            "threads" => self.threads = one(key, v)?,
            "out_dir" => self.out_dir = v.into(),
            "data_dir" => self.data_dir = Some(v.into()),
            "cache_dir" => self.cache_dir = Some(v.into()),
            "template" => self.template = v.into(),
            "classes" => self.classes = list(key, v)?,
            "subjects" => self.subjects = one(key, v)?,
            "sequence_length" => self.sequence_length = one(key, v)?,
            "split_fraction" => self.split_fraction = one(key, v)?,
            "factors" => self.factors = list(key, v)?,
            "spiral_lengths" => self.spiral_lengths = list(key, v)?,
            "latent_dim" => self.latent_dim = one(key, v)?,
            "spae_epochs" => self.spae_epochs = one(key, v)?,
            "spae_batch_size" => self.spae_batch_size = one(key, v)?,
            "spae_learning_rate" => self.spae_learning_rate = one(key, v)?,
            "spae_decay_rate" => self.spae_decay_rate = one(key, v)?,
            "spae_weight_decay" => self.spae_weight_decay = one(key, v)?,
            "spae_frames_per_sequence" => self.spae_frames_per_sequence = one(key, v)?,
            "spae_checkpoint_every" => self.spae_checkpoint_every = one(key, v)?,
            "head" => self.head = v.parse()?,
            "pe" => self.pe = v.parse()?,
            "pooling" => self.pooling = v.parse()?,
            "heads" => self.heads = list(key, v)?,
            "d_model" => self.d_model = one(key, v)?,
            "ffn_hidden" => self.ffn_hidden = one(key, v)?,
            "hidden" => self.hidden = one(key, v)?,
            "residual" => self.residual = one(key, v)?,
            "feed_forward" => self.feed_forward = one(key, v)?,
            "layer_norm" => self.layer_norm = one(key, v)?,
            "frames" => self.frames = one(key, v)?,
            "clf_epochs" => self.clf_epochs = one(key, v)?,
            "clf_batch_size" => self.clf_batch_size = one(key, v)?,
            "clf_learning_rate" => self.clf_learning_rate = one(key, v)?,
            "clf_decay_rate" => self.clf_decay_rate = one(key, v)?,
            "clf_weight_decay" => self.clf_weight_decay = one(key, v)?,
            "sweep_frames" => self.sweep_frames = list(key, v)?,
            "sweep_heads" => self.sweep_heads = parse_head_sets(v)?,
            _ => bail!("unknown configuration key {key:?}"),
        }
        Ok(())
    }

    /// Applies every `key = value` line; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value", i + 1))?;
            self.set(k.trim(), v).with_context(|| format!("line {}", i + 1))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut c = Self::default();
        c.apply_text(&text).with_context(|| format!("config {}", path.display()))?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            bail!("classes: at least one class is required");
        }
        let mut seen = self.classes.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.classes.len() {
            bail!("classes: duplicate class id");
        }
        let positive = [
            ("threads", self.threads),
            ("subjects", self.subjects),
            ("sequence_length", self.sequence_length),
            ("latent_dim", self.latent_dim),
            ("frames", self.frames),
            ("spae_epochs", self.spae_epochs),
            ("spae_batch_size", self.spae_batch_size),
            ("clf_epochs", self.clf_epochs),
            ("clf_batch_size", self.clf_batch_size),
        ];
        for (k, v) in positive {
            if v == 0 {
                bail!("{k} must be positive");
            }
        }
        if self.frames > self.sequence_length {
            bail!(
                "frames = {} exceeds sequence_length = {}",
                self.frames,
                self.sequence_length
            );
        }
        if self.sweep_frames.iter().any(|&n| n == 0) {
            bail!("sweep_frames must be positive");
        }
        if self.heads.is_empty() || self.sweep_heads.iter().any(|h| h.is_empty()) {
            bail!("head lists must be non-empty");
        }
        Ok(())
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(|| self.out_dir.join("data"))
    }

    pub fn cache_dir(&self) -> PathBuf {
        if let Some(dir) = std::env::var_os("SPATR_CACHE_DIR").filter(|d| !d.is_empty()) {
            return dir.into();
        }
        self.cache_dir.clone().unwrap_or_else(|| self.out_dir.join("cache"))
    }

    /// Every key with its current value, loadable by [`RunConfig::apply_text`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let opt = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("string write");
        kv("seed", self.seed.to_string());
        kv("threads", self.threads.to_string());
        kv("out_dir", self.out_dir.display().to_string());
        if let Some(d) = opt(&self.data_dir) {
            kv("data_dir", d);
        }
        if let Some(d) = opt(&self.cache_dir) {
            kv("cache_dir", d);
        }
        kv("template", self.template.clone());
        kv("classes", join(&self.classes));
        kv("subjects", self.subjects.to_string());
        kv("sequence_length", self.sequence_length.to_string());
        kv("split_fraction", self.split_fraction.to_string());
        kv("factors", join(&self.factors));
        kv("spiral_lengths", join(&self.spiral_lengths));
        kv("latent_dim", self.latent_dim.to_string());
        kv("spae_epochs", self.spae_epochs.to_string());
        kv("spae_batch_size", self.spae_batch_size.to_string());
        kv("spae_learning_rate", self.spae_learning_rate.to_string());
        kv("spae_decay_rate", self.spae_decay_rate.to_string());
        kv("spae_weight_decay", self.spae_weight_decay.to_string());
        kv("spae_frames_per_sequence", self.spae_frames_per_sequence.to_string());
        kv("spae_checkpoint_every", self.spae_checkpoint_every.to_string());
        kv("head", self.head.to_string());
        kv("pe", self.pe.to_string());
        kv("pooling", self.pooling.to_string());
        kv("heads", join(&self.heads));
        kv("d_model", self.d_model.to_string());
        kv("ffn_hidden", self.ffn_hidden.to_string());
        kv("hidden", self.hidden.to_string());
        kv("residual", self.residual.to_string());
        kv("feed_forward", self.feed_forward.to_string());
        kv("layer_norm", self.layer_norm.to_string());
        kv("frames", self.frames.to_string());
        kv("clf_epochs", self.clf_epochs.to_string());
        kv("clf_batch_size", self.clf_batch_size.to_string());
        kv("clf_learning_rate", self.clf_learning_rate.to_string());
        kv("clf_decay_rate", self.clf_decay_rate.to_string());
        kv("clf_weight_decay", self.clf_weight_decay.to_string());
        kv("sweep_frames", join(&self.sweep_frames));
        let sets: Vec<String> = self.sweep_heads.iter().map(|h| join(h)).collect();
        kv("sweep_heads", sets.join(";"));
        s
    }
}
