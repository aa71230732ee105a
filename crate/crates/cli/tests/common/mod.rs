#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

/// A small but complete configuration: icosphere-1, C = 16, a handful of
/// epochs. Every stage runs in well under a second.
pub const TINY: &str = "\
seed = 3
template = icosphere:1
classes = 0,1,2
subjects = 6
sequence_length = 16
factors = 2,2,2,2
spiral_lengths = 9,9,7,5,4
latent_dim = 16
spae_epochs = 2
spae_batch_size = 4
spae_frames_per_sequence = 2
d_model = 16
ffn_hidden = 16
hidden = 16
frames = 8
clf_epochs = 3
clf_batch_size = 4
clf_learning_rate = 0.001
clf_decay_rate = 0.95
sweep_frames = 4,8,16
sweep_heads = 1,1,1;2,2,2
";

pub const STAGES: [&str; 6] = ["gen-data", "build-hierarchy", "train-spae", "encode", "train-classifier", "eval"];

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Run {
    pub fn ok(&self) -> bool {
        self.code == 0
    }
}

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("..").join("..")
}

pub fn desk_config() -> PathBuf {
    workspace_root().join("configs").join("desk.conf")
}

pub fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).expect("write config");
    path
}

/// Runs the binary with the cache under `out` unless `cache` is given.
pub fn spatr_with_cache(args: &[&str], config: &Path, out: &Path, cache: Option<&Path>) -> Run {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_spatr"));
    cmd.args(args).arg("--config").arg(config).arg("--out").arg(out);
    match cache {
        Some(c) => cmd.env("SPATR_CACHE_DIR", c),
        None => cmd.env_remove("SPATR_CACHE_DIR"),
    };
    let o = cmd.output().expect("run spatr");
    Run {
        code: o.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&o.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&o.stderr).into_owned(),
    }
}

pub fn spatr(args: &[&str], config: &Path, out: &Path) -> Run {
    spatr_with_cache(args, config, out, None)
}

pub fn spatr_bare(args: &[&str]) -> Run {
    let o = Command::new(env!("CARGO_BIN_EXE_spatr"))
        .args(args)
        .env_remove("SPATR_CACHE_DIR")
        .output()
        .expect("run spatr");
    Run {
        code: o.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&o.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&o.stderr).into_owned(),
    }
}

/// Runs every stage in order, failing loudly on the first error.
pub fn pipeline(config: &Path, out: &Path) -> Vec<Run> {
    STAGES
        .iter()
        .map(|stage| {
            let r = spatr(&[stage], config, out);
            assert!(r.ok(), "{stage} failed ({}):\n{}\n{}", r.code, r.stdout, r.stderr);
            r
        })
        .collect()
}

/// The value after `key` on the first line containing it, e.g. the
/// accuracy in `accuracy: 0.9583 (23/24)`.
pub fn number_after(text: &str, key: &str) -> Option<f64> {
    let line = text.lines().find(|l| l.starts_with(key))?;
    line[key.len()..].split_whitespace().next()?.parse().ok()
}

pub fn read_csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .expect("read csv")
        .lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

/// Every file under `dir` except `run.conf`, which records the output
/// path, as sorted `(relative path, bytes)` pairs.
pub fn artifacts(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).expect("read dir") {
            let path = entry.expect("entry").path();
            if path.is_dir() {
                walk(base, &path, out);
            } else if path.file_name().is_some_and(|n| n != "run.conf") {
                let rel = path.strip_prefix(base).expect("prefix").to_path_buf();
                out.push((rel, std::fs::read(&path).expect("read artifact")));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
