mod common;

use common::*;
use spatr::spae::load_embeddings;

fn tiny(dir: &std::path::Path) -> std::path::PathBuf {
    write_config(dir, "tiny.conf", TINY)
}

#[test]
fn gen_data_counts_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.conf", &TINY.replace("subjects = 6", "subjects = 40"));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let r = spatr(&["gen-data"], &cfg, &a);
    assert!(r.ok(), "{}", r.stderr);
    assert!(r.stdout.contains("wrote 120 sequences"));
    for label in 0..3 {
        assert!(r.stdout.contains(&format!("class {label} (")), "{}", r.stdout);
    }
    let manifest = std::fs::read_to_string(a.join("data/manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 121);
    assert!(spatr(&["gen-data"], &cfg, &b).ok());
    assert_eq!(artifacts(&a.join("data")), artifacts(&b.join("data")));
}

#[test]
fn empty_class_list_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.conf", &TINY.replace("classes = 0,1,2", "classes ="));
    let r = spatr(&["gen-data"], &cfg, dir.path());
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("classes"));

    let bad = write_config(dir.path(), "bad.conf", "no_such_key = 1\n");
    assert_eq!(spatr(&["gen-data"], &bad, dir.path()).code, 2);
    assert_eq!(spatr_bare(&["gen-data", "--pe", "rotary"]).code, 2);
}

#[test]
fn hierarchy_levels_cache_hit_and_rebuild() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "h.conf",
        "template = icosphere:2\nfactors = 4,4,4\nspiral_lengths = 12\n",
    );
    let out = dir.path().join("out");
    let first = spatr(&["build-hierarchy"], &cfg, &out);
    assert!(first.ok(), "{}", first.stderr);
    assert!(first.stdout.contains("162 → 41 → 11 → 4"), "{}", first.stdout);
    assert!(first.stdout.contains("built hierarchy"));

    let second = spatr(&["build-hierarchy"], &cfg, &out);
    assert!(second.stdout.contains("cache hit"), "{}", second.stdout);

    let other = write_config(
        dir.path(),
        "h2.conf",
        "template = icosphere:2\nfactors = 4,4,4\nspiral_lengths = 9\n",
    );
    let third = spatr(&["build-hierarchy"], &other, &out);
    assert!(third.ok());
    assert!(third.stderr.contains("warning"), "{}", third.stderr);
    assert!(third.stdout.contains("built hierarchy"));

    let forced = spatr(&["build-hierarchy", "--rebuild"], &other, &out);
    assert!(forced.stdout.contains("built hierarchy"));
}

#[test]
fn cache_dir_environment_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let cache = dir.path().join("elsewhere");
    let r = spatr_with_cache(&["build-hierarchy"], &cfg, &dir.path().join("out"), Some(&cache));
    assert!(r.ok(), "{}", r.stderr);
    assert!(cache.join("hierarchy.spth").exists());
    assert!(!dir.path().join("out/cache").exists());
}

#[test]
fn missing_upstream_artifacts_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let r = spatr(&["train-classifier"], &cfg, dir.path());
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("embedding cache") && r.stderr.contains("spatr encode"), "{}", r.stderr);
    let r = spatr(&["eval"], &cfg, dir.path());
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("train-classifier"), "{}", r.stderr);
    let r = spatr(&["train-spae"], &cfg, dir.path());
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("gen-data"), "{}", r.stderr);
}

#[test]
fn tiny_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let out = dir.path().join("out");
    let runs = pipeline(&cfg, &out);
    let eval = &runs[5].stdout;
    let acc = number_after(eval, "accuracy:").expect("accuracy line");
    assert!((0.0..=1.0).contains(&acc));

    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next(), Some("epoch,train_loss,test_accuracy"));
    assert_eq!(metrics.lines().count(), 4);

    let test = load_embeddings(&out.join("embeddings/test.spte")).unwrap();
    let confusion = read_csv_rows(&out.join("confusion.csv"));
    assert_eq!(confusion.len(), 3);
    for (class, row) in confusion.iter().enumerate() {
        let sum: usize = row.iter().map(|x| x.parse::<usize>().unwrap()).sum();
        let want = test.iter().filter(|s| s.label == Some(class as u32)).count();
        assert_eq!(sum, want);
    }

    let strict = spatr(&["eval", "--min-accuracy", "1.01"], &cfg, &out);
    assert_eq!(strict.code, 1);

    // Frame counts beyond the sequence length are rejected cleanly.
    let r = spatr(&["train-classifier", "--frames", "17"], &cfg, &out);
    assert_eq!(r.code, 2, "{}", r.stderr);

    for head in ["mlp", "lstm", "cnn"] {
        let alt = dir.path().join(head);
        std::fs::create_dir_all(alt.join("embeddings")).unwrap();
        for f in ["train.spte", "test.spte"] {
            std::fs::copy(out.join("embeddings").join(f), alt.join("embeddings").join(f)).unwrap();
        }
        let r = spatr(&["train-classifier", "--head", head], &cfg, &alt);
        assert!(r.ok(), "{head}: {}", r.stderr);
        let r = spatr(&["eval", "--head", head], &cfg, &alt);
        assert!(r.ok(), "{head}: {}", r.stderr);
    }
}

#[test]
fn sweeps_emit_one_row_per_setting() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let out = dir.path().join("out");
    for stage in &STAGES[..4] {
        assert!(spatr(&[stage], &cfg, &out).ok());
    }
    let r = spatr(&["sweep", "--axis", "frames"], &cfg, &out);
    assert!(r.ok(), "{}", r.stderr);
    let text = std::fs::read_to_string(out.join("sweep_frames.csv")).unwrap();
    assert!(text.starts_with("# reference full-scale result"));
    assert!(text.contains("48 frames") && text.contains("95.42%"));
    let rows = read_csv_rows(&out.join("sweep_frames.csv"));
    assert_eq!(rows[0][0], "frames");
    let frames: Vec<&str> = rows[1..].iter().map(|r| r[0].as_str()).collect();
    assert_eq!(frames, ["4", "8", "16"]);
    let sizes: Vec<&str> = rows[1..].iter().map(|r| r[5].as_str()).collect();
    assert!(sizes.iter().all(|s| *s == sizes[0]), "{sizes:?}");

    let r = spatr(&["sweep", "--axis", "heads"], &cfg, &out);
    assert!(r.ok(), "{}", r.stderr);
    let rows = read_csv_rows(&out.join("sweep_heads.csv"));
    let heads: Vec<&str> = rows[1..].iter().map(|r| r[2].as_str()).collect();
    assert_eq!(heads, ["1 1 1", "2 2 2"]);
}

#[test]
fn verify_passes_and_reports_injected_fault() {
    let clean = spatr_bare(&["verify", "--seeds", "2"]);
    assert_eq!(clean.code, 0, "{}", clean.stdout);
    assert!(clean.stdout.contains("max_error="));
    assert!(clean.stdout.contains("0 failed"));

    let broken = spatr_bare(&["verify", "--seeds", "1", "--inject-fault", "corrupt-gradient"]);
    assert_eq!(broken.code, 1);
    assert!(broken.stdout.contains("FAIL grad/matmul"), "{}", broken.stdout);
    assert!(broken.stderr.contains("grad/matmul"));
}
