use std::collections::{BTreeSet, HashSet};

use proptest::prelude::*;
use spatr::hierarchy::{apply_sampling, build_hierarchy, build_spiral_table, SamplingKind, SPIRAL_PAD};
use spatr::mesh::{
    decode_sequence, encode_sequence, icosphere, split_by_subject, uniform_sample_indices, MeshFrame, MeshSequence,
    NormStats,
};
use spatr::spae::{decode_embeddings, encode_embeddings, EmbeddingSequence};
use spatr::temporal::{attention_weights, self_attention, Classifier, ClassifierConfig, PeMode};
use spatr::tensor::{decode_checkpoint, encode_checkpoint, matmul_into, naive_matmul, ParamStore, Tensor};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor<f64>> {
    prop::collection::vec(-2.0f64..2.0, rows * cols).prop_map(move |d| Tensor::matrix(rows, cols, d).unwrap())
}

fn permute_rows(t: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(t.rows(), t.cols(), |r, c| t.at(perm[r], c))
}

fn permutation(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<_>>()).prop_shuffle()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn spiral_rows_start_at_vertex_then_one_ring(sub in 0u32..3, length in 1usize..40) {
        let (topo, rest) = icosphere(sub);
        let table = build_spiral_table(&topo, length, &rest).unwrap();
        prop_assert_eq!(table.vertex_count(), topo.vertex_count());
        for v in 0..topo.vertex_count() {
            let row = table.row(v);
            prop_assert_eq!(row.len(), length);
            prop_assert_eq!(row[0] as usize, v);
            let real: Vec<u32> = row.iter().copied().take_while(|&i| i != SPIRAL_PAD).collect();
            prop_assert!(row[real.len()..].iter().all(|&i| i == SPIRAL_PAD), "padding only at the tail");
            let distinct: HashSet<u32> = real.iter().copied().collect();
            prop_assert_eq!(distinct.len(), real.len());
            let ring: BTreeSet<u32> = topo.neighbors(v).iter().copied().collect();
            let k = ring.len().min(real.len().saturating_sub(1));
            let head: BTreeSet<u32> = real[1..1 + k].iter().copied().collect();
            prop_assert!(head.is_subset(&ring), "entries after the centre come from the 1-ring first");
        }
    }

    #[test]
    fn down_is_one_hot_and_up_rows_sum_to_one(factors in prop::collection::vec(prop::sample::select(vec![2.0, 3.0]), 1..4)) {
        let (topo, rest) = icosphere(2);
        let h = build_hierarchy(&topo, &rest, &factors, &[6]).unwrap();
        for (down, up) in h.down.iter().zip(&h.up) {
            prop_assert_eq!(down.kind, SamplingKind::Down);
            prop_assert_eq!(up.kind, SamplingKind::Up);
            let mut per_row = vec![0usize; down.rows];
            for &(r, c, w) in &down.entries {
                prop_assert!((w - 1.0).abs() < 1e-12 && (c as usize) < down.cols);
                per_row[r as usize] += 1;
            }
            prop_assert!(per_row.iter().all(|&n| n == 1));
            prop_assert!(up.entries.iter().all(|e| e.2 >= -1e-12));
            for s in up.row_sums() {
                prop_assert!((s - 1.0).abs() < 1e-6, "row sum {}", s);
            }
        }
    }

    #[test]
    fn sampling_matches_dense_product(f in 1usize..5, seed in any::<u64>()) {
        let (topo, rest) = icosphere(1);
        let h = build_hierarchy(&topo, &rest, &[2.0], &[6]).unwrap();
        for op in [&h.down[0], &h.up[0]] {
            let mut s = seed;
            let x = Tensor::from_fn(op.cols, f, |_, _| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            });
            let y = apply_sampling(op, &x).unwrap();
            let want = naive_matmul(op.rows, op.cols, f, &op.to_dense(), x.data());
            let err = y.data().iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(err < 1e-12);
        }
    }

    #[test]
    fn blocked_matmul_matches_naive(m in 1usize..20, k in 1usize..20, n in 1usize..20, seed in any::<u64>()) {
        let mut s = seed | 1;
        let mut next = || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s % 2001) as f64 / 1000.0 - 1.0
        };
        let a: Vec<f64> = (0..m * k).map(|_| next()).collect();
        let b: Vec<f64> = (0..k * n).map(|_| next()).collect();
        let mut out = vec![0.0; m * n];
        matmul_into(m, k, n, &a, &b, &mut out);
        let want = naive_matmul(m, k, n, &a, &b);
        prop_assert!(out.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn uniform_sample_indices_are_spread(length in 1usize..300, frac in 0.0f64..1.0) {
        let n = 1 + ((length - 1) as f64 * frac) as usize;
        let idx = uniform_sample_indices(length, n).unwrap();
        prop_assert_eq!(idx.len(), n);
        prop_assert_eq!(idx[0], 0);
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(*idx.last().unwrap() < length);
        prop_assert!(uniform_sample_indices(length, length + 1).is_err());
        prop_assert!(uniform_sample_indices(length, 0).is_err());
    }

    #[test]
    fn attention_rows_are_distributions(q in matrix(6, 4), k in matrix(6, 4), shift in -5.0f64..5.0) {
        let a = attention_weights(&q, &k).unwrap();
        for r in 0..a.rows() {
            prop_assert!(a.row(r).iter().all(|&p| p >= 0.0));
            prop_assert!((a.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        // Adding the same vector to every key shifts each score row by a constant.
        let shifted = Tensor::from_fn(6, 4, |r, c| k.at(r, c) + if c == 0 { shift } else { 0.0 });
        let b = attention_weights(&q, &shifted).unwrap();
        prop_assert!(a.max_abs_diff(&b) < 1e-9);
    }

    #[test]
    fn self_attention_is_permutation_equivariant(
        q in matrix(7, 3), k in matrix(7, 3), v in matrix(7, 5), perm in permutation(7)
    ) {
        let out = self_attention(&q, &k, &v).unwrap();
        let p = self_attention(&permute_rows(&q, &perm), &permute_rows(&k, &perm), &permute_rows(&v, &perm)).unwrap();
        prop_assert!(p.max_abs_diff(&permute_rows(&out, &perm)) < 1e-12);
    }

    #[test]
    fn classifier_without_position_encoding_ignores_token_order(
        tokens in prop::collection::vec(-1.0f32..1.0, 5 * 6), perm in permutation(5), seed in 0u64..1000
    ) {
        let mut config = ClassifierConfig::transformer(6, 3);
        config.pe = PeMode::None;
        config.d_model = 8;
        config.ffn_hidden = 8;
        config.heads = vec![1, 2, 1];
        config.max_len = 16;
        config.seq_len = 5;
        let model = Classifier::<f64>::new(config, seed).unwrap();
        let seq = EmbeddingSequence::new(Tensor::matrix(5, 6, tokens).unwrap(), None).unwrap();
        let a = model.classify(&seq).unwrap();
        let b = model.classify(&seq.permuted(&perm)).unwrap();
        prop_assert!(a.logits.iter().zip(&b.logits).all(|(x, y)| (x - y).abs() < 1e-10));
    }

    #[test]
    fn normalization_round_trips(
        coords in prop::collection::vec(prop::array::uniform3(-2.0f32..2.0), 2..40),
    ) {
        let frame = MeshFrame::new(coords);
        let stats = NormStats::fit([&frame]).unwrap();
        let normed = stats.apply(&frame);
        prop_assert!(normed.coords().iter().flatten().all(|x| x.abs() <= 1.0 + 1e-6));
        let back = stats.invert(&normed);
        for (a, b) in frame.coords().iter().flatten().zip(back.coords().iter().flatten()) {
            prop_assert!((a - b).abs() < 1e-6, "{} vs {}", a, b);
        }
    }

    #[test]
    fn subject_split_is_disjoint_and_deterministic(
        subjects in prop::collection::vec(0u64..30, 2..120), fraction in 0.1f64..0.9, seed in any::<u64>()
    ) {
        let distinct: BTreeSet<u64> = subjects.iter().copied().collect();
        prop_assume!(distinct.len() >= 2);
        let items: Vec<(usize, u64)> = subjects.iter().copied().enumerate().collect();
        let split = split_by_subject(items.clone(), fraction, seed).unwrap();
        let train: BTreeSet<u64> = split.train.iter().map(|&i| subjects[i]).collect();
        let test: BTreeSet<u64> = split.test.iter().map(|&i| subjects[i]).collect();
        prop_assert!(train.is_disjoint(&test));
        prop_assert!(!train.is_empty() && !test.is_empty());
        prop_assert_eq!(split.train.len() + split.test.len(), subjects.len());
        let again = split_by_subject(items, fraction, seed).unwrap();
        prop_assert_eq!(split.train, again.train);
        prop_assert_eq!(split.test, again.test);
    }

    #[test]
    fn sequence_files_round_trip(
        frames in prop::collection::vec(prop::collection::vec(prop::array::uniform3(-10.0f32..10.0), 4), 1..6),
        label in prop::option::of(0u32..10),
        topology in any::<u64>(),
    ) {
        let seq = MeshSequence::new(frames.into_iter().map(MeshFrame::new).collect(), label, topology).unwrap();
        let back = decode_sequence(&encode_sequence(&seq), Some(topology)).unwrap();
        prop_assert_eq!(&back, &seq);
        prop_assert!(decode_sequence(&encode_sequence(&seq), Some(topology ^ 1)).is_err());
    }

    #[test]
    fn embedding_and_checkpoint_files_round_trip(
        data in prop::collection::vec(-5.0f32..5.0, 12), label in prop::option::of(0u32..4)
    ) {
        let seqs = vec![
            EmbeddingSequence::new(Tensor::matrix(3, 4, data.clone()).unwrap(), label).unwrap(),
            EmbeddingSequence::new(Tensor::matrix(2, 4, data[..8].to_vec()).unwrap(), None).unwrap(),
        ];
        prop_assert_eq!(decode_embeddings(&encode_embeddings(&seqs).unwrap()).unwrap(), seqs.clone());
        let other_width = EmbeddingSequence::new(Tensor::matrix(4, 3, data.clone()).unwrap(), None).unwrap();
        prop_assert!(encode_embeddings(&[seqs[0].clone(), other_width]).is_err());

        let mut params = ParamStore::<f32>::new();
        params.add("w", Tensor::matrix(3, 4, data.clone()).unwrap()).unwrap();
        params.add("b", Tensor::matrix(1, 12, data).unwrap()).unwrap();
        let ckpt = decode_checkpoint(&encode_checkpoint(&params, None, "kind=test")).unwrap();
        prop_assert_eq!(ckpt.meta.as_str(), "kind=test");
        prop_assert_eq!(ckpt.params.names(), params.names());
        prop_assert_eq!(ckpt.params.tensors(), params.tensors());
    }
}
