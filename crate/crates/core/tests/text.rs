#![allow(clippy::needless_range_loop)]

mod common;

use common::{check_opts, lcg_values, lift};
use hop_core::embed::{
    format_embedding_table, hashed_embedding, hashed_embeddings, load_embedding_table,
    parse_embedding_table, save_embedding_table,
};
use hop_core::reprogram::{map_prototypes, Fusion, ReprogramConfig, Reprogrammer};
use hop_core::HopError;
use hop_tensor::{grad_check_params, ParamStore, SeedRng, Tape, Tensor};
use proptest::prelude::*;

fn table(v: usize, d: usize, seed: u64) -> Tensor {
    Tensor::new([v, d], lcg_values(seed, v * d, 1.0)).unwrap()
}

#[test]
fn minimal_embedding_file_parses() {
    let t = parse_embedding_table("2 3\n0.5 -1 2\n3e-2 0 1.25\n").unwrap();
    assert_eq!(t.shape(), &[2, 3]);
    assert_eq!(t.data(), &[0.5, -1.0, 2.0, 0.03, 0.0, 1.25]);
}

#[test]
fn full_width_table_round_trips_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("emb.txt");
    let mut values = lcg_values(3, 1500 * 768, 1.0);
    values[0] = 1.0 / 3.0;
    values[1] = f64::MIN_POSITIVE;
    values[2] = -1e300;
    let t = Tensor::new([1500, 768], values).unwrap();
    save_embedding_table(&path, &t).unwrap();
    let back = load_embedding_table(&path).unwrap();
    assert_eq!(back.shape(), &[1500, 768]);
    assert!(back
        .data()
        .iter()
        .zip(t.data())
        .all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn malformed_files_give_distinct_errors_with_line_numbers() {
    let mut short = String::from("10 2\n");
    for i in 0..9 {
        short.push_str(&format!("{i} {i}\n"));
    }
    match parse_embedding_table(&short).unwrap_err() {
        HopError::EmbeddingRows { declared, line, .. } => {
            assert_eq!(declared, 10);
            assert_eq!(line, 10);
        }
        e => panic!("unexpected {e}"),
    }
    match parse_embedding_table("2 2\n1 2\n3\n").unwrap_err() {
        HopError::EmbeddingRows { line, .. } => assert_eq!(line, 3),
        e => panic!("unexpected {e}"),
    }
    match parse_embedding_table("2 2\n1 2\n3 x7\n").unwrap_err() {
        HopError::EmbeddingValue { line, value } => {
            assert_eq!(line, 3);
            assert_eq!(value, "x7");
        }
        e => panic!("unexpected {e}"),
    }
    assert!(matches!(
        parse_embedding_table("two 3\n").unwrap_err(),
        HopError::EmbeddingHeader(_)
    ));
    assert!(matches!(
        parse_embedding_table("").unwrap_err(),
        HopError::EmbeddingHeader(_)
    ));
    let missing = load_embedding_table(std::path::Path::new("/nonexistent/emb.txt")).unwrap_err();
    assert!(matches!(missing, HopError::Io { .. }));
}

#[test]
fn hashed_embeddings_are_deterministic_and_unit_norm() {
    assert_eq!(
        hashed_embedding("hello", 64, 5),
        hashed_embedding("hello", 64, 5)
    );
    let tokens: Vec<String> = (0..100).map(|i| format!("tok{i}")).collect();
    let t = hashed_embeddings(&tokens, 32, 9).unwrap();
    for r in 0..100 {
        let n = t.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-9);
    }
}

#[test]
fn different_seeds_give_unrelated_vectors() {
    let mut total = 0.0;
    for i in 0..100 {
        let tok = format!("word{i}");
        let a = hashed_embedding(&tok, 64, 1);
        let b = hashed_embedding(&tok, 64, 2);
        total += a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>();
    }
    assert!(total / 100.0 < 0.5, "mean cosine {}", total / 100.0);
}

#[test]
fn one_hot_map_selects_rows() {
    let e = table(4, 5, 1);
    let w = Tensor::new([2, 4], vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
    let p = map_prototypes(&e, &w).unwrap();
    assert_eq!(p.row(0), e.row(0));
    assert_eq!(p.row(1), e.row(2));
    assert!(map_prototypes(&e, &Tensor::zeros([2, 3]).unwrap()).is_err());
}

#[test]
fn uniform_map_gives_the_mean_row() {
    let (v, d) = (7, 3);
    let e = table(v, d, 2);
    let w = Tensor::full([3, v], 1.0 / v as f64).unwrap();
    let p = map_prototypes(&e, &w).unwrap();
    for c in 0..d {
        let mean = (0..v).map(|r| e.row(r)[c]).sum::<f64>() / v as f64;
        for r in 0..3 {
            assert!((p.row(r)[c] - mean).abs() < 1e-12);
        }
    }
}

#[test]
fn full_vocabulary_compresses_to_fifteen_hundred_prototypes() {
    // The mapping matrix is the real 1500 × 30522 size; the embedding width
    // is kept at 2 so the test stays light.
    let (v, vp) = (30_522, 1500);
    let e = table(v, 2, 4);
    let mut w = vec![0.0; vp * v];
    for r in 0..vp {
        w[r * v + r * 20] = 1.0;
    }
    let p = map_prototypes(&e, &Tensor::new([vp, v], w).unwrap()).unwrap();
    assert_eq!(p.shape(), &[1500, 2]);
    assert_eq!(p.row(1499), e.row(1499 * 20));
}

fn reprogrammer(cfg: ReprogramConfig, seed: u64) -> (ParamStore, Reprogrammer) {
    let mut store = ParamStore::new();
    let r = Reprogrammer::new(&mut store, "rp", cfg, &mut SeedRng::new(seed)).unwrap();
    (store, r)
}

fn run(
    store: &ParamStore,
    r: &Reprogrammer,
    mel: &Tensor,
    protos: &Tensor,
) -> (Tensor, Vec<Tensor>) {
    let mut tape = Tape::new();
    let p = store.bind_frozen(&mut tape);
    let m = tape.constant(mel.clone());
    let e = tape.constant(protos.clone());
    let out = r.forward(&mut tape, &p, m, e).unwrap();
    (
        tape.value(out.tokens).clone(),
        out.attention
            .iter()
            .map(|a| tape.value(*a).clone())
            .collect(),
    )
}

#[test]
fn full_sized_reprogramming_shapes() {
    // The prototypes are fed directly, so the vocabulary only needs to exceed V'.
    let cfg = ReprogramConfig {
        d_mel: 128,
        d_model: 768,
        d_hidden: 1024,
        heads: 8,
        prototypes: 1500,
        vocab: 1501,
    };
    let (store, r) = reprogrammer(cfg, 1);
    let (out, att) = run(&store, &r, &table(34, 128, 5), &table(1500, 768, 6));
    assert_eq!(out.shape(), &[34, 768]);
    assert_eq!(att.len(), 8);
    assert_eq!(att[0].shape(), &[34, 1500]);
    assert_eq!(store.get(r.query.weight).shape(), &[128, 1024]);
    assert_eq!(store.get(r.key.weight).shape(), &[768, 1024]);
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// `x·W + b` for row vectors.
fn affine(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (n_in, n_out) = (w.shape()[0], w.shape()[1]);
    (0..n_out)
        .map(|j| (0..n_in).map(|i| x[i] * w.get(&[i, j])).sum::<f64>() + b.data()[j])
        .collect()
}

#[test]
fn single_prototype_attends_with_weight_one() {
    let cfg = ReprogramConfig {
        d_mel: 3,
        d_model: 4,
        d_hidden: 4,
        heads: 2,
        prototypes: 1,
        vocab: 2,
    };
    let (store, r) = reprogrammer(cfg, 3);
    let proto = table(1, 4, 8);
    let (out, att) = run(&store, &r, &table(5, 3, 9), &proto);
    for a in &att {
        assert!(a.data().iter().all(|&x| x == 1.0));
    }
    let v = affine(
        proto.row(0),
        store.get(r.value.weight),
        store.get(r.value.bias.unwrap()),
    );
    let v: Vec<f64> = v.into_iter().map(relu).collect();
    let expected = affine(&v, store.get(r.out.weight), store.get(r.out.bias.unwrap()));
    for row in 0..5 {
        for (a, b) in out.row(row).iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn two_patch_attention_matches_brute_force() {
    let cfg = ReprogramConfig {
        d_mel: 2,
        d_model: 2,
        d_hidden: 2,
        heads: 1,
        prototypes: 2,
        vocab: 3,
    };
    let (mut store, r) = reprogrammer(cfg, 4);
    let m2 = |v: [f64; 4]| Tensor::new([2, 2], v.to_vec()).unwrap();
    let v2 = |v: [f64; 2]| Tensor::new([2], v.to_vec()).unwrap();
    let wq = m2([1.0, 0.5, -0.5, 2.0]);
    let wk = m2([0.3, -1.0, 1.0, 0.2]);
    let wv = m2([2.0, 0.0, -1.0, 1.0]);
    let wo = m2([1.0, -1.0, 0.5, 0.25]);
    let (bq, bk, bv, bo) = (
        v2([0.1, 0.0]),
        v2([0.0, -0.2]),
        v2([0.5, -0.5]),
        v2([0.0, 1.0]),
    );
    for (id, t) in [
        (r.query.weight, &wq),
        (r.key.weight, &wk),
        (r.value.weight, &wv),
        (r.out.weight, &wo),
        (r.query.bias.unwrap(), &bq),
        (r.key.bias.unwrap(), &bk),
        (r.value.bias.unwrap(), &bv),
        (r.out.bias.unwrap(), &bo),
    ] {
        store.set(id, t.clone()).unwrap();
    }
    let mel = m2([1.0, 2.0, -1.0, 0.5]);
    let protos = m2([0.5, -0.5, 1.5, 1.0]);
    let (out, att) = run(&store, &r, &mel, &protos);

    let scale = 1.0 / 2f64.sqrt();
    for p in 0..2 {
        let q = affine(mel.row(p), &wq, &bq);
        let keys: Vec<Vec<f64>> = (0..2).map(|k| affine(protos.row(k), &wk, &bk)).collect();
        let vals: Vec<Vec<f64>> = (0..2).map(|k| affine(protos.row(k), &wv, &bv)).collect();
        let s: Vec<f64> = keys
            .iter()
            .map(|k| (q[0] * k[0] + q[1] * k[1]) * scale)
            .collect();
        let z = s[0].exp() + s[1].exp();
        let a = [s[0].exp() / z, s[1].exp() / z];
        let h: Vec<f64> = (0..2)
            .map(|c| relu(a[0] * vals[0][c] + a[1] * vals[1][c]))
            .collect();
        let expected = affine(&h, &wo, &bo);
        assert!((att[0].get(&[p, 0]) - a[0]).abs() < 1e-12);
        for c in 0..2 {
            assert!(
                (out.get(&[p, c]) - expected[c]).abs() < 1e-12,
                "patch {p} col {c}"
            );
        }
    }
}

fn small_cfg() -> ReprogramConfig {
    ReprogramConfig {
        d_mel: 3,
        d_model: 4,
        d_hidden: 6,
        heads: 2,
        prototypes: 3,
        vocab: 5,
    }
}

#[test]
fn mismatched_inputs_are_rejected() {
    let (store, r) = reprogrammer(small_cfg(), 1);
    let mut tape = Tape::new();
    let p = store.bind_frozen(&mut tape);
    let bad_mel = tape.constant(table(2, 4, 1));
    let protos = tape.constant(table(3, 4, 2));
    assert!(r.forward(&mut tape, &p, bad_mel, protos).is_err());
    let vocab = tape.constant(table(4, 4, 3));
    assert!(r.prototypes(&mut tape, &p, vocab).is_err());
}

#[test]
fn reprogramming_is_bit_deterministic() {
    let (store, r) = reprogrammer(small_cfg(), 7);
    let mel = table(6, 3, 1);
    let protos = table(3, 4, 2);
    let (a, _) = run(&store, &r, &mel, &protos);
    let (b, _) = run(&store, &r, &mel, &protos);
    assert!(a
        .data()
        .iter()
        .zip(b.data())
        .all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn reprogramming_gradients_match_finite_differences() {
    let (store, r) = reprogrammer(small_cfg(), 2);
    let mel = table(4, 3, 11);
    let vocab = table(5, 4, 12);
    let target = table(4, 4, 13);
    let report = grad_check_params(
        &store,
        |tape, p| {
            let m = tape.constant(mel.clone());
            let v = tape.constant(vocab.clone());
            let protos = lift(r.prototypes(tape, p, v))?;
            let out = lift(r.forward(tape, p, m, protos))?;
            let t = tape.constant(target.clone());
            let d = tape.sub(out.tokens, t)?;
            let sq = tape.mul(d, d)?;
            tape.mean(sq)
        },
        &check_opts(),
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
    assert!(report.checked > 50);
}

#[test]
fn fusion_shapes_and_fallbacks() {
    let mut store = ParamStore::new();
    let f = Fusion::new(&mut store, "fuse", 768, 32, 34, &mut SeedRng::new(1)).unwrap();
    let mut tape = Tape::new();
    let p = store.bind_frozen(&mut tape);
    let tokens = tape.constant(table(34, 768, 1));
    let text = tape.constant(table(12, 768, 2));
    let out = f.fuse_one(&mut tape, &p, tokens, Some(text)).unwrap();
    assert_eq!(tape.shape(out), &[34, 32]);
    assert!(Fusion::new(&mut ParamStore::new(), "f", 4, 4, 0, &mut SeedRng::new(1)).is_err());
}

#[test]
fn empty_text_with_identity_projection_resamples_the_tokens() {
    let mut store = ParamStore::new();
    let f = Fusion::new(&mut store, "fuse", 3, 3, 7, &mut SeedRng::new(1)).unwrap();
    store.set(f.proj.weight, Tensor::eye(3).unwrap()).unwrap();
    store
        .set(f.proj.bias.unwrap(), Tensor::zeros([3]).unwrap())
        .unwrap();
    // Rows are linear in position, so linear resampling keeps them on the line.
    let rows: Vec<Vec<f64>> = (0..4)
        .map(|i| vec![i as f64, 2.0 * i as f64, -1.0])
        .collect();
    let mut tape = Tape::new();
    let p = store.bind_frozen(&mut tape);
    let tokens = tape.constant(Tensor::from_rows(&rows).unwrap());
    let out = f.fuse_one(&mut tape, &p, tokens, None).unwrap();
    let out = tape.value(out);
    assert_eq!(out.shape(), &[7, 3]);
    for t in 0..7 {
        let pos = t as f64 * 3.0 / 6.0;
        assert!((out.get(&[t, 0]) - pos).abs() < 1e-12);
        assert!((out.get(&[t, 1]) - 2.0 * pos).abs() < 1e-12);
        assert!((out.get(&[t, 2]) + 1.0).abs() < 1e-12);
    }
}

#[test]
fn constant_sequences_fuse_to_constants() {
    let mut store = ParamStore::new();
    let f = Fusion::new(&mut store, "fuse", 4, 5, 34, &mut SeedRng::new(3)).unwrap();
    let mut tape = Tape::new();
    let p = store.bind_frozen(&mut tape);
    let tokens = tape.constant(Tensor::full([16, 4], 0.7).unwrap());
    let text = tape.constant(Tensor::full([5, 4], 0.7).unwrap());
    let out = f.fuse_one(&mut tape, &p, tokens, Some(text)).unwrap();
    let out = tape.value(out);
    for t in 1..34 {
        for c in 0..5 {
            assert!((out.get(&[t, c]) - out.get(&[0, c])).abs() < 1e-12);
        }
    }
}

#[test]
fn formatted_table_starts_with_its_header() {
    let text = format_embedding_table(&table(3, 2, 1)).unwrap();
    assert!(text.starts_with("3 2\n"));
    assert_eq!(text.lines().count(), 4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn attention_rows_sum_to_one(seed in 0u64..1000, rows in 1usize..8) {
        let (store, r) = reprogrammer(small_cfg(), seed);
        let (_, att) = run(&store, &r, &table(rows, 3, seed + 1), &table(3, 4, seed + 2));
        for a in att {
            for i in 0..rows {
                prop_assert!((a.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn patches_are_permutation_equivariant(seed in 0u64..1000, shift in 1usize..5) {
        let (store, r) = reprogrammer(small_cfg(), seed);
        let mel = table(5, 3, seed + 7);
        let protos = table(3, 4, seed + 8);
        let perm: Vec<usize> = (0..5).map(|i| (i + shift) % 5).collect();
        let permuted = Tensor::from_rows(&perm.iter().map(|&i| mel.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let (a, _) = run(&store, &r, &mel, &protos);
        let (b, _) = run(&store, &r, &permuted, &protos);
        for (k, &i) in perm.iter().enumerate() {
            for (x, y) in b.row(k).iter().zip(a.row(i)) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
