#![allow(clippy::needless_range_loop)]

mod common;

use common::{check_opts, lcg_values, lift};
use hop_core::graph::{
    adaptive_adjacency, channels_joints_time, pose_to_graph, DiffusionConv, EncoderConfig,
    GraphEncoder, LayerSpec, TemporalBlock, TransitionMatrices,
};
use hop_core::pose::{PoseSequence, Skeleton};
use hop_tensor::{grad_check_params, ParamStore, SeedRng, Tape, Tensor};
use proptest::prelude::*;

fn tensor(shape: &[usize], seed: u64, scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), lcg_values(seed, n, scale)).unwrap()
}

fn moving_poses(frames: usize) -> PoseSequence {
    let s = Skeleton::ted();
    let frames = (0..frames)
        .map(|t| {
            (0..9)
                .map(|j| {
                    let a = 0.1 * t as f64 + j as f64;
                    let (x, y) = (a.cos(), a.sin());
                    [x * 0.6, y * 0.6, 0.8]
                })
                .collect()
        })
        .collect();
    PoseSequence {
        fps: 15.0,
        joints: s.names.clone(),
        frames,
    }
}

#[test]
fn pose_window_strides_down_to_graph_steps() {
    let poses = moving_poses(34);
    let g = pose_to_graph(&poses, 16).unwrap();
    assert_eq!(g.shape(), &[16, 9, 3]);
    for i in 0..16 {
        for j in 0..9 {
            for c in 0..3 {
                assert_eq!(g.get(&[i, j, c]), poses.frames[2 * i][j][c]);
            }
            let n: f64 = (0..3)
                .map(|c| g.get(&[i, j, c]).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }
    assert!(pose_to_graph(&poses, 35).is_err());
    assert!(pose_to_graph(&poses, 0).is_err());
}

#[test]
fn equal_lengths_are_an_identity_and_constants_stay_constant() {
    let poses = moving_poses(16);
    assert_eq!(pose_to_graph(&poses, 16).unwrap(), poses.to_tensor());

    let s = Skeleton::ted();
    let still = PoseSequence {
        fps: 15.0,
        joints: s.names.clone(),
        frames: vec![s.rest.clone(); 34],
    };
    let g = pose_to_graph(&still, 16).unwrap();
    for i in 0..16 {
        assert_eq!(&g.data()[i * 27..(i + 1) * 27], s.rest_flat().as_slice());
    }
}

#[test]
fn zero_embeddings_give_uniform_rows() {
    let a = adaptive_adjacency(
        &Tensor::zeros([5, 3]).unwrap(),
        &Tensor::zeros([5, 3]).unwrap(),
    )
    .unwrap();
    assert!(a.data().iter().all(|&x| (x - 0.2).abs() < 1e-15));
}

#[test]
fn two_node_adjacency_closed_form() {
    let e1 = Tensor::new([2, 1], vec![2f64.ln(), 0.0]).unwrap();
    let e2 = Tensor::new([2, 1], vec![1.0, 0.0]).unwrap();
    let a = adaptive_adjacency(&e1, &e2).unwrap();
    let expected = [2.0 / 3.0, 1.0 / 3.0, 0.5, 0.5];
    for (x, y) in a.data().iter().zip(expected) {
        assert!((x - y).abs() < 1e-12);
    }
}

fn identity_conv(store: &mut ParamStore, order: usize, c: usize) -> DiffusionConv {
    let conv = DiffusionConv::new(store, "conv", order, c, c, false, &mut SeedRng::new(1)).unwrap();
    for ids in &conv.weights {
        for &id in ids {
            store.set(id, Tensor::eye(c).unwrap()).unwrap();
        }
    }
    conv
}

#[test]
fn zeroth_order_identity_weights_triple_the_input() {
    let mut store = ParamStore::new();
    let conv = identity_conv(&mut store, 0, 4);
    let x = tensor(&[2, 3, 5, 4], 1, 1.0);
    let mut tape = Tape::new();
    let p = store.bind_frozen(&mut tape);
    let xv = tape.constant(x.clone());
    let a = tape.constant(Tensor::eye(5).unwrap());
    let z = conv.forward(&mut tape, &p, xv, &[], &[], a).unwrap();
    let z = tape.value(z);
    for (a, b) in z.data().iter().zip(x.data()) {
        assert!((a - 3.0 * b).abs() < 1e-12);
    }
}

#[test]
fn zero_features_stay_zero() {
    let mut store = ParamStore::new();
    let conv =
        DiffusionConv::new(&mut store, "conv", 2, 3, 4, false, &mut SeedRng::new(2)).unwrap();
    let tm = TransitionMatrices::from_adjacency(&Skeleton::ted().adjacency()).unwrap();
    let (f, b) = tm.powers(2).unwrap();
    let mut tape = Tape::new();
    let p = store.bind_frozen(&mut tape);
    let fv: Vec<_> = f.into_iter().map(|m| tape.constant(m)).collect();
    let bv: Vec<_> = b.into_iter().map(|m| tape.constant(m)).collect();
    let a = tape.constant(Tensor::full([9, 9], 1.0 / 9.0).unwrap());
    let x = tape.constant(Tensor::zeros([1, 2, 9, 3]).unwrap());
    let z = conv.forward(&mut tape, &p, x, &fv, &bv, a).unwrap();
    assert_eq!(tape.shape(z), &[1, 2, 9, 4]);
    assert!(tape.value(z).data().iter().all(|&v| v == 0.0));
}

fn mat_mul(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

fn to_mat(t: &Tensor) -> [[f64; 2]; 2] {
    [
        [t.get(&[0, 0]), t.get(&[0, 1])],
        [t.get(&[1, 0]), t.get(&[1, 1])],
    ]
}

#[test]
fn two_node_first_order_matches_expansion() {
    let adjacency = Tensor::new([2, 2], vec![1.0, 1.0, 0.0, 1.0]).unwrap();
    let tm = TransitionMatrices::from_adjacency(&adjacency).unwrap();
    let adaptive = adaptive_adjacency(&tensor(&[2, 2], 3, 1.0), &tensor(&[2, 2], 4, 1.0)).unwrap();
    let mut store = ParamStore::new();
    let conv = DiffusionConv::new(&mut store, "conv", 1, 2, 2, true, &mut SeedRng::new(5)).unwrap();
    let x = tensor(&[1, 1, 2, 2], 6, 1.0);

    let mut tape = Tape::new();
    let p = store.bind_frozen(&mut tape);
    let xv = tape.constant(x.clone());
    let f = tape.constant(tm.forward.clone());
    let b = tape.constant(tm.backward.clone());
    let a = tape.constant(adaptive.clone());
    let z = conv.forward(&mut tape, &p, xv, &[f], &[b], a).unwrap();
    let z = tape.value(z).clone();

    let xm = [[x.data()[0], x.data()[1]], [x.data()[2], x.data()[3]]];
    let w = |j: usize, k: usize| to_mat(store.get(conv.weights[j][k]));
    let supports = [to_mat(&tm.forward), to_mat(&tm.backward), to_mat(&adaptive)];
    let mut expected = [[0.0; 2]; 2];
    let bias = store.get(conv.bias.unwrap()).data().to_vec();
    for k in 0..3 {
        let zero = mat_mul(&xm, &w(0, k));
        let first = mat_mul(&mat_mul(&supports[k], &xm), &w(1, k));
        for i in 0..2 {
            for c in 0..2 {
                expected[i][c] += zero[i][c] + first[i][c];
            }
        }
    }
    for i in 0..2 {
        for c in 0..2 {
            assert!((z.get(&[0, 0, i, c]) - expected[i][c] - bias[c]).abs() < 1e-12);
        }
    }
}

fn tcn(
    store: &mut ParamStore,
    name: &str,
    taps: usize,
    dilation: usize,
    stride: usize,
    seed: u64,
) -> TemporalBlock {
    TemporalBlock::new(
        store,
        name,
        3,
        taps,
        dilation,
        stride,
        true,
        &mut SeedRng::new(seed),
    )
    .unwrap()
}

#[test]
fn saturated_gate_and_unit_tap_is_near_identity() {
    let mut store = ParamStore::new();
    let block = tcn(&mut store, "t", 1, 1, 1, 1);
    store
        .set(block.filter_a, Tensor::ones([3, 1]).unwrap())
        .unwrap();
    store
        .set(block.bias_a.unwrap(), Tensor::zeros([3]).unwrap())
        .unwrap();
    store
        .set(block.filter_b, Tensor::zeros([3, 1]).unwrap())
        .unwrap();
    store
        .set(block.bias_b.unwrap(), Tensor::full([3], 40.0).unwrap())
        .unwrap();
    let x = tensor(&[1, 6, 2, 3], 9, 1e-3);
    let mut tape = Tape::new();
    let p = store.bind_frozen(&mut tape);
    let xv = tape.constant(x.clone());
    let y = block.forward(&mut tape, &p, xv).unwrap();
    assert!(tape.value(y).max_abs_diff(&x) < 1e-9);
}

fn run_stack(store: &ParamStore, blocks: &[TemporalBlock], x: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let p = store.bind_frozen(&mut tape);
    let mut v = tape.constant(x.clone());
    for b in blocks {
        v = b.forward(&mut tape, &p, v).unwrap();
    }
    tape.value(v).clone()
}

#[test]
fn two_block_stack_sees_exactly_four_steps() {
    let mut store = ParamStore::new();
    let blocks = [
        tcn(&mut store, "a", 2, 1, 1, 2),
        tcn(&mut store, "b", 2, 2, 1, 3),
    ];
    let x = tensor(&[1, 12, 1, 3], 4, 0.5);
    let base = run_stack(&store, &blocks, &x);
    let t = 9;
    for s in 0..12 {
        let mut bumped = x.clone();
        bumped.data_mut()[s * 3] += 0.3;
        let out = run_stack(&store, &blocks, &bumped);
        let changed = (out.get(&[0, t, 0, 0]) - base.get(&[0, t, 0, 0])).abs() > 1e-12;
        assert_eq!(changed, (t - 3..=t).contains(&s), "input step {s}");
        for u in 0..s {
            assert_eq!(
                out.get(&[0, u, 0, 0]),
                base.get(&[0, u, 0, 0]),
                "output {u} saw step {s}"
            );
        }
    }
}

fn encoder(cfg: EncoderConfig, seed: u64) -> (ParamStore, GraphEncoder) {
    let mut store = ParamStore::new();
    let enc = GraphEncoder::new(
        &mut store,
        "enc",
        cfg,
        &Skeleton::ted(),
        &mut SeedRng::new(seed),
    )
    .unwrap();
    (store, enc)
}

fn encode(store: &ParamStore, enc: &GraphEncoder, audio: &Tensor, action: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let p = store.bind_frozen(&mut tape);
    let a = tape.constant(audio.clone());
    let b = tape.constant(action.clone());
    let z = enc.forward(&mut tape, &p, a, b).unwrap();
    tape.value(z).clone()
}

#[test]
fn full_size_encoder_output_shape() {
    let (store, enc) = encoder(EncoderConfig::full(), 1);
    let audio = tensor(&[1, 16, 9, 170], 1, 0.1);
    let action = tensor(&[1, 16, 9, 3], 2, 0.5);
    let mut tape = Tape::new();
    let p = store.bind_frozen(&mut tape);
    let a = tape.constant(audio);
    let b = tape.constant(action);
    let z = enc.forward(&mut tape, &p, a, b).unwrap();
    let z = channels_joints_time(&mut tape, z).unwrap();
    assert_eq!(tape.shape(z), &[1, 173, 9, 4]);
}

#[test]
fn mismatched_node_counts_are_rejected() {
    let (store, enc) = encoder(EncoderConfig::full(), 1);
    let mut tape = Tape::new();
    let p = store.bind_frozen(&mut tape);
    let a = tape.constant(Tensor::zeros([1, 16, 9, 170]).unwrap());
    let b = tape.constant(Tensor::zeros([1, 16, 8, 3]).unwrap());
    assert!(enc.forward(&mut tape, &p, a, b).is_err());
}

#[test]
fn single_identity_graph_layer_triples_the_channels() {
    let cfg = EncoderConfig {
        steps: 3,
        audio_features: 2,
        diffusion_order: 0,
        node_embedding: 2,
        layers: vec![LayerSpec::Graph],
        bias: false,
    };
    let (mut store, enc) = encoder(cfg, 1);
    for (id, name, _) in store.clone().iter() {
        if name.contains(".w0") {
            store.set(id, Tensor::eye(5).unwrap()).unwrap();
        }
    }
    let audio = tensor(&[2, 3, 9, 2], 3, 1.0);
    let action = tensor(&[2, 3, 9, 3], 4, 1.0);
    let z = encode(&store, &enc, &audio, &action);
    for b in 0..2 {
        for t in 0..3 {
            for j in 0..9 {
                for c in 0..5 {
                    let x = if c < 2 {
                        audio.get(&[b, t, j, c])
                    } else {
                        action.get(&[b, t, j, c - 2])
                    };
                    assert!((z.get(&[b, t, j, c]) - 3.0 * x).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn bias_free_encoder_maps_zero_to_zero() {
    let mut cfg = EncoderConfig::full();
    cfg.bias = false;
    let (store, enc) = encoder(cfg, 4);
    let z = encode(
        &store,
        &enc,
        &Tensor::zeros([1, 16, 9, 170]).unwrap(),
        &Tensor::zeros([1, 16, 9, 3]).unwrap(),
    );
    assert!(z.data().iter().all(|&v| v == 0.0));
}

fn small_cfg() -> EncoderConfig {
    EncoderConfig {
        steps: 8,
        audio_features: 2,
        diffusion_order: 2,
        node_embedding: 3,
        layers: vec![
            LayerSpec::Temporal {
                taps: 2,
                dilation: 1,
                stride: 2,
            },
            LayerSpec::Graph,
            LayerSpec::Temporal {
                taps: 2,
                dilation: 2,
                stride: 2,
            },
            LayerSpec::Graph,
        ],
        bias: true,
    }
}

#[test]
fn the_full_stack_is_causal() {
    let (store, enc) = encoder(small_cfg(), 5);
    let audio = tensor(&[1, 8, 9, 2], 6, 0.5);
    let action = tensor(&[1, 8, 9, 3], 7, 0.5);
    let base = encode(&store, &enc, &audio, &action);
    assert_eq!(base.shape(), &[1, 2, 9, 5]);
    // Output step u reads input steps up to 4u + 3.
    for s in 0..8 {
        let mut bumped = audio.clone();
        for j in 0..9 {
            bumped.data_mut()[(s * 9 + j) * 2] += 0.5;
        }
        let out = encode(&store, &enc, &bumped, &action);
        for u in 0..2 {
            let row = |t: &Tensor| t.data()[u * 45..(u + 1) * 45].to_vec();
            if 4 * u + 3 < s {
                assert_eq!(row(&out), row(&base), "output {u} saw step {s}");
            }
        }
    }
}

#[test]
fn encoder_gradients_match_finite_differences() {
    let mut cfg = small_cfg();
    cfg.steps = 4;
    let (store, enc) = encoder(cfg, 8);
    let audio = tensor(&[1, 4, 9, 2], 9, 0.5);
    let action = tensor(&[1, 4, 9, 3], 10, 0.5);
    let report = grad_check_params(
        &store,
        |tape, p| {
            let a = tape.constant(audio.clone());
            let b = tape.constant(action.clone());
            let z = lift(enc.forward(tape, p, a, b))?;
            let sq = tape.mul(z, z)?;
            tape.mean(sq)
        },
        &check_opts(),
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn adaptive_rows_are_distributions(seed in any::<u64>(), j in 1usize..10, e in 1usize..6) {
        let a = adaptive_adjacency(&tensor(&[j, e], seed, 3.0), &tensor(&[j, e], seed ^ 0xabcd, 3.0)).unwrap();
        for r in 0..j {
            prop_assert!((a.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(a.row(r).iter().all(|&x| x >= 0.0));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn diffusion_is_linear(seed in 0u64..10_000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut store = ParamStore::new();
        let conv = DiffusionConv::new(&mut store, "conv", 2, 3, 2, false, &mut SeedRng::new(seed)).unwrap();
        let tm = TransitionMatrices::from_adjacency(&Skeleton::ted().adjacency()).unwrap();
        let (f, bw) = tm.powers(2).unwrap();
        let adaptive = adaptive_adjacency(&tensor(&[9, 3], seed + 1, 1.0), &tensor(&[9, 3], seed + 2, 1.0)).unwrap();
        let x1 = tensor(&[1, 2, 9, 3], seed + 3, 1.0);
        let x2 = tensor(&[1, 2, 9, 3], seed + 4, 1.0);
        let mixed = Tensor::new(
            x1.shape().to_vec(),
            x1.data().iter().zip(x2.data()).map(|(p, q)| a * p + b * q).collect(),
        ).unwrap();
        let apply = |x: &Tensor| {
            let mut tape = Tape::new();
            let p = store.bind_frozen(&mut tape);
            let fv: Vec<_> = f.iter().map(|m| tape.constant(m.clone())).collect();
            let bv: Vec<_> = bw.iter().map(|m| tape.constant(m.clone())).collect();
            let av = tape.constant(adaptive.clone());
            let xv = tape.constant(x.clone());
            let z = conv.forward(&mut tape, &p, xv, &fv, &bv, av).unwrap();
            tape.value(z).clone()
        };
        let (z1, z2, zm) = (apply(&x1), apply(&x2), apply(&mixed));
        for i in 0..zm.numel() {
            prop_assert!((zm.data()[i] - a * z1.data()[i] - b * z2.data()[i]).abs() < 1e-9);
        }
    }
}
