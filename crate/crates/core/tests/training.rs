mod common;

use std::path::Path;

use common::{check_opts, lift};
use hop_core::audio::Waveform;
use hop_core::dataset::{read_manifest, write_manifest};
use hop_core::losses::{generator_gan_loss, total_loss};
use hop_core::model::build_vocab;
use hop_core::train::{epoch_dir, generator_terms, StyleDraws};
use hop_core::{
    load_clips, synthesize_corpus, Batch, ClipFeatures, ClipRecord, FeatureBuilder, HopConfig,
    HopError, HopModel, PoseSequence, Skeleton, SyntheticCorpusSpec, TrainConfig, Trainer,
};
use hop_tensor::{grad_check_params, SeedRng};

fn toy_features(seed: u64, clips: usize) -> (HopConfig, Vec<ClipFeatures>) {
    let cfg = HopConfig::toy();
    let corpus = synthesize_corpus(&SyntheticCorpusSpec::new(seed, clips), &cfg.skeleton).unwrap();
    let vocab = build_vocab(&cfg).unwrap();
    let feats = FeatureBuilder::new(&cfg, &vocab)
        .unwrap()
        .build_all(&corpus.clips)
        .unwrap();
    (cfg, feats)
}

fn small_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 3,
        seed: 7,
        ..TrainConfig::default()
    }
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

#[test]
fn corpus_generation_is_deterministic() {
    let s = Skeleton::ted();
    let a = synthesize_corpus(&SyntheticCorpusSpec::new(7, 64), &s).unwrap();
    let b = synthesize_corpus(&SyntheticCorpusSpec::new(7, 64), &s).unwrap();
    assert_eq!(a.clips.len(), 64);
    assert_eq!(a.hash().unwrap(), b.hash().unwrap());
    let c = synthesize_corpus(&SyntheticCorpusSpec::new(8, 64), &s).unwrap();
    assert_ne!(a.hash().unwrap(), c.hash().unwrap());
}

#[test]
fn written_corpus_loads_back_through_the_manifest() {
    let cfg = HopConfig::toy();
    let corpus = synthesize_corpus(&SyntheticCorpusSpec::new(5, 4), &cfg.skeleton).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let hash = corpus.write(dir.path()).unwrap();
    assert_eq!(hash, corpus.hash().unwrap());

    let loaded = load_clips(&dir.path().join("manifest.jsonl"), &cfg).unwrap();
    assert_eq!(loaded.len(), corpus.clips.len());
    for (a, b) in loaded.iter().zip(&corpus.clips) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.speaker, b.speaker);
        assert_eq!(a.transcript, b.transcript);
        assert_eq!(a.poses, b.poses);
        assert_eq!(a.audio.samples.len(), b.audio.samples.len());
        let worst = a
            .audio
            .samples
            .iter()
            .zip(&b.audio.samples)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1.0 / 32767.0, "{worst}");
    }
}

#[test]
fn missing_audio_names_the_clip() {
    let cfg = HopConfig::toy();
    let corpus = synthesize_corpus(&SyntheticCorpusSpec::new(5, 2), &cfg.skeleton).unwrap();
    let dir = tempfile::tempdir().unwrap();
    corpus.write(dir.path()).unwrap();
    let manifest = dir.path().join("manifest.jsonl");
    let mut entries = read_manifest(&manifest).unwrap();
    entries[1].wav_path = "wav/nowhere.wav".into();
    write_manifest(&manifest, &entries).unwrap();
    match load_clips(&manifest, &cfg) {
        Err(HopError::Dataset(msg)) => {
            assert!(msg.contains(&entries[1].id), "{msg}");
            assert!(msg.contains("nowhere.wav"), "{msg}");
        }
        other => panic!("expected a dataset error, got {other:?}"),
    }
}

#[test]
fn zero_epochs_or_batch_are_rejected() {
    assert!(small_train(0).validate().is_err());
    let zero_batch = TrainConfig {
        batch_size: 0,
        ..small_train(1)
    };
    assert!(Trainer::new(HopConfig::toy(), zero_batch).is_err());
    let d = TrainConfig::default();
    assert_eq!((d.epochs, d.batch_size), (75, 128));
}

#[test]
fn history_has_one_record_per_step() {
    let (cfg, feats) = toy_features(7, 7);
    let mut t = Trainer::new(cfg, small_train(2)).unwrap();
    t.run(&feats, None).unwrap();
    // ceil(7 / 3) = 3 steps per epoch.
    assert_eq!(t.history.len(), 6);
    assert_eq!(t.step, 6);
    assert_eq!(t.epoch, 2);
    for (i, r) in t.history.iter().enumerate() {
        assert_eq!(r.step, i as u64 + 1);
        assert_eq!(r.epoch, i / 3 + 1);
        assert!(r.total.is_finite());
    }
}

#[test]
fn seeded_runs_are_byte_identical() {
    let (cfg, feats) = toy_features(7, 6);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    Trainer::new(cfg.clone(), small_train(2))
        .unwrap()
        .run(&feats, Some(a.path()))
        .unwrap();
    Trainer::new(cfg, small_train(2))
        .unwrap()
        .run(&feats, Some(b.path()))
        .unwrap();

    let csv_a = std::fs::read(a.path().join("losses.csv")).unwrap();
    assert_eq!(csv_a, std::fs::read(b.path().join("losses.csv")).unwrap());
    for epoch in 0..=2 {
        let fa = files(&epoch_dir(a.path(), epoch));
        assert!(!fa.is_empty());
        assert_eq!(fa, files(&epoch_dir(b.path(), epoch)), "epoch {epoch}");
    }
    assert!(a.path().join("summary.json").exists());
}

#[test]
fn resuming_from_a_checkpoint_matches_an_uninterrupted_run() {
    let (cfg, feats) = toy_features(9, 5);
    let full = tempfile::tempdir().unwrap();
    let mut straight = Trainer::new(cfg.clone(), small_train(3)).unwrap();
    straight.run(&feats, Some(full.path())).unwrap();

    let part = tempfile::tempdir().unwrap();
    let mut first = Trainer::new(cfg, small_train(3)).unwrap();
    first.train_epoch(&feats).unwrap();
    first.save(&epoch_dir(part.path(), 1)).unwrap();
    drop(first);

    let mut resumed = Trainer::load(&epoch_dir(part.path(), 1)).unwrap();
    assert_eq!((resumed.epoch, resumed.history.len()), (1, 2));
    resumed.run(&feats, Some(part.path())).unwrap();
    assert_eq!(resumed.history, straight.history);
    assert_eq!(
        files(&epoch_dir(part.path(), 3)),
        files(&epoch_dir(full.path(), 3))
    );
    assert_eq!(
        std::fs::read(part.path().join("losses.csv")).unwrap(),
        std::fs::read(full.path().join("losses.csv")).unwrap()
    );
}

/// One hand-built clip at the gradient-check scale: three joints, eight
/// frames, 400 Hz audio.
fn gradcheck_clips(cfg: &HopConfig) -> Vec<ClipFeatures> {
    let vocab = build_vocab(cfg).unwrap();
    let builder = FeatureBuilder::new(cfg, &vocab).unwrap();
    (0..2)
        .map(|k| {
            let n = cfg.clip_samples();
            let samples = (0..n)
                .map(|i| 0.3 * ((i as f64) * (0.7 + 0.2 * k as f64)).sin())
                .collect();
            let frames = (0..cfg.frames)
                .map(|t| {
                    let a = 0.2 * t as f64 + k as f64;
                    vec![
                        [a.sin(), a.cos(), 0.0],
                        [a.cos(), 0.0, -a.sin()],
                        [-1.0, 0.0, 0.0],
                    ]
                })
                .collect();
            let clip = ClipRecord {
                id: format!("g{k}"),
                speaker: k,
                transcript: Some("wave then point".into()),
                audio: Waveform::new(samples, cfg.mel.sample_rate).unwrap(),
                poses: PoseSequence {
                    fps: cfg.fps,
                    joints: cfg.skeleton.names.clone(),
                    frames,
                },
            };
            builder.build(&clip).unwrap()
        })
        .collect()
}

#[test]
fn composed_generator_loss_matches_finite_differences() {
    let cfg = HopConfig::gradcheck();
    let clips = gradcheck_clips(&cfg);
    let refs: Vec<&ClipFeatures> = clips.iter().collect();
    let model = HopModel::new(cfg.clone(), 5).unwrap();
    let batch = Batch::new(&cfg, &refs).unwrap();
    let draws = StyleDraws::sample(&cfg, &batch, &mut SeedRng::new(2)).unwrap();
    let train = TrainConfig::default();

    let report = grad_check_params(
        &model.gen,
        |tape, p| {
            let terms = lift(generator_terms(
                &model,
                tape,
                p,
                &batch,
                &draws,
                train.style_margin,
            ))?;
            let frozen = model.disc.bind_frozen(tape);
            let scored = lift(model.discriminate(tape, &frozen, terms.g1, batch.size))?;
            let gan = lift(generator_gan_loss(tape, scored))?;
            lift(total_loss(
                tape,
                &train.weights,
                terms.huber,
                terms.style,
                terms.kld,
                gan,
            ))
        },
        &check_opts(),
    )
    .unwrap();
    assert!(report.checked > 100, "{report:?}");
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn pose_json_round_trip_is_bit_exact() {
    let s = Skeleton::ted();
    let frames = (0..34)
        .map(|t| {
            s.rest
                .iter()
                .enumerate()
                .map(|(j, r)| {
                    let a = 0.1 * t as f64 + 0.37 * j as f64 + 1e-13;
                    [r[0] * a.cos(), r[1] + a.sin() / 3.0, r[2] - 1.0 / (a + 7.0)]
                })
                .collect()
        })
        .collect();
    let p = PoseSequence {
        fps: 15.0,
        joints: s.names.clone(),
        frames,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    p.save_json(&path).unwrap();
    let back = PoseSequence::load_json(&path).unwrap();
    for (fa, fb) in p.frames.iter().zip(&back.frames) {
        for (a, b) in fa.iter().zip(fb) {
            for k in 0..3 {
                assert_eq!(a[k].to_bits(), b[k].to_bits());
            }
        }
    }
    assert_eq!(back, p);
}
