mod common;

use common::lcg_values;
use hop_core::audio::Waveform;
use hop_core::corpus::{synthesize_corpus, SyntheticCorpusSpec};
use hop_core::metrics::{
    beat_consistency, beat_consistency_at, diversity, fgd, fgd_from_latents, kinematic_beats,
    matrix_sqrt_psd, BeatConfig, ExtractorConfig, FeatureExtractor, GaussianSummary,
};
use hop_core::pose::{PoseSequence, Skeleton};
use hop_tensor::SeedRng;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

fn normal_latents(n: usize, mean: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = SeedRng::new(seed);
    (0..n)
        .map(|_| {
            let n: f64 = StandardNormal.sample(&mut rng);
            vec![mean + n]
        })
        .collect()
}

#[test]
fn square_roots_of_simple_matrices() {
    let id = DMatrix::<f64>::identity(3, 3);
    assert!((matrix_sqrt_psd(&id).unwrap() - &id).norm() < 1e-12);
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 9.0]));
    let r = matrix_sqrt_psd(&d).unwrap();
    assert!(
        (r - DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 3.0]))).norm() < 1e-12
    );
    let skew = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
    assert!(matrix_sqrt_psd(&skew).is_err());
}

#[test]
fn fgd_of_a_set_with_itself_is_zero() {
    let latents: Vec<Vec<f64>> = (0..50).map(|i| lcg_values(i, 6, 2.0)).collect();
    assert!(fgd_from_latents(&latents, &latents).unwrap().abs() < 1e-6);
}

#[test]
fn unit_mean_shift_gives_unit_distance() {
    let a = normal_latents(10_000, 0.0, 1);
    let b = normal_latents(10_000, 1.0, 2);
    let d = fgd_from_latents(&a, &b).unwrap();
    assert!((d - 1.0).abs() < 0.05, "{d}");
}

#[test]
fn fgd_is_symmetric() {
    let a: Vec<Vec<f64>> = (0..40).map(|i| lcg_values(i, 5, 1.0)).collect();
    let b: Vec<Vec<f64>> = (100..130)
        .map(|i| lcg_values(i, 5, 3.0).iter().map(|v| v + 0.5).collect())
        .collect();
    let ab = fgd_from_latents(&a, &b).unwrap();
    let ba = fgd_from_latents(&b, &a).unwrap();
    assert!(ab > 0.0);
    assert!((ab - ba).abs() < 1e-9);
    assert!(fgd_from_latents(&a[..1], &b).is_err());
}

#[test]
fn gaussian_summary_is_symmetric_with_jitter() {
    let latents: Vec<Vec<f64>> = (0..3).map(|i| lcg_values(i, 4, 1.0)).collect();
    let g = GaussianSummary::fit(&latents).unwrap();
    assert!((g.cov.clone() - g.cov.transpose()).norm() < 1e-12);
    assert!(g
        .cov
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .all(|&e| e > 0.0));
}

fn corpus(spec: &SyntheticCorpusSpec) -> hop_core::Corpus {
    synthesize_corpus(spec, &Skeleton::ted()).unwrap()
}

#[test]
fn aligned_synthetic_clips_score_near_one() {
    let c = corpus(&SyntheticCorpusSpec::new(7, 8));
    for clip in &c.clips {
        let bc = beat_consistency(&clip.audio, &clip.poses, &BeatConfig::default()).unwrap();
        assert!(bc >= 0.99, "{}: {bc}", clip.id);
    }
}

#[test]
fn offset_clicks_score_under_the_kernel_bound() {
    let mut spec = SyntheticCorpusSpec::new(3, 4);
    spec.beat_period = 20;
    spec.click_offset = 0.3;
    spec.noise = 0.0;
    spec.repeat_word = true;
    let c = corpus(&spec);
    let bound = (-4.5f64).exp() + 0.01;
    for clip in &c.clips {
        let bc = beat_consistency(&clip.audio, &clip.poses, &BeatConfig::default()).unwrap();
        assert!(bc <= bound, "{}: {bc}", clip.id);
    }
}

#[test]
fn still_poses_have_no_beats() {
    let s = Skeleton::ted();
    let poses = PoseSequence {
        fps: 15.0,
        joints: s.names.clone(),
        frames: vec![s.rest.clone(); 34],
    };
    let audio = Waveform::new(lcg_values(1, 18_134, 0.3), 8000).unwrap();
    assert!(kinematic_beats(&poses, &BeatConfig::default()).is_empty());
    assert_eq!(
        beat_consistency(&audio, &poses, &BeatConfig::default()).unwrap(),
        0.0
    );
}

#[test]
fn diversity_examples() {
    let a = vec![0.1; 34 * 27];
    let b: Vec<f64> = a.iter().map(|v| v + 1.0).collect();
    assert_eq!(diversity(&[a.clone(), b.clone()], 500, 3).unwrap(), 918.0);
    assert_eq!(
        diversity(&[a.clone(), a.clone(), a.clone()], 500, 3).unwrap(),
        0.0
    );
    assert!(diversity(std::slice::from_ref(&a), 500, 3).is_err());
    assert!(diversity(&[a.clone(), b.clone()], 0, 3).is_err());

    let set: Vec<Vec<f64>> = (0..10).map(|i| lcg_values(i, 30, 1.0)).collect();
    assert_eq!(
        diversity(&set, 200, 9).unwrap(),
        diversity(&set, 200, 9).unwrap()
    );
}

fn extractor_corpus(clips: usize) -> Vec<PoseSequence> {
    corpus(&SyntheticCorpusSpec::new(7, clips))
        .clips
        .into_iter()
        .map(|c| c.poses)
        .collect()
}

#[test]
fn extractor_loss_falls_for_ten_epochs_and_reloads_exactly() {
    let poses = extractor_corpus(16);
    let mut cfg = ExtractorConfig::new(34, 9);
    cfg.epochs = 10;
    let fx = FeatureExtractor::fit(cfg, &poses).unwrap();
    assert_eq!(fx.losses.len(), 10);
    for w in fx.losses.windows(2) {
        assert!(w[1] < w[0], "{:?}", fx.losses);
    }
    let dir = tempfile::tempdir().unwrap();
    fx.save(dir.path()).unwrap();
    let back = FeatureExtractor::load(dir.path()).unwrap();
    assert_eq!(back.encode(&poses).unwrap(), fx.encode(&poses).unwrap());
    assert_eq!(back.hash().unwrap(), fx.hash().unwrap());
    assert!(fgd(&poses, &poses, &fx).unwrap().abs() < 1e-6);
}

#[test]
fn two_dimensional_latents_are_allowed() {
    let poses = extractor_corpus(4);
    let mut cfg = ExtractorConfig::new(34, 9);
    cfg.latent = 2;
    cfg.epochs = 2;
    let fx = FeatureExtractor::fit(cfg.clone(), &poses).unwrap();
    assert_eq!(fx.encode(&poses[..1]).unwrap()[0].len(), 2);
    cfg.latent = 1;
    assert!(FeatureExtractor::fit(cfg, &poses).is_err());
    assert!(FeatureExtractor::fit(ExtractorConfig::new(34, 9), &poses[..1]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn square_root_reconstructs_psd_matrices(seed in any::<u64>(), n in 1usize..7, rank in 1usize..7) {
        let a = DMatrix::from_vec(n, rank, lcg_values(seed, n * rank, 2.0));
        let s = &a * a.transpose();
        let r = matrix_sqrt_psd(&s).unwrap();
        prop_assert!((&r - r.transpose()).norm() < 1e-9);
        prop_assert!(r.clone().symmetric_eigenvalues().iter().all(|&e| e > -1e-9));
        prop_assert!((&r * &r - &s).norm() < 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fgd_is_non_negative(seed in any::<u64>(), shift in -2.0f64..2.0) {
        let a: Vec<Vec<f64>> = (0..12).map(|i| lcg_values(seed ^ i, 3, 1.0)).collect();
        let b: Vec<Vec<f64>> = (0..9).map(|i| lcg_values(seed.wrapping_add(77 + i), 3, 1.5).iter().map(|v| v + shift).collect()).collect();
        prop_assert!(fgd_from_latents(&a, &b).unwrap() >= 0.0);
    }

    #[test]
    fn diversity_scales_linearly(seed in any::<u64>(), c in 0.01f64..50.0) {
        let set: Vec<Vec<f64>> = (0..6).map(|i| lcg_values(seed ^ i, 20, 1.0)).collect();
        let scaled: Vec<Vec<f64>> = set.iter().map(|s| s.iter().map(|v| v * c).collect()).collect();
        let d = diversity(&set, 100, seed).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert!((diversity(&scaled, 100, seed).unwrap() - c * d).abs() < 1e-9 * (1.0 + c * d));
    }

    #[test]
    fn beat_consistency_ignores_a_common_time_shift(clip in 0usize..4, shift in -30.0f64..30.0) {
        let c = corpus(&SyntheticCorpusSpec::new(11, 4));
        let rec = &c.clips[clip];
        let cfg = BeatConfig::default();
        let base = beat_consistency(&rec.audio, &rec.poses, &cfg).unwrap();
        let moved = beat_consistency_at(&rec.audio, shift, &rec.poses, shift, &cfg).unwrap();
        prop_assert!((base - moved).abs() < 1e-9);
        let apart = beat_consistency_at(&rec.audio, 0.0, &rec.poses, shift.abs() + 0.3, &cfg).unwrap();
        prop_assert!((0.0..=1.0).contains(&apart));
    }

    #[test]
    fn beat_consistency_stays_in_the_unit_interval(seed in any::<u64>()) {
        let s = Skeleton::ted();
        let v = lcg_values(seed, 34 * 27, 1.0);
        let frames = v.chunks(27).map(|f| f.chunks(3).map(|x| [x[0], x[1], x[2]]).collect()).collect();
        let poses = PoseSequence { fps: 15.0, joints: s.names.clone(), frames };
        let audio = Waveform::new(lcg_values(seed ^ 1, 8000, 0.5), 8000).unwrap();
        let bc = beat_consistency(&audio, &poses, &BeatConfig::default()).unwrap();
        prop_assert!((0.0..=1.0).contains(&bc));
    }
}
