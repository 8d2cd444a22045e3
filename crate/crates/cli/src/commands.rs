use std::path::{Path, PathBuf};

use hop_core::corpus::corpus_hash;
use hop_core::metrics::{
    beat_consistency, diversity, fgd, BeatConfig, ExtractorConfig, FeatureExtractor, DEFAULT_PAIRS,
};
use hop_core::model::build_vocab;
use hop_core::reprogram::mean_cosine;
use hop_core::train::{epoch_means, generation_noise};
use hop_core::{
    load_clips, synthesize_corpus, ClipFeatures, ClipRecord, FeatureBuilder, HopConfig,
    PoseSequence, Skeleton, SyntheticCorpusSpec, TrainConfig, Trainer,
};
use hop_tensor::Tensor;
use serde::Deserialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};
use crate::files::{
    create_dir, merged, model_config, overlay, print_line, require_dir, require_file, write_json,
    write_text, ConfigFile,
};
use crate::CommonArgs;

fn out_dir(args: &CommonArgs, command: &str) -> Result<PathBuf> {
    args.out.clone().ok_or_else(|| {
        CliError::usage(format!(
            "{command} needs an output directory: pass --out DIR"
        ))
    })
}

fn features(cfg: &HopConfig, clips: &[ClipRecord]) -> Result<Vec<ClipFeatures>> {
    let vocab = build_vocab(cfg)?;
    Ok(FeatureBuilder::new(cfg, &vocab)?.build_all(clips)?)
}

// ---------------------------------------------------------------- synth-data

pub fn synth_data(args: &CommonArgs) -> Result<()> {
    let file = ConfigFile::read(&args.config)?;
    let mut patch = file.value.clone();
    let skeleton = match patch.as_object_mut().and_then(|m| m.remove("skeleton")) {
        None => Skeleton::ted(),
        Some(Value::String(s)) if s == "ted" => Skeleton::ted(),
        Some(Value::String(s)) if s == "ted_expressive" => Skeleton::ted_expressive(),
        Some(other) => {
            return Err(CliError::usage(format!(
                "unknown skeleton {other}; valid skeletons: ted, ted_expressive"
            )))
        }
    };
    let mut spec = merged(
        &SyntheticCorpusSpec::new(0, 0),
        Some(&patch),
        "synthetic corpus spec",
    )?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    spec.validate()?;
    let out = out_dir(args, "synth-data")?;
    let corpus = synthesize_corpus(&spec, &skeleton)?;
    create_dir(&out)?;
    let hash = corpus
        .write(&out)
        .map_err(|e| CliError::usage(format!("cannot write corpus: {e}")))?;
    log::info!("wrote {} clips to {}", corpus.clips.len(), out.display());
    print_line(&hash)?;
    Ok(())
}

// ---------------------------------------------------------------- train

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    manifest: PathBuf,
    model: Value,
    #[serde(default)]
    train: Option<Value>,
    /// Checkpoint directory to continue from.
    #[serde(default)]
    resume: Option<PathBuf>,
}

pub fn train(args: &CommonArgs) -> Result<()> {
    let file = ConfigFile::read(&args.config)?;
    let tf: TrainFile = file.parse()?;
    let manifest = file.resolve(&tf.manifest);
    require_file(&manifest, "manifest")?;
    let resume = tf.resume.as_ref().map(|p| file.resolve(p));
    if let Some(r) = &resume {
        require_dir(r, "resume checkpoint")?;
    }
    let cfg = model_config(&tf.model, &file)?;
    let mut train = merged(&TrainConfig::default(), tf.train.as_ref(), "train")?;
    if let Some(seed) = args.seed {
        train.seed = seed;
    }
    train.validate()?;
    let out = out_dir(args, "train")?;

    let clips = load_clips(&manifest, &cfg)?;
    let feats = features(&cfg, &clips)?;
    let mut trainer = match resume {
        Some(dir) => {
            let mut t = Trainer::load(&dir)?;
            if t.model.cfg != cfg {
                return Err(CliError::usage(format!(
                    "checkpoint {} was trained with a different model config",
                    dir.display()
                )));
            }
            if t.epoch > train.epochs {
                return Err(CliError::usage(format!(
                    "checkpoint is at epoch {} but the config asks for {} epochs",
                    t.epoch, train.epochs
                )));
            }
            t.cfg.epochs = train.epochs;
            t
        }
        None => Trainer::new(cfg, train)?,
    };
    create_dir(&out)?;
    log::info!(
        "training on {} windows for {} epochs (from epoch {})",
        feats.len(),
        trainer.cfg.epochs,
        trainer.epoch
    );
    trainer.run(&feats, Some(&out))?;
    if let Some(last) = epoch_means(&trainer.history).last() {
        log::info!(
            "finished epoch {}: huber {:.5} total {:.5}",
            last.epoch,
            last.huber,
            last.total
        );
    }
    Ok(())
}

// ---------------------------------------------------------------- generate

fn default_batch() -> usize {
    16
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerateFile {
    checkpoint: PathBuf,
    manifest: PathBuf,
    #[serde(default = "default_batch")]
    batch_size: usize,
}

fn rows(t: &Tensor, start: usize, count: usize) -> Result<Tensor> {
    let cols = t.shape()[1];
    Ok(Tensor::new(
        [count, cols],
        t.data()[start * cols..(start + count) * cols].to_vec(),
    )?)
}

pub fn generate(args: &CommonArgs) -> Result<()> {
    let file = ConfigFile::read(&args.config)?;
    let gf: GenerateFile = file.parse()?;
    let checkpoint = file.resolve(&gf.checkpoint);
    let manifest = file.resolve(&gf.manifest);
    require_dir(&checkpoint, "checkpoint")?;
    require_file(&manifest, "manifest")?;
    if gf.batch_size == 0 {
        return Err(CliError::usage("batch_size must be at least 1"));
    }
    let out = out_dir(args, "generate")?;
    let seed = args.seed.unwrap_or(0);

    let trainer = Trainer::load(&checkpoint)?;
    let model = &trainer.model;
    let cfg = &model.cfg;
    let clips = load_clips(&manifest, cfg)?;
    for c in clips
        .iter()
        .filter(|c| c.transcript.as_deref().is_none_or(|t| t.trim().is_empty()))
    {
        log::warn!(
            "clip {} has no transcript; generating from audio alone",
            c.id
        );
    }
    let feats = features(cfg, &clips)?;
    let noise = generation_noise(seed, feats.len(), cfg.style_dim)?;

    create_dir(&out)?;
    let mut ids = Vec::with_capacity(feats.len());
    for (k, chunk) in feats.chunks(gf.batch_size).enumerate() {
        let start = k * gf.batch_size;
        let refs: Vec<&ClipFeatures> = chunk.iter().collect();
        let generated = model.generate(&refs, &rows(&noise, start, chunk.len())?)?;
        for (clip, m) in chunk.iter().zip(generated) {
            let poses = PoseSequence::from_tensor(&m, cfg.fps, cfg.skeleton.names.clone())?;
            poses.save_json(&out.join(format!("{}.json", clip.id)))?;
            write_text(&out.join(format!("{}.csv", clip.id)), &poses.to_csv())?;
            ids.push(clip.id.clone());
        }
    }
    let index = json!({
        "config_hash": cfg.hash(),
        "checkpoint_epoch": trainer.epoch,
        "seed": seed,
        "frames": cfg.frames,
        "joints": cfg.skeleton.names,
        "clips": ids,
    });
    write_json(&out.join("generation.json"), &index)?;
    log::info!("wrote {} pose sequences to {}", ids.len(), out.display());
    Ok(())
}

// ---------------------------------------------------------------- evaluate

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EvaluateFile {
    real_manifest: PathBuf,
    generated: PathBuf,
    model: Value,
    /// Saved feature extractor; fitted on the real clips and written here
    /// when absent.
    #[serde(default)]
    extractor: Option<PathBuf>,
    #[serde(default)]
    extractor_config: Option<Value>,
    #[serde(default)]
    report: Option<PathBuf>,
    #[serde(default)]
    beat: Option<Value>,
    #[serde(default)]
    diversity_pairs: Option<usize>,
}

fn load_generated(dir: &Path, real: &[ClipRecord], cfg: &HopConfig) -> Result<Vec<PoseSequence>> {
    let missing: Vec<&str> = real
        .iter()
        .filter(|c| !dir.join(format!("{}.json", c.id)).is_file())
        .map(|c| c.id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::usage(format!(
            "{} generated clip(s) missing from {}: {}",
            missing.len(),
            dir.display(),
            missing.join(", ")
        )));
    }
    real.iter()
        .map(|c| {
            let p = PoseSequence::load_json(&dir.join(format!("{}.json", c.id)))?;
            if p.num_frames() != cfg.frames || p.num_joints() != cfg.joints() {
                return Err(CliError::usage(format!(
                    "generated clip {} is {}×{}, expected {}×{}",
                    c.id,
                    p.num_frames(),
                    p.num_joints(),
                    cfg.frames,
                    cfg.joints()
                )));
            }
            Ok(p)
        })
        .collect()
}

fn mean_bc(clips: &[ClipRecord], poses: &[PoseSequence], cfg: &BeatConfig) -> Result<f64> {
    let mut total = 0.0;
    for (c, p) in clips.iter().zip(poses) {
        total += beat_consistency(&c.audio, p, cfg)?;
    }
    Ok(total / clips.len() as f64)
}

fn sequence_hash(poses: &[PoseSequence]) -> Result<String> {
    let mut h = Sha256::new();
    for p in poses {
        h.update(p.to_json()?.as_bytes());
    }
    Ok(hex::encode(h.finalize()))
}

pub fn evaluate(args: &CommonArgs) -> Result<()> {
    let file = ConfigFile::read(&args.config)?;
    let ef: EvaluateFile = file.parse()?;
    let real_manifest = file.resolve(&ef.real_manifest);
    let gen_dir = file.resolve(&ef.generated);
    require_file(&real_manifest, "real manifest")?;
    require_dir(&gen_dir, "generated directory")?;
    let cfg = model_config(&ef.model, &file)?;
    let beat = merged(&BeatConfig::default(), ef.beat.as_ref(), "beat")?;
    beat.validate()?;
    let fx_cfg = merged(
        &ExtractorConfig::new(cfg.frames, cfg.joints()),
        ef.extractor_config.as_ref(),
        "extractor_config",
    )?;
    let pairs = ef.diversity_pairs.unwrap_or(DEFAULT_PAIRS);
    let seed = args.seed.unwrap_or(0);
    let report_path = match (&ef.report, &args.out) {
        (Some(r), _) => file.resolve(r),
        (None, Some(out)) => out.join("report.json"),
        (None, None) => return Err(CliError::usage("evaluate needs a report path or --out DIR")),
    };
    let extractor_dir = match (&ef.extractor, &args.out) {
        (Some(p), _) => Some(file.resolve(p)),
        (None, Some(out)) => Some(out.join("extractor")),
        (None, None) => None,
    };

    let real = load_clips(&real_manifest, &cfg)?;
    let generated = load_generated(&gen_dir, &real, &cfg)?;
    let real_poses: Vec<PoseSequence> = real.iter().map(|c| c.poses.clone()).collect();

    let fx = match &extractor_dir {
        Some(dir) if dir.join(hop_tensor::checkpoint::MANIFEST_FILE).is_file() => {
            let fx = FeatureExtractor::load(dir)?;
            if fx.cfg.frames != cfg.frames || fx.cfg.joints != cfg.joints() {
                return Err(CliError::usage(format!(
                    "extractor {} expects {}×{} poses",
                    dir.display(),
                    fx.cfg.frames,
                    fx.cfg.joints
                )));
            }
            fx
        }
        _ => {
            log::info!(
                "fitting the feature extractor on {} real clips",
                real_poses.len()
            );
            let fx = FeatureExtractor::fit(fx_cfg, &real_poses)?;
            if let Some(dir) = &extractor_dir {
                fx.save(dir)?;
            }
            fx
        }
    };

    let flat = |s: &[PoseSequence]| s.iter().map(|p| p.flat()).collect::<Vec<_>>();
    let report = json!({
        "clips": real.len(),
        "fgd": fgd(&real_poses, &generated, &fx)?,
        "bc": mean_bc(&real, &generated, &beat)?,
        "diversity": diversity(&flat(&generated), pairs, seed)?,
        "reference": {
            "bc": mean_bc(&real, &real_poses, &beat)?,
            "diversity": diversity(&flat(&real_poses), pairs, seed)?,
        },
        "corpus_hash": corpus_hash(&real)?,
        "generated_hash": sequence_hash(&generated)?,
        "extractor_hash": fx.hash()?,
        "config_hash": cfg.hash(),
        "diversity_pairs": pairs,
        "seed": seed,
        "beat": beat,
    });
    if let Some(parent) = report_path.parent() {
        create_dir(parent)?;
    }
    write_json(&report_path, &report)?;
    log::info!(
        "fgd {:.4} bc {:.4} diversity {:.4}",
        report["fgd"].as_f64().unwrap_or(f64::NAN),
        report["bc"].as_f64().unwrap_or(f64::NAN),
        report["diversity"].as_f64().unwrap_or(f64::NAN)
    );
    Ok(())
}

// ---------------------------------------------------------------- inspect

pub const INSPECT_KEYS: [&str; 3] = ["adjacency", "attention", "alignment"];

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InspectFile {
    checkpoint: PathBuf,
    what: String,
    #[serde(default)]
    manifest: Option<PathBuf>,
    /// Clip for `attention`; the first clip when absent.
    #[serde(default)]
    clip: Option<String>,
}

fn matrix(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.shape()[0]).map(|r| t.row(r).to_vec()).collect()
}

pub fn inspect(args: &CommonArgs) -> Result<()> {
    let file = ConfigFile::read(&args.config)?;
    let inf: InspectFile = file.parse()?;
    if !INSPECT_KEYS.contains(&inf.what.as_str()) {
        return Err(CliError::usage(format!(
            "unknown inspect key {:?}; valid keys: {}",
            inf.what,
            INSPECT_KEYS.join(", ")
        )));
    }
    let checkpoint = file.resolve(&inf.checkpoint);
    require_dir(&checkpoint, "checkpoint")?;
    let manifest = match (&inf.manifest, inf.what.as_str()) {
        (Some(m), _) => {
            let m = file.resolve(m);
            require_file(&m, "manifest")?;
            Some(m)
        }
        (None, "adjacency") => None,
        (None, what) => return Err(CliError::usage(format!("inspect {what} needs a manifest"))),
    };

    let trainer = Trainer::load(&checkpoint)?;
    let model = &trainer.model;
    let cfg = &model.cfg;
    let head = json!({
        "what": inf.what,
        "config_hash": cfg.hash(),
        "checkpoint_epoch": trainer.epoch,
    });
    let body = match inf.what.as_str() {
        "adjacency" => json!({
            "joints": cfg.skeleton.names,
            "matrix": matrix(&model.adaptive_adjacency()?),
        }),
        what => {
            let clips = load_clips(manifest.as_deref().expect("checked above"), cfg)?;
            let feats = features(cfg, &clips)?;
            if what == "attention" {
                let clip = match &inf.clip {
                    Some(id) => feats.iter().find(|f| &f.id == id).ok_or_else(|| {
                        CliError::usage(format!("no clip {id:?} in the manifest"))
                    })?,
                    None => feats
                        .first()
                        .ok_or_else(|| CliError::usage("the manifest holds no clips"))?,
                };
                let (_, attention) = model.reprogram_clip(clip)?;
                json!({
                    "clip": clip.id,
                    "patches": attention[0].shape()[0],
                    "prototypes": attention[0].shape()[1],
                    "heads": attention.iter().map(matrix).collect::<Vec<_>>(),
                })
            } else {
                let mut per_clip = Vec::new();
                for f in &feats {
                    if let Some(text) = &f.text {
                        let (tokens, _) = model.reprogram_clip(f)?;
                        per_clip.push(json!({"id": f.id, "cosine": mean_cosine(&tokens, text)}));
                    }
                }
                if per_clip.is_empty() {
                    return Err(CliError::usage(
                        "no clip in the manifest carries a transcript",
                    ));
                }
                let mean = per_clip
                    .iter()
                    .filter_map(|c| c["cosine"].as_f64())
                    .sum::<f64>()
                    / per_clip.len() as f64;
                json!({
                    "clips": per_clip.len(),
                    "skipped": feats.len() - per_clip.len(),
                    "mean_cosine": mean,
                    "per_clip": per_clip,
                })
            }
        }
    };
    let mut report = head;
    overlay(&mut report, &body);
    match &args.out {
        Some(out) => {
            create_dir(out)?;
            write_json(&out.join(format!("{}.json", inf.what)), &report)?;
        }
        None => print_line(&serde_json::to_string_pretty(&report)?)?,
    }
    Ok(())
}
