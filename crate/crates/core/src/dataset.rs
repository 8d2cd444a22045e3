//! Clip records, the JSONL dataset manifest and per-clip feature
//! extraction.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::{
    audio_matrix_converter, load_waveform_at, window_audio, MelExtractor, Waveform,
};
use crate::config::HopConfig;
use crate::embed::{tokenize, VocabEmbeddings};
use crate::error::{HopError, Result};
use crate::model::ClipFeatures;
use crate::pose::PoseSequence;

/// Ingest windows are this many frames apart.
pub const INGEST_STRIDE: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct ClipRecord {
    pub id: String,
    pub speaker: usize,
    pub transcript: Option<String>,
    pub audio: Waveform,
    pub poses: PoseSequence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub speaker: usize,
    pub wav_path: PathBuf,
    #[serde(default)]
    pub transcript: Option<String>,
    pub pose_path: PathBuf,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| HopError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| HopError::Dataset(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| HopError::io(path, e))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Loads every manifest entry and cuts it into `frames`-long windows every
/// [`INGEST_STRIDE`] frames with the matching audio. Relative paths resolve
/// against the manifest's directory. Errors name the offending clip.
pub fn load_clips(manifest: &Path, cfg: &HopConfig) -> Result<Vec<ClipRecord>> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut clips = Vec::new();
    for e in read_manifest(manifest)? {
        let wav = resolve(base, &e.wav_path);
        if !wav.exists() {
            return Err(HopError::Dataset(format!(
                "clip {}: audio file {} does not exist",
                e.id,
                wav.display()
            )));
        }
        let audio = load_waveform_at(&wav, cfg.mel.sample_rate)
            .map_err(|err| HopError::Dataset(format!("clip {}: {err}", e.id)))?;
        let poses = PoseSequence::load_json(&resolve(base, &e.pose_path))
            .map_err(|err| HopError::Dataset(format!("clip {}: {err}", e.id)))?;
        if e.speaker >= cfg.speakers {
            return Err(HopError::Dataset(format!(
                "clip {}: speaker {} exceeds the {} configured speakers",
                e.id, e.speaker, cfg.speakers
            )));
        }
        let record = ClipRecord {
            id: e.id,
            speaker: e.speaker,
            transcript: e.transcript,
            audio,
            poses,
        };
        clips.extend(window_clip(&record, cfg)?);
    }
    Ok(clips)
}

/// `frames`-long windows with stride [`INGEST_STRIDE`]. A clip that is
/// exactly one window long keeps its id.
pub fn window_clip(clip: &ClipRecord, cfg: &HopConfig) -> Result<Vec<ClipRecord>> {
    let t = clip.poses.num_frames();
    if clip.poses.num_joints() != cfg.joints() {
        return Err(HopError::Dataset(format!(
            "clip {}: {} joints, expected {}",
            clip.id,
            clip.poses.num_joints(),
            cfg.joints()
        )));
    }
    if t < cfg.frames {
        return Err(HopError::Dataset(format!(
            "clip {}: {t} frames is shorter than one {}-frame window",
            clip.id, cfg.frames
        )));
    }
    let count = (t - cfg.frames) / INGEST_STRIDE + 1;
    let samples = cfg.clip_samples();
    Ok((0..count)
        .map(|k| {
            let start = k * INGEST_STRIDE;
            ClipRecord {
                id: if count == 1 {
                    clip.id.clone()
                } else {
                    format!("{}#{k}", clip.id)
                },
                speaker: clip.speaker,
                transcript: clip.transcript.clone(),
                audio: clip.audio.segment(start as f64 / clip.poses.fps, samples),
                poses: clip.poses.window(start, cfg.frames),
            }
        })
        .collect())
}

/// Feature extraction shared across clips.
pub struct FeatureBuilder<'a> {
    cfg: &'a HopConfig,
    vocab: &'a VocabEmbeddings,
    mel: MelExtractor,
}

impl<'a> FeatureBuilder<'a> {
    pub fn new(cfg: &'a HopConfig, vocab: &'a VocabEmbeddings) -> Result<Self> {
        Ok(FeatureBuilder {
            cfg,
            vocab,
            mel: MelExtractor::new(cfg.mel.clone())?,
        })
    }

    pub fn build(&self, clip: &ClipRecord) -> Result<ClipFeatures> {
        let cfg = self.cfg;
        if clip.poses.num_frames() != cfg.frames {
            return Err(HopError::Dataset(format!(
                "clip {}: {} frames, expected {}",
                clip.id,
                clip.poses.num_frames(),
                cfg.frames
            )));
        }
        let audio = clip.audio.resampled(cfg.mel.sample_rate)?;
        let audio = if audio.len() == cfg.clip_samples() {
            audio
        } else {
            audio.segment(0.0, cfg.clip_samples())
        };
        let mel = self.mel.compute(&audio)?.frames;
        let windows = window_audio(&audio, cfg.audio_window, cfg.audio_stride)?;
        let audio_nodes =
            audio_matrix_converter(&windows, cfg.joints(), cfg.encoder.audio_features)?;
        let tokens = clip.transcript.as_deref().map(tokenize).unwrap_or_default();
        let text = if tokens.is_empty() {
            None
        } else {
            Some(self.vocab.lookup(&tokens)?)
        };
        Ok(ClipFeatures {
            id: clip.id.clone(),
            speaker: clip.speaker,
            mel,
            tokens,
            text,
            audio_nodes,
            poses: clip.poses.to_matrix(),
        })
    }

    pub fn build_all(&self, clips: &[ClipRecord]) -> Result<Vec<ClipFeatures>> {
        clips.iter().map(|c| self.build(c)).collect()
    }
}
