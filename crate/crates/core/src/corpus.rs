//! Deterministic synthetic corpus: each word drives an arm-swing gesture,
//! audio carries a per-word tone plus a click at every motion extreme.

use std::f64::consts::PI;
use std::path::Path;

use hop_tensor::SeedRng;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{quantize_i16, save_waveform, Waveform};
use crate::dataset::{write_manifest, ClipRecord, ManifestEntry};
use crate::error::{HopError, Result};
use crate::pose::{PoseSequence, Skeleton};

pub const GESTURE_WORDS: [&str; 8] = [
    "wave", "point", "lift", "push", "sweep", "beat", "open", "show",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpusSpec {
    pub seed: u64,
    pub clips: usize,
    /// Vocabulary size K.
    pub words: usize,
    /// Frames between consecutive motion extremes; each word spans two.
    pub beat_period: usize,
    /// Standard deviation of additive audio noise.
    pub noise: f64,
    pub speakers: usize,
    pub frames: usize,
    pub fps: f64,
    pub sample_rate: u32,
    /// Seconds added to every click time; 0 puts clicks on the extremes.
    #[serde(default)]
    pub click_offset: f64,
    /// Repeat a single word through each clip instead of drawing a sentence.
    #[serde(default)]
    pub repeat_word: bool,
}

impl SyntheticCorpusSpec {
    pub fn new(seed: u64, clips: usize) -> Self {
        SyntheticCorpusSpec {
            seed,
            clips,
            words: GESTURE_WORDS.len(),
            beat_period: 4,
            noise: 0.002,
            speakers: 4,
            frames: 34,
            fps: 15.0,
            sample_rate: 8000,
            click_offset: 0.0,
            repeat_word: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(HopError::Config(format!("synthetic corpus: {msg}")));
        if self.clips == 0 {
            return bad("clip count must be at least 1");
        }
        if self.words == 0 || self.beat_period == 0 || self.speakers == 0 || self.frames < 2 {
            return bad("words, beat period and speakers must be positive and frames at least 2");
        }
        if !(self.fps > 0.0) || self.sample_rate == 0 || !(self.noise >= 0.0) {
            return bad("fps and sample rate must be positive and noise non-negative");
        }
        Ok(())
    }

    pub fn word(&self, k: usize) -> String {
        GESTURE_WORDS
            .get(k)
            .map(|w| w.to_string())
            .unwrap_or_else(|| format!("word{k}"))
    }

    pub fn clip_samples(&self) -> usize {
        (self.frames as f64 * self.sample_rate as f64 / self.fps).ceil() as usize
    }

    /// Frames at which the gesture reaches an extreme (rest or peak),
    /// excluding frame 0.
    pub fn extremes(&self) -> Vec<usize> {
        (1..)
            .map(|m| m * self.beat_period)
            .take_while(|&f| f < self.frames)
            .collect()
    }
}

/// Gesture template of word `k`: which arms move, about which axis, how far.
#[derive(Clone, Copy, Debug)]
struct Template {
    right: bool,
    left: bool,
    sideways: bool,
    amplitude: f64,
    tone_hz: f64,
}

fn template(k: usize) -> Template {
    let arms = k % 3;
    Template {
        right: arms != 1,
        left: arms != 0,
        sideways: (k / 3) % 2 == 1,
        amplitude: 0.6 + 0.15 * (k % 4) as f64,
        tone_hz: 300.0 + 250.0 * (k % 8) as f64 + 37.0 * (k / 8) as f64,
    }
}

fn rotate(v: [f64; 3], sideways: bool, angle: f64) -> [f64; 3] {
    let (s, c) = angle.sin_cos();
    if sideways {
        [v[0] * c - v[1] * s, v[0] * s + v[1] * c, v[2]]
    } else {
        [v[0], v[1] * c - v[2] * s, v[1] * s + v[2] * c]
    }
}

/// Nodes at or below `root` in the tree.
fn subtree(skeleton: &Skeleton, root: usize) -> Vec<usize> {
    (0..skeleton.joints())
        .filter(|&i| {
            let mut n = i as i64;
            while n >= 0 {
                if n as usize == root {
                    return true;
                }
                n = skeleton.parents[n as usize];
            }
            false
        })
        .collect()
}

fn arm_nodes(skeleton: &Skeleton, name: &str) -> Result<Vec<usize>> {
    let root = skeleton
        .names
        .iter()
        .position(|n| n == name)
        .ok_or_else(|| {
            HopError::Config(format!(
                "synthetic corpus needs a skeleton node named {name}"
            ))
        })?;
    Ok(subtree(skeleton, root))
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub spec: SyntheticCorpusSpec,
    pub clips: Vec<ClipRecord>,
}

pub fn synthesize_corpus(spec: &SyntheticCorpusSpec, skeleton: &Skeleton) -> Result<Corpus> {
    spec.validate()?;
    skeleton.validate()?;
    let right = arm_nodes(skeleton, "rshoulder_relbow")?;
    let left = arm_nodes(skeleton, "lshoulder_lelbow")?;
    let mut rng = SeedRng::new(spec.seed);
    let segment = 2 * spec.beat_period;
    let n_words = spec.frames.div_ceil(segment);
    let samples = spec.clip_samples();
    let sr = spec.sample_rate as f64;
    let mut clips = Vec::with_capacity(spec.clips);
    for c in 0..spec.clips {
        let speaker = rng.random_range(0..spec.speakers);
        let scale = 0.75 + 0.5 * speaker as f64 / (spec.speakers.max(2) - 1) as f64;
        let sentence: Vec<usize> = if spec.repeat_word {
            vec![rng.random_range(0..spec.words); n_words]
        } else {
            (0..n_words)
                .map(|_| rng.random_range(0..spec.words))
                .collect()
        };

        let frames: Vec<Vec<[f64; 3]>> = (0..spec.frames)
            .map(|f| {
                let tpl = template(sentence[f / segment]);
                let u = (f % segment) as f64 / segment as f64;
                let theta = tpl.amplitude * scale * (PI * u).sin().powi(4);
                let mut frame = skeleton.rest.clone();
                if tpl.right {
                    for &n in &right {
                        frame[n] = rotate(frame[n], tpl.sideways, -theta);
                    }
                }
                if tpl.left {
                    let a = if tpl.sideways { theta } else { -theta };
                    for &n in &left {
                        frame[n] = rotate(frame[n], tpl.sideways, a);
                    }
                }
                frame
            })
            .collect();

        let mut audio = vec![0.0; samples];
        let mut phase = 0.0;
        for (i, s) in audio.iter_mut().enumerate() {
            let f = ((i as f64 / sr) * spec.fps) as usize;
            let tpl = template(sentence[(f / segment).min(n_words - 1)]);
            phase += 2.0 * PI * tpl.tone_hz / sr;
            *s = 0.2 * phase.sin();
        }
        for f in spec.extremes() {
            let start = ((f as f64 / spec.fps + spec.click_offset) * sr).round();
            if start < 0.0 {
                continue;
            }
            let start = start as usize;
            for (k, s) in audio
                .iter_mut()
                .skip(start)
                .take((0.006 * sr) as usize + 1)
                .enumerate()
            {
                let tau = k as f64 / sr;
                *s += 0.7 * (-tau / 0.001).exp() * (2.0 * PI * 2500.0 * tau).cos();
            }
        }
        if spec.noise > 0.0 {
            for s in audio.iter_mut() {
                let n: f64 = StandardNormal.sample(&mut rng);
                *s += spec.noise * n;
            }
        }
        let audio: Vec<f64> = audio
            .iter()
            .map(|&s| quantize_i16(s) as f64 / 32768.0)
            .collect();

        clips.push(ClipRecord {
            id: format!("clip{c:04}"),
            speaker,
            transcript: Some(
                sentence
                    .iter()
                    .map(|&k| spec.word(k))
                    .collect::<Vec<_>>()
                    .join(" "),
            ),
            audio: Waveform::new(audio, spec.sample_rate)?,
            poses: PoseSequence {
                fps: spec.fps,
                joints: skeleton.names.clone(),
                frames,
            },
        });
    }
    Ok(Corpus {
        spec: spec.clone(),
        clips,
    })
}

/// SHA-256 over ids, speakers, transcripts, PCM16 samples and pose JSON.
pub fn corpus_hash(clips: &[ClipRecord]) -> Result<String> {
    let mut h = Sha256::new();
    for c in clips {
        h.update(c.id.as_bytes());
        h.update((c.speaker as u64).to_le_bytes());
        h.update(c.transcript.as_deref().unwrap_or("").as_bytes());
        h.update([0u8]);
        h.update(c.audio.sample_rate.to_le_bytes());
        for &s in &c.audio.samples {
            h.update(quantize_i16(s).to_le_bytes());
        }
        h.update(c.poses.to_json()?.as_bytes());
    }
    Ok(hex::encode(h.finalize()))
}

impl Corpus {
    pub fn hash(&self) -> Result<String> {
        corpus_hash(&self.clips)
    }

    /// Writes `wav/`, `pose/`, `manifest.jsonl` and `corpus.json`; returns
    /// the corpus hash.
    pub fn write(&self, dir: &Path) -> Result<String> {
        let wav_dir = dir.join("wav");
        let pose_dir = dir.join("pose");
        for d in [&wav_dir, &pose_dir] {
            std::fs::create_dir_all(d).map_err(|e| HopError::io(d, e))?;
        }
        let mut entries = Vec::with_capacity(self.clips.len());
        for c in &self.clips {
            let wav = Path::new("wav").join(format!("{}.wav", c.id));
            let pose = Path::new("pose").join(format!("{}.json", c.id));
            save_waveform(&dir.join(&wav), &c.audio)?;
            c.poses.save_json(&dir.join(&pose))?;
            entries.push(ManifestEntry {
                id: c.id.clone(),
                speaker: c.speaker,
                wav_path: wav,
                transcript: c.transcript.clone(),
                pose_path: pose,
            });
        }
        write_manifest(&dir.join("manifest.jsonl"), &entries)?;
        let hash = self.hash()?;
        let info = serde_json::json!({
            "corpus_hash": hash,
            "clips": self.clips.len(),
            "spec": self.spec,
        });
        let path = dir.join("corpus.json");
        std::fs::write(&path, serde_json::to_string_pretty(&info)?)
            .map_err(|e| HopError::io(&path, e))?;
        Ok(hash)
    }
}
