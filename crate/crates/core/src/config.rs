//! Model configuration and its presets.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::MelConfig;
use crate::error::{HopError, Result};
use crate::gan::GruConfig;
use crate::graph::{EncoderConfig, LayerSpec};
use crate::pose::Skeleton;
use crate::reprogram::ReprogramConfig;

/// Where the frozen vocabulary table comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VocabConfig {
    /// Rows of the table (V).
    pub size: usize,
    /// Width of every embedding (D).
    pub dim: usize,
    pub seed: u64,
    /// Tokens given the first rows of a hashed table.
    #[serde(default)]
    pub words: Vec<String>,
    /// Plain-text `V D` table replacing the hashed one.
    #[serde(default)]
    pub table_file: Option<std::path::PathBuf>,
    /// One token per line naming the rows of `table_file`.
    #[serde(default)]
    pub token_file: Option<std::path::PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopConfig {
    pub mel: MelConfig,
    pub fps: f64,
    /// Pose frames per clip (T).
    pub frames: usize,
    pub seed_frames: usize,
    pub audio_window: usize,
    pub audio_stride: usize,
    pub skeleton: Skeleton,
    pub vocab: VocabConfig,
    pub prototypes: usize,
    pub attention_width: usize,
    pub heads: usize,
    /// Width of each fused text-audio row (D_f).
    pub fused: usize,
    pub encoder: EncoderConfig,
    pub generator: GruConfig,
    pub discriminator: GruConfig,
    pub style_dim: usize,
    pub speakers: usize,
    /// At inference, run a second pass whose action graph is built from the
    /// first pass's output instead of the held seed frames.
    #[serde(default)]
    pub refine_with_generated: bool,
}

impl HopConfig {
    /// Full-size TED setting.
    pub fn full() -> Self {
        HopConfig {
            mel: MelConfig::full(),
            fps: 15.0,
            frames: 34,
            seed_frames: 4,
            audio_window: 3400,
            audio_stride: 2191,
            skeleton: Skeleton::ted(),
            vocab: VocabConfig {
                size: 30_522,
                dim: 768,
                seed: 0,
                words: Vec::new(),
                table_file: None,
                token_file: None,
            },
            prototypes: 1500,
            attention_width: 1024,
            heads: 8,
            fused: 256,
            encoder: EncoderConfig::full(),
            generator: GruConfig {
                hidden: 300,
                layers: 4,
                bidirectional: true,
            },
            discriminator: GruConfig {
                hidden: 300,
                layers: 2,
                bidirectional: true,
            },
            style_dim: 8,
            speakers: 1370,
            refine_with_generated: false,
        }
    }

    /// Desk-scale sizes for the synthetic corpus at 8 kHz.
    pub fn toy() -> Self {
        let mut encoder = EncoderConfig::full();
        encoder.audio_features = 4;
        encoder.node_embedding = 4;
        HopConfig {
            mel: MelConfig {
                sample_rate: 8000,
                n_fft: 256,
                hop: 8000 / 15,
                n_mels: 16,
                f_min: 0.0,
                f_max: None,
                floor: 1e-10,
            },
            fps: 15.0,
            frames: 34,
            seed_frames: 4,
            audio_window: 1700,
            audio_stride: 1095,
            skeleton: Skeleton::ted(),
            vocab: VocabConfig {
                size: 48,
                dim: 16,
                seed: 11,
                words: crate::corpus::GESTURE_WORDS
                    .iter()
                    .map(|w| w.to_string())
                    .collect(),
                table_file: None,
                token_file: None,
            },
            prototypes: 12,
            attention_width: 16,
            heads: 2,
            fused: 16,
            encoder,
            generator: GruConfig {
                hidden: 32,
                layers: 1,
                bidirectional: true,
            },
            discriminator: GruConfig {
                hidden: 16,
                layers: 1,
                bidirectional: true,
            },
            style_dim: 4,
            speakers: 4,
            refine_with_generated: false,
        }
    }

    /// The smallest sizes used for finite-difference checks: J=3, T=8,
    /// d_m=4, D=6, V'=5 and two heads.
    pub fn gradcheck() -> Self {
        HopConfig {
            mel: MelConfig {
                sample_rate: 400,
                n_fft: 16,
                hop: 400 / 15,
                n_mels: 4,
                f_min: 0.0,
                f_max: None,
                floor: 1e-10,
            },
            fps: 15.0,
            frames: 8,
            seed_frames: 2,
            audio_window: 64,
            audio_stride: 48,
            skeleton: Skeleton {
                names: vec!["a".into(), "b".into(), "c".into()],
                parents: vec![-1, 0, 0],
                rest: vec![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]],
            },
            vocab: VocabConfig {
                size: 7,
                dim: 6,
                seed: 3,
                words: Vec::new(),
                table_file: None,
                token_file: None,
            },
            prototypes: 5,
            attention_width: 4,
            heads: 2,
            fused: 3,
            encoder: EncoderConfig {
                steps: 4,
                audio_features: 2,
                diffusion_order: 2,
                node_embedding: 2,
                layers: vec![
                    LayerSpec::Temporal {
                        taps: 2,
                        dilation: 1,
                        stride: 2,
                    },
                    LayerSpec::Graph,
                ],
                bias: true,
            },
            generator: GruConfig {
                hidden: 3,
                layers: 2,
                bidirectional: true,
            },
            discriminator: GruConfig {
                hidden: 2,
                layers: 1,
                bidirectional: true,
            },
            style_dim: 2,
            speakers: 2,
            refine_with_generated: false,
        }
    }

    pub fn joints(&self) -> usize {
        self.skeleton.joints()
    }

    /// Audio samples spanning one clip of `frames` pose frames.
    pub fn clip_samples(&self) -> usize {
        (self.frames as f64 * self.mel.sample_rate as f64 / self.fps).ceil() as usize
    }

    /// Mel patches per clip (P).
    pub fn patches(&self) -> usize {
        self.mel.frame_count(self.clip_samples()).unwrap_or(0)
    }

    pub fn reprogram(&self) -> ReprogramConfig {
        ReprogramConfig {
            d_mel: self.mel.n_mels,
            d_model: self.vocab.dim,
            d_hidden: self.attention_width,
            heads: self.heads,
            prototypes: self.prototypes,
            vocab: self.vocab.size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HopError::Config(msg));
        self.mel.validate()?;
        self.skeleton.validate()?;
        self.reprogram().validate()?;
        if !(self.fps > 0.0)
            || self.frames < 2
            || self.seed_frames == 0
            || self.seed_frames > self.frames
        {
            return bad("need fps > 0, at least 2 frames and 1..=frames seed frames".into());
        }
        if self.patches() == 0 {
            return bad(format!(
                "a clip of {} samples is shorter than one {}-sample STFT window",
                self.clip_samples(),
                self.mel.n_fft
            ));
        }
        let windows =
            crate::audio::window_count(self.clip_samples(), self.audio_window, self.audio_stride);
        if windows != Some(self.encoder.steps) {
            return bad(format!(
                "clip of {} samples gives {:?} audio windows but the encoder expects {}",
                self.clip_samples(),
                windows,
                self.encoder.steps
            ));
        }
        if self.encoder.steps > self.frames {
            return bad("graph steps cannot exceed pose frames".into());
        }
        if self.joints() * self.encoder.audio_features > self.audio_window {
            return bad("J·F_a exceeds the audio window".into());
        }
        if self.fused == 0 || self.style_dim == 0 || self.speakers == 0 {
            return bad("fused width, style width and speaker count must be positive".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hash_json(&serde_json::to_value(self).expect("config serializes"))
    }
}

pub fn hash_json(value: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(value.to_string().as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        HopConfig::full().validate().unwrap();
        HopConfig::toy().validate().unwrap();
        HopConfig::gradcheck().validate().unwrap();
    }

    #[test]
    fn full_size_clip_length_matches_the_input_audio() {
        let c = HopConfig::full();
        assert_eq!(c.clip_samples(), 36_267);
        assert_eq!(c.patches(), 34);
        let t = HopConfig::toy();
        assert_eq!(t.patches(), 34);
    }

    #[test]
    fn config_round_trips_through_json() {
        let c = HopConfig::toy();
        let text = serde_json::to_string(&c).unwrap();
        let back: HopConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }
}
