//! The composed generator: reprogramming and fusion of audio with text, the
//! audio-action graph encoder, speaker style and the recurrent decoder; plus
//! the discriminator.

use hop_tensor::{Bound, ParamStore, SeedRng, Tape, Tensor, Var};

use crate::config::HopConfig;
use crate::embed::{load_embedding_table, VocabEmbeddings};
use crate::error::{HopError, Result};
use crate::gan::{
    seed_channels, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, StyleBank,
};
use crate::graph::{pose_to_graph, GraphEncoder};
use crate::nn::sample_rows;
use crate::pose::PoseSequence;
use crate::reprogram::{Fusion, Reprogrammer};

/// Everything the model reads from one clip, precomputed once.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipFeatures {
    pub id: String,
    pub speaker: usize,
    /// `P × d_m` log-Mel patches.
    pub mel: Tensor,
    pub tokens: Vec<String>,
    /// `L × D` token embeddings; `None` when the transcript is empty.
    pub text: Option<Tensor>,
    /// `T_g × J × F_a`
    pub audio_nodes: Tensor,
    /// `T × (J·3)` ground-truth directions (also the seed source).
    pub poses: Tensor,
}

impl ClipFeatures {
    pub fn seed(&self, seed_frames: usize) -> Tensor {
        let cols = self.poses.shape()[1];
        Tensor::new(
            [seed_frames, cols],
            self.poses.data()[..seed_frames * cols].to_vec(),
        )
        .expect("seed frames")
    }
}

/// The action stream built from the seed: the seed frames, then the last
/// seed frame held for the rest of the clip; stride-sampled to graph steps.
pub fn seed_hold_action(cfg: &HopConfig, seed: &Tensor) -> Result<Tensor> {
    let cols = seed.shape()[1];
    let s = seed.shape()[0];
    let data: Vec<f64> = (0..cfg.frames)
        .flat_map(|t| seed.row(t.min(s - 1)).iter().copied())
        .collect();
    action_from_frames(cfg, &Tensor::new([cfg.frames, cols], data)?)
}

/// Stride-sampled action graph of a `T × (J·3)` pose matrix.
pub fn action_from_frames(cfg: &HopConfig, frames: &Tensor) -> Result<Tensor> {
    let poses = PoseSequence::from_tensor(frames, cfg.fps, cfg.skeleton.names.clone())?;
    pose_to_graph(&poses, cfg.encoder.steps)
}

/// A stacked batch of clips.
#[derive(Clone, Debug)]
pub struct Batch {
    pub size: usize,
    pub patches: usize,
    /// `(B·P) × d_m`, grouped by sample.
    pub mel: Tensor,
    pub texts: Vec<Option<Tensor>>,
    /// `B × T_g × J × F_a`
    pub audio: Tensor,
    /// `B × T_g × J × 3`
    pub action: Tensor,
    /// `(T·B) × (J·3 + 1)`
    pub seed: Tensor,
    pub speakers: Vec<usize>,
    /// `(T·B) × (J·3)`
    pub target: Tensor,
}

fn stack(parts: &[&Tensor]) -> Result<Tensor> {
    let mut shape = vec![parts.len()];
    shape.extend_from_slice(parts[0].shape());
    let data = parts
        .iter()
        .flat_map(|t| t.data().iter().copied())
        .collect();
    Ok(Tensor::new(shape, data)?)
}

fn interleave(parts: &[&Tensor]) -> Result<Tensor> {
    let (rows, cols) = (parts[0].shape()[0], parts[0].shape()[1]);
    let data = (0..rows)
        .flat_map(|t| parts.iter().flat_map(move |p| p.row(t).iter().copied()))
        .collect();
    Ok(Tensor::new([rows * parts.len(), cols], data)?)
}

impl Batch {
    /// Uses the seed-hold action stream for every clip.
    pub fn new(cfg: &HopConfig, clips: &[&ClipFeatures]) -> Result<Self> {
        let actions = clips
            .iter()
            .map(|c| seed_hold_action(cfg, &c.seed(cfg.seed_frames)))
            .collect::<Result<Vec<_>>>()?;
        Self::with_actions(cfg, clips, &actions)
    }

    /// `actions` holds one `T_g × J × 3` tensor per clip.
    pub fn with_actions(
        cfg: &HopConfig,
        clips: &[&ClipFeatures],
        actions: &[Tensor],
    ) -> Result<Self> {
        if clips.is_empty() {
            return Err(HopError::param("batch", "no clips"));
        }
        let patches = clips[0].mel.shape()[0];
        if let Some(c) = clips.iter().find(|c| c.mel.shape()[0] != patches) {
            return Err(HopError::param(
                "batch",
                format!("clip {} has a different patch count", c.id),
            ));
        }
        let mel_rows: Vec<&Tensor> = clips.iter().map(|c| &c.mel).collect();
        let mel_data = mel_rows
            .iter()
            .flat_map(|m| m.data().iter().copied())
            .collect();
        let mel = Tensor::new([clips.len() * patches, cfg.mel.n_mels], mel_data)?;
        let seeds: Vec<Tensor> = clips.iter().map(|c| c.seed(cfg.seed_frames)).collect();
        let targets: Vec<&Tensor> = clips.iter().map(|c| &c.poses).collect();
        Ok(Batch {
            size: clips.len(),
            patches,
            mel,
            texts: clips.iter().map(|c| c.text.clone()).collect(),
            audio: stack(&clips.iter().map(|c| &c.audio_nodes).collect::<Vec<_>>())?,
            action: stack(&actions.iter().collect::<Vec<_>>())?,
            seed: seed_channels(&seeds, cfg.frames, cfg.seed_frames)?,
            speakers: clips.iter().map(|c| c.speaker).collect(),
            target: interleave(&targets)?,
        })
    }
}

/// Generator-side activations shared by every style latent.
pub struct Encoded {
    /// `(B·P) × D`
    pub tokens: Var,
    pub attention: Vec<Var>,
    /// `(T·B) × D_f`
    pub fused: Var,
    /// `B × T_out × J × C`
    pub graph: Var,
    /// `(T·B) × (C·J)`
    pub graph_rows: Var,
    pub seed: Var,
}

pub struct HopModel {
    pub cfg: HopConfig,
    pub vocab: VocabEmbeddings,
    pub gen: ParamStore,
    pub disc: ParamStore,
    pub reprogrammer: Reprogrammer,
    pub fusion: Fusion,
    pub encoder: GraphEncoder,
    pub style: StyleBank,
    pub generator: Generator,
    pub discriminator: Discriminator,
}

pub fn build_vocab(cfg: &HopConfig) -> Result<VocabEmbeddings> {
    let v = &cfg.vocab;
    match &v.table_file {
        Some(path) => {
            let table = load_embedding_table(path)?;
            let tokens = match &v.token_file {
                Some(tp) => std::fs::read_to_string(tp)
                    .map_err(|e| HopError::io(tp, e))?
                    .lines()
                    .map(|l| l.trim().to_string())
                    .filter(|l| !l.is_empty())
                    .collect(),
                None => Vec::new(),
            };
            let vocab = VocabEmbeddings::new(table, &tokens)?;
            if vocab.size() != v.size || vocab.dim() != v.dim {
                return Err(HopError::Config(format!(
                    "embedding table is {}×{} but the config says {}×{}",
                    vocab.size(),
                    vocab.dim(),
                    v.size,
                    v.dim
                )));
            }
            Ok(vocab)
        }
        None => VocabEmbeddings::hashed(&v.words, v.size, v.dim, v.seed),
    }
}

impl HopModel {
    pub fn new(cfg: HopConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let vocab = build_vocab(&cfg)?;
        let mut rng = SeedRng::new(seed);
        let mut gen = ParamStore::new();
        let mut disc = ParamStore::new();
        let reprogrammer = Reprogrammer::new(&mut gen, "reprogram", cfg.reprogram(), &mut rng)?;
        let fusion = Fusion::new(
            &mut gen,
            "fusion",
            cfg.vocab.dim,
            cfg.fused,
            cfg.frames,
            &mut rng,
        )?;
        let encoder = GraphEncoder::new(
            &mut gen,
            "encoder",
            cfg.encoder.clone(),
            &cfg.skeleton,
            &mut rng,
        )?;
        let style = StyleBank::new(&mut gen, "style", cfg.speakers, cfg.style_dim, &mut rng)?;
        let gen_cfg = GeneratorConfig {
            frames: cfg.frames,
            seed_frames: cfg.seed_frames,
            joints: cfg.joints(),
            fused: cfg.fused,
            graph: cfg.encoder.channels() * cfg.joints(),
            style: cfg.style_dim,
            gru: cfg.generator.clone(),
        };
        let generator = Generator::new(
            &mut gen,
            "generator",
            gen_cfg,
            cfg.skeleton.rest_flat(),
            &mut rng,
        )?;
        let discriminator = Discriminator::new(
            &mut disc,
            "discriminator",
            DiscriminatorConfig {
                joints: cfg.joints(),
                gru: cfg.discriminator.clone(),
            },
            &mut rng,
        )?;
        Ok(HopModel {
            cfg,
            vocab,
            gen,
            disc,
            reprogrammer,
            fusion,
            encoder,
            style,
            generator,
            discriminator,
        })
    }

    /// Everything up to the recurrent decoder.
    pub fn encode(&self, tape: &mut Tape, p: &Bound, batch: &Batch) -> Result<Encoded> {
        let vocab = tape.constant(self.vocab.table.clone());
        let protos = self.reprogrammer.prototypes(tape, p, vocab)?;
        let mel = tape.constant(batch.mel.clone());
        let rep = self.reprogrammer.forward(tape, p, mel, protos)?;
        let texts: Vec<Option<Var>> = batch
            .texts
            .iter()
            .map(|t| t.as_ref().map(|t| tape.constant(t.clone())))
            .collect();
        let fused = self
            .fusion
            .fuse_batch(tape, p, rep.tokens, batch.patches, &texts)?;
        let audio = tape.constant(batch.audio.clone());
        let action = tape.constant(batch.action.clone());
        let graph = self.encoder.forward(tape, p, audio, action)?;
        let graph_rows = self.generator.expand_graph(tape, graph)?;
        let seed = tape.constant(batch.seed.clone());
        Ok(Encoded {
            tokens: rep.tokens,
            attention: rep.attention,
            fused,
            graph,
            graph_rows,
            seed,
        })
    }

    pub fn sample_style(
        &self,
        tape: &mut Tape,
        p: &Bound,
        speakers: &[usize],
        noise: &Tensor,
    ) -> Result<Var> {
        self.style.sample(tape, p, speakers, noise)
    }

    /// `(T·B) × (J·3)` unit direction vectors.
    pub fn decode(&self, tape: &mut Tape, p: &Bound, enc: &Encoded, style: Var) -> Result<Var> {
        self.generator
            .forward(tape, p, enc.fused, enc.graph_rows, style, enc.seed)
    }

    /// `B × 1` realism scores for `(T·B) × (J·3)` poses.
    pub fn discriminate(
        &self,
        tape: &mut Tape,
        p: &Bound,
        poses: Var,
        batch: usize,
    ) -> Result<Var> {
        self.discriminator.forward(tape, p, poses, batch)
    }

    /// Inference on plain values; one `T × (J·3)` matrix per clip.
    pub fn generate(&self, clips: &[&ClipFeatures], noise: &Tensor) -> Result<Vec<Tensor>> {
        let batch = Batch::new(&self.cfg, clips)?;
        let mut out = self.generate_batch(&batch, noise)?;
        if self.cfg.refine_with_generated {
            let actions = out
                .iter()
                .map(|g| action_from_frames(&self.cfg, g))
                .collect::<Result<Vec<_>>>()?;
            let batch = Batch::with_actions(&self.cfg, clips, &actions)?;
            out = self.generate_batch(&batch, noise)?;
        }
        Ok(out)
    }

    pub fn generate_batch(&self, batch: &Batch, noise: &Tensor) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let p = self.gen.bind_frozen(&mut tape);
        let enc = self.encode(&mut tape, &p, batch)?;
        let z = self.sample_style(&mut tape, &p, &batch.speakers, noise)?;
        let g = self.decode(&mut tape, &p, &enc, z)?;
        let g = tape.value(g);
        Ok((0..batch.size)
            .map(|b| sample_rows(g, batch.size, b))
            .collect())
    }

    /// Reprogrammed tokens (`P × D`) and per-head attention (`P × V'`) of
    /// one clip.
    pub fn reprogram_clip(&self, clip: &ClipFeatures) -> Result<(Tensor, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let p = self.gen.bind_frozen(&mut tape);
        let vocab = tape.constant(self.vocab.table.clone());
        let protos = self.reprogrammer.prototypes(&mut tape, &p, vocab)?;
        let mel = tape.constant(clip.mel.clone());
        let rep = self.reprogrammer.forward(&mut tape, &p, mel, protos)?;
        let attention = rep
            .attention
            .iter()
            .map(|&a| tape.value(a).clone())
            .collect();
        Ok((tape.value(rep.tokens).clone(), attention))
    }

    /// Learned `J × J` adjacency.
    pub fn adaptive_adjacency(&self) -> Result<Tensor> {
        crate::graph::adaptive_adjacency(
            self.gen.get(self.encoder.e1),
            self.gen.get(self.encoder.e2),
        )
    }
}
