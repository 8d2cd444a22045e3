//! Pose-sequence autoencoder whose encoder defines the FGD feature space.

use std::path::Path;

use hop_tensor::{Adam, AdamConfig, Bound, Checkpoint, ParamStore, SeedRng, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HopError, Result};
use crate::gan::{Gru, GruConfig};
use crate::nn::Linear;
use crate::pose::PoseSequence;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    pub frames: usize,
    pub joints: usize,
    pub hidden: usize,
    /// Latent width F.
    pub latent: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl ExtractorConfig {
    pub fn new(frames: usize, joints: usize) -> Self {
        ExtractorConfig {
            frames,
            joints,
            hidden: 32,
            latent: 8,
            epochs: 60,
            lr: 3e-3,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.joints == 0 || self.hidden == 0 {
            return Err(HopError::param(
                "feature_extractor",
                "frames, joints and hidden must be positive",
            ));
        }
        if self.latent < 2 {
            return Err(HopError::param(
                "feature_extractor",
                "latent width must be at least 2",
            ));
        }
        if !(self.lr > 0.0) {
            return Err(HopError::param(
                "feature_extractor",
                "learning rate must be positive",
            ));
        }
        Ok(())
    }
}

/// GRU encoder → last state → linear latent; linear decoder back to the
/// flattened sequence.
pub struct FeatureExtractor {
    pub cfg: ExtractorConfig,
    pub store: ParamStore,
    /// Reconstruction loss after each epoch.
    pub losses: Vec<f64>,
    gru: Gru,
    to_latent: Linear,
    decoder: Linear,
}

const KIND: &str = "feature_extractor";

impl FeatureExtractor {
    pub fn new(cfg: ExtractorConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SeedRng::new(cfg.seed);
        let mut store = ParamStore::new();
        let width = cfg.joints * 3;
        let gru = Gru::new(
            &mut store,
            "encoder",
            width,
            GruConfig {
                hidden: cfg.hidden,
                layers: 1,
                bidirectional: false,
            },
            &mut rng,
        )?;
        let to_latent = Linear::new(&mut store, "latent", cfg.hidden, cfg.latent, true, &mut rng)?;
        let decoder = Linear::new(
            &mut store,
            "decoder",
            cfg.latent,
            cfg.frames * width,
            true,
            &mut rng,
        )?;
        Ok(FeatureExtractor {
            cfg,
            store,
            losses: Vec::new(),
            gru,
            to_latent,
            decoder,
        })
    }

    fn check(&self, seqs: &[PoseSequence]) -> Result<()> {
        for (i, s) in seqs.iter().enumerate() {
            if s.num_frames() != self.cfg.frames || s.num_joints() != self.cfg.joints {
                return Err(HopError::param(
                    "feature_extractor",
                    format!(
                        "sequence {i} is {}×{}, expected {}×{}",
                        s.num_frames(),
                        s.num_joints(),
                        self.cfg.frames,
                        self.cfg.joints
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Rows `t·B + b` of the batch.
    fn inputs(&self, seqs: &[PoseSequence]) -> Result<Tensor> {
        let width = self.cfg.joints * 3;
        let flat: Vec<Vec<f64>> = seqs.iter().map(|s| s.flat()).collect();
        let data = (0..self.cfg.frames)
            .flat_map(|t| {
                flat.iter()
                    .flat_map(move |f| f[t * width..(t + 1) * width].iter().copied())
            })
            .collect();
        Ok(Tensor::new([self.cfg.frames * seqs.len(), width], data)?)
    }

    fn latents_on(&self, tape: &mut Tape, p: &Bound, x: Var, batch: usize) -> Result<Var> {
        let h = self.gru.forward(tape, p, x, batch)?;
        let rows = tape.shape(h)[0];
        let last = tape.narrow(h, 0, rows - batch, batch)?;
        self.to_latent.forward(tape, p, last)
    }

    /// Trains on `seqs` for `cfg.epochs` full-batch Adam steps.
    pub fn fit(cfg: ExtractorConfig, seqs: &[PoseSequence]) -> Result<Self> {
        if seqs.len() < 2 {
            return Err(HopError::param(
                "feature_extractor",
                format!("need at least 2 clips to fit, got {}", seqs.len()),
            ));
        }
        let mut fx = FeatureExtractor::new(cfg)?;
        fx.check(seqs)?;
        let x = fx.inputs(seqs)?;
        let target = Tensor::new(
            [seqs.len(), fx.cfg.frames * fx.cfg.joints * 3],
            seqs.iter().flat_map(|s| s.flat()).collect(),
        )?;
        let mut adam = Adam::new(
            AdamConfig {
                lr: fx.cfg.lr,
                beta1: 0.9,
                ..AdamConfig::default()
            },
            &fx.store,
        );
        for _ in 0..fx.cfg.epochs {
            let mut tape = Tape::new();
            let p = fx.store.bind(&mut tape);
            let xv = tape.constant(x.clone());
            let z = fx.latents_on(&mut tape, &p, xv, seqs.len())?;
            let y = fx.decoder.forward(&mut tape, &p, z)?;
            let t = tape.constant(target.clone());
            let loss = tape.huber(y, t, 1.0)?;
            let value = tape.value(loss).item()?;
            tape.backward(loss)?;
            let grads = p.grads(&tape);
            adam.step(&mut fx.store, &grads)?;
            fx.losses.push(value);
        }
        Ok(fx)
    }

    /// One latent vector per sequence.
    pub fn encode(&self, seqs: &[PoseSequence]) -> Result<Vec<Vec<f64>>> {
        self.check(seqs)?;
        if seqs.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let p = self.store.bind_frozen(&mut tape);
        let x = tape.constant(self.inputs(seqs)?);
        let z = self.latents_on(&mut tape, &p, x, seqs.len())?;
        let z = tape.value(z);
        Ok((0..seqs.len()).map(|b| z.row(b).to_vec()).collect())
    }

    fn checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(serde_json::json!({
            "kind": KIND,
            "config": self.cfg,
            "losses": self.losses,
        }));
        ck.push_store("", &self.store);
        Ok(ck)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        Ok(self.checkpoint()?.save(dir)?)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let ck = Checkpoint::load(dir)?;
        if ck.meta.get("kind").and_then(|k| k.as_str()) != Some(KIND) {
            return Err(HopError::Config(format!(
                "{} is not a feature extractor",
                dir.display()
            )));
        }
        let cfg: ExtractorConfig = serde_json::from_value(ck.meta["config"].clone())?;
        let mut fx = FeatureExtractor::new(cfg)?;
        ck.restore_store("", &mut fx.store)?;
        fx.losses = serde_json::from_value(ck.meta["losses"].clone())?;
        Ok(fx)
    }

    /// SHA-256 over the config and the weight blob.
    pub fn hash(&self) -> Result<String> {
        let ck = self.checkpoint()?;
        let mut h = Sha256::new();
        h.update(serde_json::to_value(&self.cfg)?.to_string().as_bytes());
        h.update(ck.blob());
        Ok(hex::encode(h.finalize()))
    }
}
