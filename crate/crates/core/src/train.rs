//! Alternating adversarial training, checkpoints and loss history.

use std::path::{Path, PathBuf};

use hop_tensor::{Adam, AdamConfig, Bound, Checkpoint, SeedRng, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::HopConfig;
use crate::error::{HopError, Result};
use crate::losses::{
    discriminator_loss, generator_gan_loss, kld_loss, style_diversity_loss, total_loss, LossWeights,
};
use crate::model::{Batch, ClipFeatures, HopModel};
use crate::reprogram::mean_cosine;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    /// Cap on the rewarded distance between two style samples.
    pub style_margin: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 75,
            batch_size: 128,
            seed: 0,
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
            style_margin: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(HopError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(HopError::Config("batch size must be at least 1".into()));
        }
        if !(self.adam.lr > 0.0) || !(self.style_margin > 0.0) {
            return Err(HopError::Config(
                "learning rate and style margin must be positive".into(),
            ));
        }
        self.weights.validate()
    }
}

/// Loss terms of one optimizer step, or their mean over an epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub epoch: usize,
    pub huber: f64,
    pub style: f64,
    pub kld: f64,
    pub gan_g: f64,
    pub gan_d: f64,
    pub total: f64,
}

impl LossRecord {
    pub const CSV_HEADER: &'static str = "step,epoch,huber,style,kld,gan_g,gan_d,total";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:?},{:?},{:?},{:?},{:?},{:?}",
            self.step,
            self.epoch,
            self.huber,
            self.style,
            self.kld,
            self.gan_g,
            self.gan_d,
            self.total
        )
    }
}

pub fn history_csv(history: &[LossRecord]) -> String {
    let mut out = String::from(LossRecord::CSV_HEADER);
    out.push('\n');
    for r in history {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Directory name of the checkpoint written after `epoch` epochs.
pub fn epoch_dir(root: &Path, epoch: usize) -> PathBuf {
    root.join(format!("epoch_{epoch:04}"))
}

pub struct Trainer {
    pub model: HopModel,
    pub cfg: TrainConfig,
    pub gen_opt: Adam,
    pub disc_opt: Adam,
    /// Completed epochs.
    pub epoch: usize,
    pub step: u64,
    /// One record per optimizer step.
    pub history: Vec<LossRecord>,
}

/// Per-epoch means of a per-step history, in epoch order.
pub fn epoch_means(history: &[LossRecord]) -> Vec<LossRecord> {
    let mut out: Vec<LossRecord> = Vec::new();
    let mut count = 0.0;
    for r in history {
        match out.last_mut() {
            Some(last) if last.epoch == r.epoch => {
                count += 1.0;
                let k = 1.0 / count;
                last.step = r.step;
                last.huber += (r.huber - last.huber) * k;
                last.style += (r.style - last.style) * k;
                last.kld += (r.kld - last.kld) * k;
                last.gan_g += (r.gan_g - last.gan_g) * k;
                last.gan_d += (r.gan_d - last.gan_d) * k;
                last.total += (r.total - last.total) * k;
            }
            _ => {
                out.push(r.clone());
                count = 1.0;
            }
        }
    }
    out
}

const KIND: &str = "hop_model";

fn normal(rng: &mut SeedRng, rows: usize, cols: usize) -> Result<Tensor> {
    let data = (0..rows * cols)
        .map(|_| StandardNormal.sample(&mut *rng))
        .collect();
    Ok(Tensor::new([rows, cols], data)?)
}

/// Style noise and partner speakers for one generator step.
#[derive(Clone, Debug)]
pub struct StyleDraws {
    pub noise1: Tensor,
    pub noise2: Tensor,
    /// Speaker for the second style sample, distinct from the clip's own when possible.
    pub other: Vec<usize>,
}

impl StyleDraws {
    pub fn sample(cfg: &HopConfig, batch: &Batch, rng: &mut SeedRng) -> Result<Self> {
        let noise1 = normal(rng, batch.size, cfg.style_dim)?;
        let noise2 = normal(rng, batch.size, cfg.style_dim)?;
        let other = batch
            .speakers
            .iter()
            .map(|&s| {
                if cfg.speakers > 1 {
                    (s + 1 + rng.random_range(0..cfg.speakers - 1)) % cfg.speakers
                } else {
                    s
                }
            })
            .collect();
        Ok(Self {
            noise1,
            noise2,
            other,
        })
    }
}

/// Generator-side loss terms that do not involve the discriminator.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorTerms {
    /// Generation under the clip's own speaker style.
    pub g1: Var,
    pub huber: Var,
    pub style: Var,
    pub kld: Var,
}

pub fn generator_terms(
    m: &HopModel,
    tape: &mut Tape,
    p: &Bound,
    batch: &Batch,
    draws: &StyleDraws,
    margin: f64,
) -> Result<GeneratorTerms> {
    let enc = m.encode(tape, p, batch)?;
    let z1 = m.sample_style(tape, p, &batch.speakers, &draws.noise1)?;
    let z2 = m.sample_style(tape, p, &draws.other, &draws.noise2)?;
    let g1 = m.decode(tape, p, &enc, z1)?;
    let g2 = m.decode(tape, p, &enc, z2)?;
    let target = tape.constant(batch.target.clone());
    let huber = tape.huber(g1, target, 1.0)?;
    let (z1v, z2v) = (tape.value(z1).clone(), tape.value(z2).clone());
    let style = style_diversity_loss(tape, g1, g2, &z1v, &z2v, margin)?;
    let kld = kld_loss(tape, p[m.style.mu], p[m.style.logvar])?;
    Ok(GeneratorTerms {
        g1,
        huber,
        style,
        kld,
    })
}

impl Trainer {
    pub fn new(model_cfg: HopConfig, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = HopModel::new(model_cfg, cfg.seed)?;
        let gen_opt = Adam::new(cfg.adam, &model.gen);
        let disc_opt = Adam::new(cfg.adam, &model.disc);
        Ok(Trainer {
            model,
            cfg,
            gen_opt,
            disc_opt,
            epoch: 0,
            step: 0,
            history: Vec::new(),
        })
    }

    /// One generator and one discriminator update on `clips`.
    pub fn train_step(&mut self, clips: &[&ClipFeatures], rng: &mut SeedRng) -> Result<LossRecord> {
        let m = &self.model;
        let batch = Batch::new(&m.cfg, clips)?;
        let b = batch.size;
        let draws = StyleDraws::sample(&m.cfg, &batch, rng)?;

        let mut tape = Tape::new();
        let p = m.gen.bind(&mut tape);
        let GeneratorTerms {
            g1,
            huber,
            style,
            kld,
        } = generator_terms(m, &mut tape, &p, &batch, &draws, self.cfg.style_margin)?;

        // Discriminator update against the current generation.
        let fake_values = tape.value(g1).clone();
        let mut dtape = Tape::new();
        let dp = m.disc.bind(&mut dtape);
        let real = dtape.constant(batch.target.clone());
        let fake = dtape.constant(fake_values);
        let d_real = m.discriminate(&mut dtape, &dp, real, b)?;
        let d_fake = m.discriminate(&mut dtape, &dp, fake, b)?;
        let gan_d = discriminator_loss(&mut dtape, d_real, d_fake)?;
        let gan_d_value = dtape.value(gan_d).item()?;
        dtape.backward(gan_d)?;
        let dgrads = dp.grads(&dtape);
        self.disc_opt.step(&mut self.model.disc, &dgrads)?;

        let m = &self.model;
        let frozen = m.disc.bind_frozen(&mut tape);
        let scored = m.discriminate(&mut tape, &frozen, g1, b)?;
        let gan_g = generator_gan_loss(&mut tape, scored)?;
        let total = total_loss(&mut tape, &self.cfg.weights, huber, style, kld, gan_g)?;
        let record = LossRecord {
            step: self.step + 1,
            epoch: self.epoch + 1,
            huber: tape.value(huber).item()?,
            style: tape.value(style).item()?,
            kld: tape.value(kld).item()?,
            gan_g: tape.value(gan_g).item()?,
            gan_d: gan_d_value,
            total: tape.value(total).item()?,
        };
        tape.backward(total)?;
        let grads = p.grads(&tape);
        self.gen_opt.step(&mut self.model.gen, &grads)?;
        self.step += 1;
        Ok(record)
    }

    /// One pass over `clips` in a seeded order; returns the epoch means.
    pub fn train_epoch(&mut self, clips: &[ClipFeatures]) -> Result<LossRecord> {
        if clips.is_empty() {
            return Err(HopError::Dataset("no training clips".into()));
        }
        let mut rng = SeedRng::derive(self.cfg.seed, self.epoch as u64 + 1);
        let mut order: Vec<usize> = (0..clips.len()).collect();
        order.shuffle(&mut rng);
        let first = self.history.len();
        for chunk in order.chunks(self.cfg.batch_size) {
            let refs: Vec<&ClipFeatures> = chunk.iter().map(|&i| &clips[i]).collect();
            let r = self.train_step(&refs, &mut rng)?;
            self.history.push(r);
        }
        self.epoch += 1;
        let record = epoch_means(&self.history[first..])
            .pop()
            .expect("an epoch has at least one step");
        log::info!(
            "epoch {} huber {:.5} style {:.5} kld {:.5} gan_g {:.4} gan_d {:.4}",
            record.epoch,
            record.huber,
            record.style,
            record.kld,
            record.gan_g,
            record.gan_d
        );
        Ok(record)
    }

    /// Trains up to `cfg.epochs`. With `out`, writes `epoch_0000` before the
    /// first epoch (unless resuming), one checkpoint per epoch, `losses.csv`
    /// and `summary.json`.
    pub fn run(&mut self, clips: &[ClipFeatures], out: Option<&Path>) -> Result<()> {
        if let Some(dir) = out {
            if self.epoch == 0 {
                self.save(&epoch_dir(dir, 0))?;
            }
        }
        while self.epoch < self.cfg.epochs {
            self.train_epoch(clips)?;
            if let Some(dir) = out {
                self.save(&epoch_dir(dir, self.epoch))?;
                let csv = dir.join("losses.csv");
                std::fs::write(&csv, history_csv(&self.history))
                    .map_err(|e| HopError::io(&csv, e))?;
            }
        }
        if let Some(dir) = out {
            let path = dir.join("summary.json");
            let summary = serde_json::json!({
                "epochs": self.epoch,
                "steps": self.step,
                "config_hash": self.model.cfg.hash(),
                "epoch_means": epoch_means(&self.history),
                // Relative to the run directory so identical runs write identical files.
                "checkpoint": epoch_dir(Path::new(""), self.epoch),
            });
            std::fs::write(&path, serde_json::to_string_pretty(&summary)?)
                .map_err(|e| HopError::io(&path, e))?;
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(serde_json::json!({
            "kind": KIND,
            "epoch": self.epoch,
            "step": self.step,
            "config": self.model.cfg,
            "config_hash": self.model.cfg.hash(),
            "train": self.cfg,
            "gen_opt_step": self.gen_opt.step_count(),
            "disc_opt_step": self.disc_opt.step_count(),
            "history": self.history,
        }));
        ck.push_store("gen.", &self.model.gen);
        ck.push_store("disc.", &self.model.disc);
        for (tag, opt, store) in [
            ("gen", &self.gen_opt, &self.model.gen),
            ("disc", &self.disc_opt, &self.model.disc),
        ] {
            let (m, v) = opt.moments();
            for ((_, name, _), (mt, vt)) in store.iter().zip(m.iter().zip(v)) {
                ck.push(format!("opt.{tag}.m.{name}"), mt.clone());
                ck.push(format!("opt.{tag}.v.{name}"), vt.clone());
            }
        }
        Ok(ck)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        Ok(self.checkpoint()?.save(dir)?)
    }

    /// Restores parameters, optimizer moments, counters and history.
    pub fn load(dir: &Path) -> Result<Self> {
        let ck = Checkpoint::load(dir)?;
        let meta = &ck.meta;
        if meta.get("kind").and_then(|k| k.as_str()) != Some(KIND) {
            return Err(HopError::Config(format!(
                "{} is not a model checkpoint",
                dir.display()
            )));
        }
        let model_cfg: HopConfig = serde_json::from_value(meta["config"].clone())?;
        let cfg: TrainConfig = serde_json::from_value(meta["train"].clone())?;
        let mut t = Trainer::new(model_cfg, cfg)?;
        ck.restore_store("gen.", &mut t.model.gen)?;
        ck.restore_store("disc.", &mut t.model.disc)?;
        let restore_opt = |tag: &str, store: &hop_tensor::ParamStore, step: u64| -> Result<Adam> {
            let mut ms = Vec::with_capacity(store.len());
            let mut vs = Vec::with_capacity(store.len());
            for (_, name, _) in store.iter() {
                let get = |k: String| {
                    ck.get(&k)
                        .cloned()
                        .ok_or_else(|| HopError::Config(format!("checkpoint lacks {k}")))
                };
                ms.push(get(format!("opt.{tag}.m.{name}"))?);
                vs.push(get(format!("opt.{tag}.v.{name}"))?);
            }
            Ok(Adam::from_state(t.cfg.adam, step, ms, vs)?)
        };
        let gstep = meta["gen_opt_step"].as_u64().unwrap_or(0);
        let dstep = meta["disc_opt_step"].as_u64().unwrap_or(0);
        t.gen_opt = restore_opt("gen", &t.model.gen, gstep)?;
        t.disc_opt = restore_opt("disc", &t.model.disc, dstep)?;
        t.epoch = meta["epoch"].as_u64().unwrap_or(0) as usize;
        t.step = meta["step"].as_u64().unwrap_or(0);
        t.history = serde_json::from_value(meta["history"].clone())?;
        Ok(t)
    }
}

/// Loads only the model of a training checkpoint.
pub fn load_model(dir: &Path) -> Result<HopModel> {
    Ok(Trainer::load(dir)?.model)
}

/// Mean cosine similarity between reprogrammed audio tokens and text
/// embeddings over the clips that carry text.
pub fn alignment(model: &HopModel, clips: &[ClipFeatures]) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0;
    for c in clips {
        if let Some(text) = &c.text {
            let (tokens, _) = model.reprogram_clip(c)?;
            total += mean_cosine(&tokens, text);
            n += 1;
        }
    }
    if n == 0 {
        return Err(HopError::Dataset("no clip carries a transcript".into()));
    }
    Ok(total / n as f64)
}

/// Fixed per-clip style noise for reproducible generation.
pub fn generation_noise(seed: u64, clips: usize, style_dim: usize) -> Result<Tensor> {
    let mut rng = SeedRng::derive(seed, 0x9e37);
    normal(&mut rng, clips, style_dim)
}
