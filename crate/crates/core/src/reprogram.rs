//! Cross-attention reprogramming of Mel patches onto vocabulary prototypes
//! and fusion of the result with token embeddings.

use hop_tensor::{Bound, ParamId, ParamStore, SeedRng, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::audio::resample_matrix;
use crate::error::{HopError, Result};
use crate::nn::{interleave_rows, uniform, Linear};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReprogramConfig {
    /// Mel bands per patch (d_m).
    pub d_mel: usize,
    /// Text embedding width (D).
    pub d_model: usize,
    /// Attention width across all heads (d_h).
    pub d_hidden: usize,
    pub heads: usize,
    /// Prototype count (V').
    pub prototypes: usize,
    /// Vocabulary rows (V).
    pub vocab: usize,
}

impl ReprogramConfig {
    pub fn head_dim(&self) -> usize {
        self.d_hidden / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if [
            self.d_mel,
            self.d_model,
            self.d_hidden,
            self.heads,
            self.prototypes,
            self.vocab,
        ]
        .contains(&0)
        {
            return Err(HopError::param(
                "reprogram",
                "every dimension must be positive",
            ));
        }
        if !self.d_hidden.is_multiple_of(self.heads) {
            return Err(HopError::param(
                "reprogram",
                format!("{} heads do not divide d_h = {}", self.heads, self.d_hidden),
            ));
        }
        if self.prototypes >= self.vocab {
            return Err(HopError::param(
                "reprogram",
                format!(
                    "{} prototypes must be fewer than {} vocabulary rows",
                    self.prototypes, self.vocab
                ),
            ));
        }
        Ok(())
    }
}

/// `W_map · E`.
pub fn map_prototypes(table: &Tensor, w_map: &Tensor) -> Result<Tensor> {
    Ok(w_map.matmul(table)?)
}

#[derive(Clone, Debug)]
pub struct Reprogrammer {
    pub cfg: ReprogramConfig,
    pub map: ParamId,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
}

pub struct ReprogramOutput {
    /// `rows × D` reprogrammed tokens.
    pub tokens: Var,
    /// One `rows × V'` attention matrix per head.
    pub attention: Vec<Var>,
}

impl Reprogrammer {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cfg: ReprogramConfig,
        rng: &mut SeedRng,
    ) -> Result<Self> {
        cfg.validate()?;
        let map_bound = 1.0 / (cfg.vocab as f64).sqrt();
        let map = store.add(
            format!("{prefix}.map"),
            uniform(rng, &[cfg.prototypes, cfg.vocab], map_bound),
        )?;
        let query = Linear::new(
            store,
            &format!("{prefix}.query"),
            cfg.d_mel,
            cfg.d_hidden,
            true,
            rng,
        )?;
        let key = Linear::new(
            store,
            &format!("{prefix}.key"),
            cfg.d_model,
            cfg.d_hidden,
            true,
            rng,
        )?;
        let value = Linear::new(
            store,
            &format!("{prefix}.value"),
            cfg.d_model,
            cfg.d_hidden,
            true,
            rng,
        )?;
        let out = Linear::new(
            store,
            &format!("{prefix}.out"),
            cfg.d_hidden,
            cfg.d_model,
            true,
            rng,
        )?;
        Ok(Reprogrammer {
            cfg,
            map,
            query,
            key,
            value,
            out,
        })
    }

    /// `V' × D` prototypes from a frozen `V × D` vocabulary table.
    pub fn prototypes(&self, tape: &mut Tape, p: &Bound, vocab: Var) -> Result<Var> {
        let vs = tape.shape(vocab).to_vec();
        if vs != [self.cfg.vocab, self.cfg.d_model] {
            return Err(HopError::param(
                "reprogram",
                format!(
                    "vocabulary table {vs:?} does not match {}×{}",
                    self.cfg.vocab, self.cfg.d_model
                ),
            ));
        }
        Ok(tape.matmul(p[self.map], vocab)?)
    }

    /// Reprograms `rows × d_m` Mel patches against `V' × D` prototypes.
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &Bound,
        mel: Var,
        prototypes: Var,
    ) -> Result<ReprogramOutput> {
        let ms = tape.shape(mel).to_vec();
        if ms.len() != 2 || ms[1] != self.cfg.d_mel {
            return Err(HopError::param(
                "reprogram",
                format!("mel patches {ms:?} need {} columns", self.cfg.d_mel),
            ));
        }
        let ps = tape.shape(prototypes).to_vec();
        if ps.len() != 2 || ps[1] != self.cfg.d_model {
            return Err(HopError::param(
                "reprogram",
                format!("prototypes {ps:?} need {} columns", self.cfg.d_model),
            ));
        }
        let q = self.query.forward(tape, p, mel)?;
        let k = self.key.forward(tape, p, prototypes)?;
        let v = self.value.forward(tape, p, prototypes)?;
        let d = self.cfg.head_dim();
        let scale = 1.0 / (d as f64).sqrt();
        let mut heads = Vec::with_capacity(self.cfg.heads);
        let mut attention = Vec::with_capacity(self.cfg.heads);
        for n in 0..self.cfg.heads {
            let qn = tape.narrow(q, 1, n * d, d)?;
            let kn = tape.narrow(k, 1, n * d, d)?;
            let vn = tape.narrow(v, 1, n * d, d)?;
            let kt = tape.transpose(kn)?;
            let scores = tape.matmul(qn, kt)?;
            let scores = tape.scale(scores, scale)?;
            let a = tape.softmax(scores, 1)?;
            heads.push(tape.matmul(a, vn)?);
            attention.push(a);
        }
        let joined = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat(&heads, 1)?
        };
        let act = tape.relu(joined)?;
        let tokens = self.out.forward(tape, p, act)?;
        Ok(ReprogramOutput { tokens, attention })
    }
}

/// Concatenate reprogrammed tokens with text embeddings along the sequence,
/// project each position, then resample the sequence to the pose length.
#[derive(Clone, Debug)]
pub struct Fusion {
    pub proj: Linear,
    pub frames: usize,
}

impl Fusion {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d_model: usize,
        d_fused: usize,
        frames: usize,
        rng: &mut SeedRng,
    ) -> Result<Self> {
        if frames == 0 {
            return Err(HopError::param(
                "fuse_text_audio",
                "target length must be positive",
            ));
        }
        Ok(Fusion {
            proj: Linear::new(
                store,
                &format!("{prefix}.proj"),
                d_model,
                d_fused,
                true,
                rng,
            )?,
            frames,
        })
    }

    /// One sample: `P × D` tokens and optional `L × D` text rows → `T × D_f`.
    pub fn fuse_one(
        &self,
        tape: &mut Tape,
        p: &Bound,
        tokens: Var,
        text: Option<Var>,
    ) -> Result<Var> {
        let seq = match text {
            Some(t) => tape.concat(&[tokens, t], 0)?,
            None => tokens,
        };
        let len = tape.shape(seq)[0];
        let projected = self.proj.forward(tape, p, seq)?;
        let r = tape.constant(resample_matrix(len, self.frames));
        Ok(tape.matmul(r, projected)?)
    }

    /// A batch: `tokens` holds `B·P` rows grouped by sample. Output rows are
    /// ordered `(t, b)`.
    pub fn fuse_batch(
        &self,
        tape: &mut Tape,
        p: &Bound,
        tokens: Var,
        patches: usize,
        texts: &[Option<Var>],
    ) -> Result<Var> {
        let mut per_sample = Vec::with_capacity(texts.len());
        for (b, text) in texts.iter().enumerate() {
            let tok = tape.narrow(tokens, 0, b * patches, patches)?;
            per_sample.push(self.fuse_one(tape, p, tok, *text)?);
        }
        interleave_rows(tape, &per_sample)
    }
}

/// Mean cosine similarity between every reprogrammed token and every text
/// embedding of the same clip.
pub fn mean_cosine(tokens: &Tensor, text: &Tensor) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let mut total = 0.0;
    let mut count = 0;
    for i in 0..tokens.shape()[0] {
        let a = tokens.row(i);
        for j in 0..text.shape()[0] {
            let b = text.row(j);
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            total += dot / (norm(a) * norm(b));
            count += 1;
        }
    }
    total / count as f64
}
