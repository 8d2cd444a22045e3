//! Bidirectional GRU generator, speaker style bank and recurrent
//! discriminator.

use hop_tensor::{Bound, ParamId, ParamStore, SeedRng, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::audio::resample_matrix;
use crate::error::{HopError, Result};
use crate::nn::{uniform, Linear};

/// One GRU direction with gate order (reset, update, new):
///
/// ```text
/// r = σ(x W_ir + b_ir + h W_hr + b_hr)
/// z = σ(x W_iz + b_iz + h W_hz + b_hz)
/// n = tanh(x W_in + b_in + r ⊙ (h W_hn + b_hn))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
#[derive(Clone, Debug)]
pub struct GruCell {
    pub w_input: ParamId,
    pub b_input: ParamId,
    pub w_hidden: ParamId,
    pub b_hidden: ParamId,
    pub hidden: usize,
}

impl GruCell {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut SeedRng,
    ) -> Result<Self> {
        let k = 1.0 / (hidden as f64).sqrt();
        Ok(GruCell {
            w_input: store.add(
                format!("{prefix}.w_input"),
                uniform(rng, &[input, 3 * hidden], k),
            )?,
            b_input: store.add(format!("{prefix}.b_input"), uniform(rng, &[3 * hidden], k))?,
            w_hidden: store.add(
                format!("{prefix}.w_hidden"),
                uniform(rng, &[hidden, 3 * hidden], k),
            )?,
            b_hidden: store.add(format!("{prefix}.b_hidden"), uniform(rng, &[3 * hidden], k))?,
            hidden,
        })
    }

    /// Runs over `x: (T·B) × F` (rows `t·B + b`), returning one `B × H`
    /// state per step in input order.
    pub fn run(
        &self,
        tape: &mut Tape,
        p: &Bound,
        x: Var,
        batch: usize,
        reverse: bool,
    ) -> Result<Vec<Var>> {
        let steps = tape.shape(x)[0] / batch;
        let h_dim = self.hidden;
        let gx = tape.matmul(x, p[self.w_input])?;
        let gx = tape.add_row(gx, p[self.b_input])?;
        let mut h = tape.constant(Tensor::zeros([batch, h_dim])?);
        let mut states = vec![h; steps];
        let order: Vec<usize> = if reverse {
            (0..steps).rev().collect()
        } else {
            (0..steps).collect()
        };
        for t in order {
            let gi = tape.narrow(gx, 0, t * batch, batch)?;
            let gh = tape.matmul(h, p[self.w_hidden])?;
            let gh = tape.add_row(gh, p[self.b_hidden])?;
            let (ir, iz, inn) = (
                tape.narrow(gi, 1, 0, h_dim)?,
                tape.narrow(gi, 1, h_dim, h_dim)?,
                tape.narrow(gi, 1, 2 * h_dim, h_dim)?,
            );
            let (hr, hz, hn) = (
                tape.narrow(gh, 1, 0, h_dim)?,
                tape.narrow(gh, 1, h_dim, h_dim)?,
                tape.narrow(gh, 1, 2 * h_dim, h_dim)?,
            );
            let r = tape.add(ir, hr)?;
            let r = tape.sigmoid(r)?;
            let z = tape.add(iz, hz)?;
            let z = tape.sigmoid(z)?;
            let rh = tape.mul(r, hn)?;
            let n = tape.add(inn, rh)?;
            let n = tape.tanh(n)?;
            let diff = tape.sub(h, n)?;
            let zd = tape.mul(z, diff)?;
            h = tape.add(n, zd)?;
            states[t] = h;
        }
        Ok(states)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruConfig {
    pub hidden: usize,
    pub layers: usize,
    pub bidirectional: bool,
}

/// Stacked, optionally bidirectional GRU.
#[derive(Clone, Debug)]
pub struct Gru {
    pub cfg: GruConfig,
    cells: Vec<Vec<GruCell>>,
}

impl Gru {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        cfg: GruConfig,
        rng: &mut SeedRng,
    ) -> Result<Self> {
        if cfg.layers == 0 || cfg.hidden == 0 {
            return Err(HopError::param(
                "gru",
                "layers and hidden width must be at least 1",
            ));
        }
        let dirs = if cfg.bidirectional { 2 } else { 1 };
        let mut cells = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let width = if l == 0 { input } else { dirs * cfg.hidden };
            let layer = (0..dirs)
                .map(|d| {
                    GruCell::new(
                        store,
                        &format!("{prefix}.l{l}.d{d}"),
                        width,
                        cfg.hidden,
                        rng,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            cells.push(layer);
        }
        Ok(Gru { cfg, cells })
    }

    pub fn output_width(&self) -> usize {
        self.cfg.hidden * if self.cfg.bidirectional { 2 } else { 1 }
    }

    /// `(T·B) × F` → `(T·B) × output_width`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var, batch: usize) -> Result<Var> {
        let mut input = x;
        for layer in &self.cells {
            let fwd = layer[0].run(tape, p, input, batch, false)?;
            let rows: Vec<Var> = if let Some(back) = layer.get(1) {
                let bwd = back.run(tape, p, input, batch, true)?;
                fwd.iter()
                    .zip(&bwd)
                    .map(|(&f, &b)| tape.concat(&[f, b], 1))
                    .collect::<std::result::Result<_, _>>()?
            } else {
                fwd
            };
            input = tape.concat(&rows, 0)?;
        }
        Ok(input)
    }
}

/// Per-speaker Gaussian style parameters.
#[derive(Clone, Debug)]
pub struct StyleBank {
    pub mu: ParamId,
    pub logvar: ParamId,
    pub speakers: usize,
    pub dim: usize,
}

impl StyleBank {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        speakers: usize,
        dim: usize,
        rng: &mut SeedRng,
    ) -> Result<Self> {
        if speakers == 0 || dim == 0 {
            return Err(HopError::param(
                "style_bank",
                "need at least one speaker and dimension",
            ));
        }
        Ok(StyleBank {
            mu: store.add(format!("{prefix}.mu"), uniform(rng, &[speakers, dim], 0.1))?,
            logvar: store.add(format!("{prefix}.logvar"), Tensor::zeros([speakers, dim])?)?,
            speakers,
            dim,
        })
    }

    fn check(&self, ids: &[usize]) -> Result<()> {
        match ids.iter().find(|&&id| id >= self.speakers) {
            Some(&id) => Err(HopError::UnknownSpeaker {
                id,
                count: self.speakers,
            }),
            None => Ok(()),
        }
    }

    /// `z = μ[id] + exp(½·logvar[id]) ⊙ noise` for a batch; `noise: B × S`.
    pub fn sample(&self, tape: &mut Tape, p: &Bound, ids: &[usize], noise: &Tensor) -> Result<Var> {
        self.check(ids)?;
        if noise.shape() != [ids.len(), self.dim] {
            return Err(HopError::param(
                "sample_style",
                format!(
                    "noise {:?} must be {}×{}",
                    noise.shape(),
                    ids.len(),
                    self.dim
                ),
            ));
        }
        let mu = tape.index_rows(p[self.mu], ids)?;
        let lv = tape.index_rows(p[self.logvar], ids)?;
        let half = tape.scale(lv, 0.5)?;
        let std = tape.exp(half)?;
        let n = tape.constant(noise.clone());
        let spread = tape.mul(std, n)?;
        Ok(tape.add(mu, spread)?)
    }
}

/// Plain-value reparameterised sample.
pub fn sample_style(mu: &[f64], logvar: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != logvar.len() || mu.len() != noise.len() {
        return Err(HopError::param(
            "sample_style",
            "mu, logvar and noise lengths differ",
        ));
    }
    Ok(mu
        .iter()
        .zip(logvar)
        .zip(noise)
        .map(|((m, lv), n)| m + (0.5 * lv).exp() * n)
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub frames: usize,
    pub seed_frames: usize,
    pub joints: usize,
    /// Width of each fused text-audio row.
    pub fused: usize,
    /// Channels × joints of each graph feature step.
    pub graph: usize,
    pub style: usize,
    pub gru: GruConfig,
}

impl GeneratorConfig {
    pub fn seed_width(&self) -> usize {
        self.joints * 3 + 1
    }

    pub fn input_width(&self) -> usize {
        self.fused + self.graph + self.style + self.seed_width()
    }
}

/// Seed-pose conditioning rows ordered `(t, b)`: the first `seed_frames`
/// frames carry the seed pose and a flag of 1, the rest are zero.
pub fn seed_channels(seeds: &[Tensor], frames: usize, seed_frames: usize) -> Result<Tensor> {
    let batch = seeds.len();
    if batch == 0 {
        return Err(HopError::param("generate", "empty batch"));
    }
    let width = seeds[0].numel() / seed_frames.max(1);
    let mut data = vec![0.0; frames * batch * (width + 1)];
    for (b, s) in seeds.iter().enumerate() {
        if s.numel() != seed_frames * width || s.shape()[0] != seed_frames {
            return Err(HopError::param(
                "generate",
                format!("seed poses {:?} must hold {seed_frames} frames", s.shape()),
            ));
        }
        for t in 0..seed_frames.min(frames) {
            let row = &mut data[(t * batch + b) * (width + 1)..(t * batch + b + 1) * (width + 1)];
            row[..width].copy_from_slice(&s.data()[t * width..(t + 1) * width]);
            row[width] = 1.0;
        }
    }
    Ok(Tensor::new([frames * batch, width + 1], data)?)
}

#[derive(Clone, Debug)]
pub struct Generator {
    pub cfg: GeneratorConfig,
    pub gru: Gru,
    pub head: Linear,
    rest: Vec<f64>,
}

impl Generator {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cfg: GeneratorConfig,
        rest: Vec<f64>,
        rng: &mut SeedRng,
    ) -> Result<Self> {
        if rest.len() != cfg.joints * 3 {
            return Err(HopError::param(
                "generator",
                "rest pose must hold J·3 values",
            ));
        }
        let gru = Gru::new(
            store,
            &format!("{prefix}.gru"),
            cfg.input_width(),
            cfg.gru.clone(),
            rng,
        )?;
        let head = Linear::new(
            store,
            &format!("{prefix}.head"),
            gru.output_width(),
            cfg.joints * 3,
            true,
            rng,
        )?;
        Ok(Generator {
            cfg,
            gru,
            head,
            rest,
        })
    }

    /// Graph features `[B, T_g, J, C]` flattened per step and linearly
    /// resampled along time to the pose length; rows `(t, b)`.
    pub fn expand_graph(&self, tape: &mut Tape, zrg: Var) -> Result<Var> {
        let s = tape.shape(zrg).to_vec();
        let (b, tg, width) = (s[0], s[1], s[2] * s[3]);
        if width != self.cfg.graph {
            return Err(HopError::param(
                "generate",
                format!(
                    "graph features {s:?} flatten to {width}, expected {}",
                    self.cfg.graph
                ),
            ));
        }
        let x = tape.permute(zrg, &[1, 0, 2, 3])?;
        let x = tape.reshape(x, [tg, b * width])?;
        let r = tape.constant(resample_matrix(tg, self.cfg.frames));
        let y = tape.matmul(r, x)?;
        Ok(tape.reshape(y, [self.cfg.frames * b, width])?)
    }

    /// `ztw: (T·B) × D_f`, `graph: (T·B) × (C·J)` from [`expand_graph`],
    /// `style: B × S`, `seed: (T·B) × (J·3 + 1)`. Returns unit direction
    /// vectors as `(T·B) × (J·3)`.
    ///
    /// [`expand_graph`]: Generator::expand_graph
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &Bound,
        ztw: Var,
        graph: Var,
        style: Var,
        seed: Var,
    ) -> Result<Var> {
        let batch = tape.shape(style)[0];
        let rows = self.cfg.frames * batch;
        for (name, v, width) in [
            ("fused text-audio", ztw, self.cfg.fused),
            ("graph", graph, self.cfg.graph),
            ("seed", seed, self.cfg.seed_width()),
        ] {
            if tape.shape(v) != [rows, width] {
                return Err(HopError::param(
                    "generate",
                    format!("{name} input {:?} must be {rows}×{width}", tape.shape(v)),
                ));
            }
        }
        if tape.shape(style)[1] != self.cfg.style {
            return Err(HopError::param("generate", "style width mismatch"));
        }
        let tile: Vec<usize> = (0..rows).map(|r| r % batch).collect();
        let z = tape.index_rows(style, &tile)?;
        let x = tape.concat(&[ztw, graph, z, seed], 1)?;
        let h = self.gru.forward(tape, p, x, batch)?;
        let out = self.head.forward(tape, p, h)?;
        let vectors = tape.reshape(out, [rows * self.cfg.joints, 3])?;
        let unit = tape.normalize_rows(vectors, &self.rest, 1e-12)?;
        Ok(tape.reshape(unit, [rows, self.cfg.joints * 3])?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub joints: usize,
    pub gru: GruConfig,
}

/// Scores motion realism from frame differences.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub cfg: DiscriminatorConfig,
    pub gru: Gru,
    pub head: Linear,
}

impl Discriminator {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cfg: DiscriminatorConfig,
        rng: &mut SeedRng,
    ) -> Result<Self> {
        let gru = Gru::new(
            store,
            &format!("{prefix}.gru"),
            cfg.joints * 3,
            cfg.gru.clone(),
            rng,
        )?;
        let head = Linear::new(
            store,
            &format!("{prefix}.head"),
            gru.output_width(),
            1,
            true,
            rng,
        )?;
        Ok(Discriminator { cfg, gru, head })
    }

    /// `poses: (T·B) × (J·3)` rows `(t, b)` → `B × 1` scores in (0, 1).
    pub fn forward(&self, tape: &mut Tape, p: &Bound, poses: Var, batch: usize) -> Result<Var> {
        let s = tape.shape(poses).to_vec();
        if s.len() != 2 || s[1] != self.cfg.joints * 3 || batch == 0 || !s[0].is_multiple_of(batch)
        {
            return Err(HopError::param(
                "discriminate",
                format!("poses {s:?} do not match the joints"),
            ));
        }
        let steps = s[0] / batch;
        if steps < 2 {
            return Err(HopError::param("discriminate", "need at least two frames"));
        }
        let later = tape.narrow(poses, 0, batch, (steps - 1) * batch)?;
        let earlier = tape.narrow(poses, 0, 0, (steps - 1) * batch)?;
        let motion = tape.sub(later, earlier)?;
        let h = self.gru.forward(tape, p, motion, batch)?;
        let logits = self.head.forward(tape, p, h)?;
        let mut avg = vec![0.0; batch * (steps - 1) * batch];
        for b in 0..batch {
            for t in 0..steps - 1 {
                avg[b * (steps - 1) * batch + t * batch + b] = 1.0 / (steps - 1) as f64;
            }
        }
        let avg = tape.constant(Tensor::new([batch, (steps - 1) * batch], avg)?);
        let pooled = tape.matmul(avg, logits)?;
        Ok(tape.sigmoid(pooled)?)
    }
}
