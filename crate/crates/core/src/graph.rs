//! Joint graphs over audio and action node features: adaptive adjacency,
//! diffusion graph convolution and gated dilated causal temporal blocks.

use hop_tensor::{softmax, Bound, ParamId, ParamStore, SeedRng, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{HopError, Result};
use crate::nn::uniform;
use crate::pose::{PoseSequence, Skeleton};

/// Row-normalised forward and backward transition matrices of an adjacency.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrices {
    pub forward: Tensor,
    pub backward: Tensor,
}

fn row_normalize(a: &Tensor) -> Result<Tensor> {
    let n = a.shape()[1];
    let mut out = a.clone();
    for row in out.data_mut().chunks_mut(n) {
        let s: f64 = row.iter().sum();
        if s <= 0.0 {
            return Err(HopError::param(
                "transition_matrices",
                "adjacency row with no edges",
            ));
        }
        row.iter_mut().for_each(|x| *x /= s);
    }
    Ok(out)
}

impl TransitionMatrices {
    pub fn from_adjacency(a: &Tensor) -> Result<Self> {
        if a.rank() != 2 || a.shape()[0] != a.shape()[1] {
            return Err(HopError::param(
                "transition_matrices",
                "adjacency must be square",
            ));
        }
        if a.data().iter().any(|&x| x < 0.0) {
            return Err(HopError::param(
                "transition_matrices",
                "adjacency must be non-negative",
            ));
        }
        Ok(TransitionMatrices {
            forward: row_normalize(a)?,
            backward: row_normalize(&a.transpose()?)?,
        })
    }

    /// `[P_f^1 … P_f^k]` and `[P_b^1 … P_b^k]`.
    pub fn powers(&self, order: usize) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
        let mut f = Vec::with_capacity(order);
        let mut b = Vec::with_capacity(order);
        for j in 0..order {
            if j == 0 {
                f.push(self.forward.clone());
                b.push(self.backward.clone());
            } else {
                f.push(f[j - 1].matmul(&self.forward)?);
                b.push(b[j - 1].matmul(&self.backward)?);
            }
        }
        Ok((f, b))
    }
}

/// `softmax(relu(E1 · E2ᵀ))` row-wise.
pub fn adaptive_adjacency(e1: &Tensor, e2: &Tensor) -> Result<Tensor> {
    let logits = e1.matmul(&e2.transpose()?)?;
    Ok(softmax(&hop_tensor::relu(&logits), 1)?)
}

pub fn adaptive_adjacency_on(tape: &mut Tape, e1: Var, e2: Var) -> Result<Var> {
    let e2t = tape.transpose(e2)?;
    let logits = tape.matmul(e1, e2t)?;
    let r = tape.relu(logits)?;
    Ok(tape.softmax(r, 1)?)
}

/// Stride sampling of a pose window to `steps` graph steps:
/// frames `0, s, 2s, …` with `s = floor(T / steps)`. Output `steps × J × 3`.
pub fn pose_to_graph(poses: &PoseSequence, steps: usize) -> Result<Tensor> {
    let t = poses.num_frames();
    if steps == 0 || t < steps {
        return Err(HopError::param(
            "pose_to_graph",
            format!("cannot take {steps} graph steps from {t} frames"),
        ));
    }
    let stride = t / steps;
    let j = poses.num_joints();
    let data = (0..steps)
        .flat_map(|i| poses.frames[i * stride].iter().flatten().copied())
        .collect();
    Ok(Tensor::new([steps, j, 3], data)?)
}

/// Mixes nodes of a `[B, T, J, C]` tensor: `out[b,t,i,c] = Σ_k M[i,k]·x[b,t,k,c]`.
pub fn mix_nodes(tape: &mut Tape, m: Var, x: Var) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    let (b, t, j, c) = (s[0], s[1], s[2], s[3]);
    let xp = tape.permute(x, &[2, 0, 1, 3])?;
    let xp = tape.reshape(xp, [j, b * t * c])?;
    let y = tape.matmul(m, xp)?;
    let y = tape.reshape(y, [j, b, t, c])?;
    Ok(tape.permute(y, &[1, 2, 0, 3])?)
}

/// `Z = Σ_{j=0}^{K} P_f^j X W_{j1} + P_b^j X W_{j2} + A^j X W_{j3}` (+ bias).
#[derive(Clone, Debug)]
pub struct DiffusionConv {
    pub order: usize,
    /// `weights[j][k]` multiplies the j-th power of support k.
    pub weights: Vec<[ParamId; 3]>,
    pub bias: Option<ParamId>,
    pub channels_in: usize,
    pub channels_out: usize,
}

impl DiffusionConv {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        order: usize,
        channels_in: usize,
        channels_out: usize,
        bias: bool,
        rng: &mut SeedRng,
    ) -> Result<Self> {
        let bound = 1.0 / ((3 * (order + 1) * channels_in) as f64).sqrt();
        let mut weights = Vec::with_capacity(order + 1);
        for j in 0..=order {
            let mut add = |k: usize| {
                store.add(
                    format!("{prefix}.w{j}{k}"),
                    uniform(rng, &[channels_in, channels_out], bound),
                )
            };
            weights.push([add(1)?, add(2)?, add(3)?]);
        }
        let bias = if bias {
            Some(store.add(
                format!("{prefix}.bias"),
                uniform(rng, &[channels_out], bound),
            )?)
        } else {
            None
        };
        Ok(DiffusionConv {
            order,
            weights,
            bias,
            channels_in,
            channels_out,
        })
    }

    /// `x: [B, T, J, C_in]`; `forward`/`backward` hold `P^1..P^K` as constants
    /// and `adaptive` is the learned `J × J` matrix.
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &Bound,
        x: Var,
        forward: &[Var],
        backward: &[Var],
        adaptive: Var,
    ) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        if s.len() != 4 || s[3] != self.channels_in {
            return Err(HopError::param(
                "diffusion_graph_conv",
                format!("input {s:?} needs {} channels", self.channels_in),
            ));
        }
        if forward.len() < self.order || backward.len() < self.order {
            return Err(HopError::param(
                "diffusion_graph_conv",
                "missing transition powers",
            ));
        }
        let mut features = Vec::with_capacity(3 * (self.order + 1));
        let mut weights = Vec::with_capacity(3 * (self.order + 1));
        let mut a_pow = adaptive;
        for j in 0..=self.order {
            if j == 0 {
                features.extend([x, x, x]);
            } else {
                if j > 1 {
                    a_pow = tape.matmul(a_pow, adaptive)?;
                }
                features.push(mix_nodes(tape, forward[j - 1], x)?);
                features.push(mix_nodes(tape, backward[j - 1], x)?);
                features.push(mix_nodes(tape, a_pow, x)?);
            }
            weights.extend(self.weights[j].iter().map(|&id| p[id]));
        }
        let rows = s[0] * s[1] * s[2];
        let stacked = tape.concat(&features, 3)?;
        let stacked = tape.reshape(stacked, [rows, features.len() * self.channels_in])?;
        let w = tape.concat(&weights, 0)?;
        let mut z = tape.matmul(stacked, w)?;
        if let Some(b) = self.bias {
            z = tape.add_row(z, p[b])?;
        }
        Ok(tape.reshape(z, [s[0], s[1], s[2], self.channels_out])?)
    }
}

/// `tanh(conv_a(x) + b_a) ⊙ σ(conv_b(x) + b_b)` with per-channel dilated
/// causal filters along time.
#[derive(Clone, Debug)]
pub struct TemporalBlock {
    pub filter_a: ParamId,
    pub filter_b: ParamId,
    pub bias_a: Option<ParamId>,
    pub bias_b: Option<ParamId>,
    pub dilation: usize,
    pub stride: usize,
}

impl TemporalBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        taps: usize,
        dilation: usize,
        stride: usize,
        bias: bool,
        rng: &mut SeedRng,
    ) -> Result<Self> {
        if taps == 0 || dilation == 0 || stride == 0 {
            return Err(HopError::param(
                "tcn_block",
                "taps, dilation and stride must be at least 1",
            ));
        }
        let bound = 1.0 / (taps as f64).sqrt();
        let filter_a = store.add(
            format!("{prefix}.filter_a"),
            uniform(rng, &[channels, taps], bound),
        )?;
        let filter_b = store.add(
            format!("{prefix}.filter_b"),
            uniform(rng, &[channels, taps], bound),
        )?;
        let (bias_a, bias_b) = if bias {
            (
                Some(store.add(format!("{prefix}.bias_a"), uniform(rng, &[channels], bound))?),
                Some(store.add(format!("{prefix}.bias_b"), uniform(rng, &[channels], bound))?),
            )
        } else {
            (None, None)
        };
        Ok(TemporalBlock {
            filter_a,
            filter_b,
            bias_a,
            bias_b,
            dilation,
            stride,
        })
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let a = tape.causal_conv(
            x,
            p[self.filter_a],
            self.bias_a.map(|b| p[b]),
            self.dilation,
            self.stride,
        )?;
        let b = tape.causal_conv(
            x,
            p[self.filter_b],
            self.bias_b.map(|b| p[b]),
            self.dilation,
            self.stride,
        )?;
        let a = tape.tanh(a)?;
        let b = tape.sigmoid(b)?;
        Ok(tape.mul(a, b)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Temporal {
        taps: usize,
        dilation: usize,
        stride: usize,
    },
    Graph,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Graph time steps fed to the encoder (T_g).
    pub steps: usize,
    /// Audio features per node (F_a).
    pub audio_features: usize,
    pub diffusion_order: usize,
    pub node_embedding: usize,
    pub layers: Vec<LayerSpec>,
    pub bias: bool,
}

impl EncoderConfig {
    /// Two stride-2 gated temporal blocks, each followed by a graph layer.
    pub fn full() -> Self {
        EncoderConfig {
            steps: 16,
            audio_features: 170,
            diffusion_order: 2,
            node_embedding: 10,
            layers: vec![
                LayerSpec::Temporal {
                    taps: 2,
                    dilation: 1,
                    stride: 2,
                },
                LayerSpec::Graph,
                LayerSpec::Temporal {
                    taps: 2,
                    dilation: 2,
                    stride: 2,
                },
                LayerSpec::Graph,
            ],
            bias: true,
        }
    }

    pub fn channels(&self) -> usize {
        self.audio_features + 3
    }

    pub fn output_steps(&self) -> usize {
        self.layers.iter().fold(self.steps, |t, l| match l {
            LayerSpec::Temporal { stride, .. } => t.div_ceil(*stride),
            LayerSpec::Graph => t,
        })
    }
}

#[derive(Clone, Debug)]
enum Layer {
    Temporal(TemporalBlock),
    Graph(DiffusionConv),
}

/// Audio and action node features → `[B, T_out, J, C]` graph features.
#[derive(Clone, Debug)]
pub struct GraphEncoder {
    pub cfg: EncoderConfig,
    pub joints: usize,
    pub e1: ParamId,
    pub e2: ParamId,
    layers: Vec<Layer>,
    forward_powers: Vec<Tensor>,
    backward_powers: Vec<Tensor>,
}

impl GraphEncoder {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cfg: EncoderConfig,
        skeleton: &Skeleton,
        rng: &mut SeedRng,
    ) -> Result<Self> {
        skeleton.validate()?;
        if cfg.steps == 0 || cfg.node_embedding == 0 {
            return Err(HopError::param(
                "graph_encoder",
                "steps and node embedding must be positive",
            ));
        }
        let joints = skeleton.joints();
        let tm = TransitionMatrices::from_adjacency(&skeleton.adjacency())?;
        let (forward_powers, backward_powers) = tm.powers(cfg.diffusion_order)?;
        let e1 = store.add(
            format!("{prefix}.e1"),
            uniform(rng, &[joints, cfg.node_embedding], 1.0),
        )?;
        let e2 = store.add(
            format!("{prefix}.e2"),
            uniform(rng, &[joints, cfg.node_embedding], 1.0),
        )?;
        let c = cfg.channels();
        let mut layers = Vec::with_capacity(cfg.layers.len());
        for (i, spec) in cfg.layers.iter().enumerate() {
            let name = format!("{prefix}.layer{i}");
            layers.push(match *spec {
                LayerSpec::Temporal {
                    taps,
                    dilation,
                    stride,
                } => Layer::Temporal(TemporalBlock::new(
                    store, &name, c, taps, dilation, stride, cfg.bias, rng,
                )?),
                LayerSpec::Graph => Layer::Graph(DiffusionConv::new(
                    store,
                    &name,
                    cfg.diffusion_order,
                    c,
                    c,
                    cfg.bias,
                    rng,
                )?),
            });
        }
        Ok(GraphEncoder {
            cfg,
            joints,
            e1,
            e2,
            layers,
            forward_powers,
            backward_powers,
        })
    }

    pub fn adjacency(&self, tape: &mut Tape, p: &Bound) -> Result<Var> {
        adaptive_adjacency_on(tape, p[self.e1], p[self.e2])
    }

    /// `audio: [B, T_g, J, F_a]`, `action: [B, T_g, J, 3]`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, audio: Var, action: Var) -> Result<Var> {
        let (sa, sb) = (tape.shape(audio).to_vec(), tape.shape(action).to_vec());
        if sa.len() != 4 || sb.len() != 4 || sa[2] != sb[2] {
            return Err(HopError::param(
                "encode_audio_action",
                format!("audio graph {sa:?} and action graph {sb:?} have different node counts"),
            ));
        }
        if sa[2] != self.joints
            || sa[1] != self.cfg.steps
            || sb[1] != self.cfg.steps
            || sa[0] != sb[0]
        {
            return Err(HopError::param(
                "encode_audio_action",
                format!(
                    "expected [B, {}, {}, ·] inputs, got {sa:?} and {sb:?}",
                    self.cfg.steps, self.joints
                ),
            ));
        }
        if sa[3] != self.cfg.audio_features || sb[3] != 3 {
            return Err(HopError::param(
                "encode_audio_action",
                format!(
                    "expected {} audio and 3 action features",
                    self.cfg.audio_features
                ),
            ));
        }
        let mut x = tape.concat(&[audio, action], 3)?;
        let has_graph = self.layers.iter().any(|l| matches!(l, Layer::Graph(_)));
        let (fw, bw, adaptive) = if has_graph {
            let fw: Vec<Var> = self
                .forward_powers
                .iter()
                .map(|m| tape.constant(m.clone()))
                .collect();
            let bw: Vec<Var> = self
                .backward_powers
                .iter()
                .map(|m| tape.constant(m.clone()))
                .collect();
            let a = self.adjacency(tape, p)?;
            (fw, bw, Some(a))
        } else {
            (Vec::new(), Vec::new(), None)
        };
        for layer in &self.layers {
            x = match layer {
                Layer::Temporal(block) => block.forward(tape, p, x)?,
                Layer::Graph(conv) => {
                    conv.forward(tape, p, x, &fw, &bw, adaptive.expect("graph layer present"))?
                }
            };
        }
        Ok(x)
    }
}

/// `[B, T, J, C]` → `[B, C, J, T]`.
pub fn channels_joints_time(tape: &mut Tape, x: Var) -> Result<Var> {
    Ok(tape.permute(x, &[0, 3, 2, 1])?)
}
