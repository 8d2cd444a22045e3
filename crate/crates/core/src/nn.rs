//! Small layer building blocks on top of the tape.

use hop_tensor::{Bound, ParamId, ParamStore, SeedRng, Tape, Tensor, Var};
use rand::Rng;

use crate::error::Result;

/// Uniform values in `[-bound, bound]`.
pub fn uniform(rng: &mut SeedRng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("positive extents")
}

/// `y = x·W + b` with `W: in × out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Weights and bias drawn from U(±1/√fan_in).
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut SeedRng,
    ) -> Result<Self> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            uniform(rng, &[fan_in, fan_out], bound),
        )?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), uniform(rng, &[fan_out], bound))?)
        } else {
            None
        };
        Ok(Linear {
            weight,
            bias,
            fan_in,
            fan_out,
        })
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p[self.weight])?;
        Ok(match self.bias {
            Some(b) => tape.add_row(y, p[b])?,
            None => y,
        })
    }
}

/// Stacks `B` matrices of shape `T × F` into `(T·B) × F` with row `t·B + b`.
pub fn interleave_rows(tape: &mut Tape, parts: &[Var]) -> Result<Var> {
    let shape = tape.shape(parts[0]).to_vec();
    if parts.len() == 1 {
        return Ok(parts[0]);
    }
    let wide = tape.concat(parts, 1)?;
    Ok(tape.reshape(wide, [shape[0] * parts.len(), shape[1]])?)
}

/// Inverse of [`interleave_rows`] on plain values: the `T × F` block of
/// sample `b` from a `(T·B) × F` matrix.
pub fn sample_rows(x: &Tensor, batch: usize, b: usize) -> Tensor {
    let cols = x.shape()[1];
    let steps = x.shape()[0] / batch;
    let data = (0..steps)
        .flat_map(|t| x.row(t * batch + b).iter().copied())
        .collect();
    Tensor::new([steps, cols], data).expect("positive extents")
}
