//! Randomised gradient-check cases, one per differentiable tape op.

use rand::Rng;

use crate::error::Result;
use crate::params::{Bound, ParamStore};
use crate::rng::SeedRng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Ops exercised by [`op_case`], by index.
pub const OP_NAMES: [&str; 15] = [
    "matmul",
    "add/sub",
    "mul",
    "add_row/scale/add_scalar",
    "exp",
    "ln",
    "tanh/sigmoid",
    "relu/clamp",
    "softmax",
    "permute/reshape/mean",
    "concat/narrow",
    "index_rows",
    "huber",
    "normalize_rows",
    "causal_conv",
];

pub fn random_tensor(rng: &mut SeedRng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .expect("length matches shape")
}

/// Contracts `y` with a fixed random weighting so every output coordinate
/// contributes to the scalar.
fn weigh(tape: &mut Tape, y: Var, rng_seed: u64) -> Result<Var> {
    let mut rng = SeedRng::new(rng_seed);
    let w = random_tensor(&mut rng, tape.shape(y), -1.0, 1.0);
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

pub type OpCase = Box<dyn Fn(&mut Tape, &Bound) -> Result<Var>>;

/// Builds random parameters and a scalar function for op `op` (see
/// [`OP_NAMES`]); indices past the end give the causal convolution.
pub fn op_case(op: usize, rng: &mut SeedRng) -> (ParamStore, OpCase) {
    let mut d = || rng.random_range(1..=8usize);
    let (m, k, n) = (d(), d(), d());
    let mut rng = SeedRng::new(rng.random());
    let mut store = ParamStore::new();
    let wseed: u64 = rng.random();
    macro_rules! p {
        ($name:expr, $shape:expr) => {
            store
                .add($name, random_tensor(&mut rng, &$shape, -1.5, 1.5))
                .expect("fresh name")
        };
        ($name:expr, $shape:expr, $lo:expr, $hi:expr) => {
            store
                .add($name, random_tensor(&mut rng, &$shape, $lo, $hi))
                .expect("fresh name")
        };
    }
    let case: OpCase = match op {
        0 => {
            let (a, b) = (p!("a", [m, k]), p!("b", [k, n]));
            Box::new(move |t, p| {
                let y = t.matmul(p[a], p[b])?;
                weigh(t, y, wseed)
            })
        }
        1 => {
            let (a, b) = (p!("a", [m, n]), p!("b", [m, n]));
            Box::new(move |t, p| {
                let s = t.add(p[a], p[b])?;
                let y = t.sub(s, p[b])?;
                let y = t.sub(y, p[b])?;
                weigh(t, y, wseed)
            })
        }
        2 => {
            let (a, b) = (p!("a", [m, n]), p!("b", [m, n]));
            Box::new(move |t, p| {
                let y = t.mul(p[a], p[b])?;
                weigh(t, y, wseed)
            })
        }
        3 => {
            let (a, r) = (p!("a", [m, n]), p!("r", [n]));
            Box::new(move |t, p| {
                let y = t.add_row(p[a], p[r])?;
                let y = t.scale(y, -0.7)?;
                let y = t.add_scalar(y, 0.3)?;
                weigh(t, y, wseed)
            })
        }
        4 => {
            let a = p!("a", [m, n]);
            Box::new(move |t, p| {
                let y = t.exp(p[a])?;
                weigh(t, y, wseed)
            })
        }
        5 => {
            let a = p!("a", [m, n], 0.2, 3.0);
            Box::new(move |t, p| {
                let y = t.ln(p[a])?;
                weigh(t, y, wseed)
            })
        }
        6 => {
            let a = p!("a", [m, n]);
            Box::new(move |t, p| {
                let y = t.tanh(p[a])?;
                let z = t.sigmoid(p[a])?;
                let y = t.add(y, z)?;
                weigh(t, y, wseed)
            })
        }
        7 => {
            let a = p!("a", [m, n]);
            Box::new(move |t, p| {
                let y = t.relu(p[a])?;
                let z = t.clamp(p[a], -0.5, 0.5)?;
                let y = t.add(y, z)?;
                weigh(t, y, wseed)
            })
        }
        8 => {
            let a = p!("a", [m, k, n]);
            let axis = (m + k + n) % 3;
            Box::new(move |t, p| {
                let y = t.softmax(p[a], axis)?;
                weigh(t, y, wseed)
            })
        }
        9 => {
            let a = p!("a", [m, k, n]);
            Box::new(move |t, p| {
                let y = t.permute(p[a], &[2, 0, 1])?;
                let y = t.reshape(y, [n * m, k])?;
                let s = weigh(t, y, wseed)?;
                let mean = t.mean(p[a])?;
                let s2 = t.scale(mean, 3.0)?;
                t.add(s, s2)
            })
        }
        10 => {
            let (a, b) = (p!("a", [m, k]), p!("b", [m, n]));
            Box::new(move |t, p| {
                let c = t.concat(&[p[a], p[b], p[a]], 1)?;
                let r = t.concat(&[c, c], 0)?;
                let y = t.narrow(r, 0, m / 2, m)?;
                let y = t.narrow(y, 1, k / 2, k + n - k / 2)?;
                weigh(t, y, wseed)
            })
        }
        11 => {
            let a = p!("a", [m, n]);
            let idx: Vec<usize> = (0..k + 2).map(|i| (i * 7 + 3) % m).collect();
            Box::new(move |t, p| {
                let y = t.index_rows(p[a], &idx)?;
                weigh(t, y, wseed)
            })
        }
        12 => {
            let (a, b) = (p!("a", [m, n], -3.0, 3.0), p!("b", [m, n], -3.0, 3.0));
            Box::new(move |t, p| t.huber(p[a], p[b], 1.0))
        }
        13 => {
            let a = p!("a", [m * n, 3]);
            Box::new(move |t, p| {
                let y = t.normalize_rows(p[a], &[0.0, 1.0, 0.0], 1e-9)?;
                weigh(t, y, wseed)
            })
        }
        _ => {
            let (b, time, nodes, c) = (1 + m % 3, k + 1, 1 + n % 3, 1 + m % 4);
            let taps = 1 + n % 3;
            let dilation = 1 + k % 3;
            let stride = 1 + m % 2;
            let x = p!("x", [b, time, nodes, c]);
            let f = p!("f", [c, taps]);
            let bias = p!("bias", [c]);
            Box::new(move |t, p| {
                let y = t.causal_conv(p[x], p[f], Some(p[bias]), dilation, stride)?;
                weigh(t, y, wseed)
            })
        }
    };
    (store, case)
}
