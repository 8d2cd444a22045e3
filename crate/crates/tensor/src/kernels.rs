//! Tape-free numeric kernels. The tape reuses these for its forward pass and
//! for the pieces of the backward pass that have the same structure.

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// `c = a·b + beta·c` where `a` is logically `m×k` and `b` is `k×n`.
/// A transposed flag means the operand is stored as its transpose.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_trans {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_trans {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the slices have exactly the extents described by the strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a.data(), false, b.data(), false, 0.0, &mut out);
    Ok(Tensor::from_parts_unchecked(vec![m, n], out))
}

/// Splits `shape` around `axis` into (outer, extent, inner) element counts.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Numerically stable softmax along `axis`.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.rank() {
        return Err(TensorError::Axis {
            op: "softmax",
            axis,
            rank: x.rank(),
        });
    }
    let (outer, len, inner) = split_axis(x.shape(), axis);
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let max = (0..len)
                .map(|j| src[base + j * inner])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in 0..len {
                let e = (src[base + j * inner] - max).exp();
                out[base + j * inner] = e;
                total += e;
            }
            for j in 0..len {
                out[base + j * inner] /= total;
            }
        }
    }
    Ok(Tensor::from_parts_unchecked(x.shape().to_vec(), out))
}

/// Elementwise `max(x, 0)`.
pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub(crate) fn permute(x: &Tensor, perm: &[usize]) -> Result<Tensor> {
    let rank = x.rank();
    let mut seen = vec![false; rank];
    if perm.len() != rank
        || perm
            .iter()
            .any(|&p| p >= rank || std::mem::replace(&mut seen[p], true))
    {
        return Err(TensorError::param(
            "permute",
            format!("{perm:?} is not a permutation of rank {rank}"),
        ));
    }
    let in_shape = x.shape();
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    }
    // Stride in the source for each output axis.
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let src = x.data();
    let mut out = Vec::with_capacity(src.len());
    let mut index = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..src.len() {
        out.push(src[offset]);
        // Odometer increment over the output index.
        for ax in (0..rank).rev() {
            index[ax] += 1;
            offset += strides[ax];
            if index[ax] < out_shape[ax] {
                break;
            }
            offset -= strides[ax] * out_shape[ax];
            index[ax] = 0;
        }
    }
    Ok(Tensor::from_parts_unchecked(out_shape, out))
}

pub(crate) fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Geometry of a strided dilated causal convolution over the time axis of a
/// `[batch, time, nodes, channels]` tensor with one filter per channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub time: usize,
    pub nodes: usize,
    pub channels: usize,
    pub taps: usize,
    pub dilation: usize,
    pub stride: usize,
}

impl ConvGeometry {
    pub fn out_time(&self) -> usize {
        self.time.div_ceil(self.stride)
    }

    /// Input time index read by output step `u`. Outputs are aligned to the
    /// end so the final input step is always represented.
    pub fn source_time(&self, u: usize) -> usize {
        self.time - 1 - (self.out_time() - 1 - u) * self.stride
    }
}

pub(crate) fn conv_forward(
    g: &ConvGeometry,
    x: &[f64],
    filter: &[f64],
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let t_out = g.out_time();
    let (n, c) = (g.nodes, g.channels);
    let mut out = vec![0.0; g.batch * t_out * n * c];
    for b in 0..g.batch {
        for u in 0..t_out {
            let t = g.source_time(u);
            let dst = &mut out[(b * t_out + u) * n * c..(b * t_out + u + 1) * n * c];
            if let Some(bias) = bias {
                for row in dst.chunks_mut(c) {
                    row.copy_from_slice(bias);
                }
            }
            for i in 0..g.taps {
                let Some(ts) = t.checked_sub(g.dilation * i) else {
                    break;
                };
                let src = &x[(b * g.time + ts) * n * c..(b * g.time + ts + 1) * n * c];
                for (d_row, s_row) in dst.chunks_mut(c).zip(src.chunks(c)) {
                    for ch in 0..c {
                        d_row[ch] += filter[ch * g.taps + i] * s_row[ch];
                    }
                }
            }
        }
    }
    out
}

/// Returns (grad_x, grad_filter, grad_bias) for an upstream gradient `gy`.
pub(crate) fn conv_backward(
    g: &ConvGeometry,
    x: &[f64],
    filter: &[f64],
    gy: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let t_out = g.out_time();
    let (n, c) = (g.nodes, g.channels);
    let mut gx = vec![0.0; x.len()];
    let mut gf = vec![0.0; filter.len()];
    let mut gb = vec![0.0; c];
    for b in 0..g.batch {
        for u in 0..t_out {
            let t = g.source_time(u);
            let up = &gy[(b * t_out + u) * n * c..(b * t_out + u + 1) * n * c];
            for row in up.chunks(c) {
                for ch in 0..c {
                    gb[ch] += row[ch];
                }
            }
            for i in 0..g.taps {
                let Some(ts) = t.checked_sub(g.dilation * i) else {
                    break;
                };
                let base = (b * g.time + ts) * n * c;
                for node in 0..n {
                    for ch in 0..c {
                        let gv = up[node * c + ch];
                        let k = base + node * c + ch;
                        gx[k] += filter[ch * g.taps + i] * gv;
                        gf[ch * g.taps + i] += x[k] * gv;
                    }
                }
            }
        }
    }
    (gx, gf, gb)
}

/// `y_t = Σ_i f_i · x_{t − d·i}` with samples before the start read as zero.
/// The output has the same length as the input.
pub fn dilated_causal_conv1d(x: &Tensor, filter: &Tensor, dilation: usize) -> Result<Tensor> {
    if dilation == 0 {
        return Err(TensorError::param(
            "dilated_causal_conv1d",
            "dilation must be at least 1",
        ));
    }
    if x.rank() != 1 || filter.rank() != 1 {
        return Err(TensorError::ShapeMismatch {
            op: "dilated_causal_conv1d",
            lhs: x.shape().to_vec(),
            rhs: filter.shape().to_vec(),
        });
    }
    let g = ConvGeometry {
        batch: 1,
        time: x.numel(),
        nodes: 1,
        channels: 1,
        taps: filter.numel(),
        dilation,
        stride: 1,
    };
    let out = conv_forward(&g, x.data(), filter.data(), None);
    Tensor::new([x.numel()], out)
}
