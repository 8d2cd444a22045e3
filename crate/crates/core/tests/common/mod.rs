#![allow(dead_code)]

use hop_tensor::{GradCheckOptions, TensorError};

/// Turns a crate error into the tensor error type the gradient checker
/// expects from its closure.
pub fn lift<T>(r: hop_core::Result<T>) -> hop_tensor::Result<T> {
    r.map_err(|e| match e {
        hop_core::HopError::Tensor(t) => t,
        other => TensorError::Param {
            op: "test",
            msg: other.to_string(),
        },
    })
}

pub fn check_opts() -> GradCheckOptions {
    GradCheckOptions {
        eps: 1e-6,
        ..GradCheckOptions::default()
    }
}

/// Small deterministic pseudo-random values for hand-built fixtures.
pub fn lcg_values(seed: u64, n: usize, scale: f64) -> Vec<f64> {
    let mut s = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1);
    (0..n)
        .map(|_| {
            s = s
                .wrapping_mul(6_364_136_223_846_793_005)
                .wrapping_add(1_442_695_040_888_963_407);
            ((s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0) * scale
        })
        .collect()
}
