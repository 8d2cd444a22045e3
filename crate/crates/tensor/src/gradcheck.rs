//! Central finite-difference verification of tape gradients.

use crate::error::Result;
use crate::params::{Bound, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub eps: f64,
    /// A coordinate whose forward and backward one-sided slopes differ by
    /// more than `kink_tol · max(1, |central|)` sits on a non-differentiable
    /// point and is excluded.
    pub kink_tol: f64,
    /// Check at most this many evenly spaced coordinates per tensor.
    pub max_coords_per_tensor: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            kink_tol: 1e-3,
            max_coords_per_tensor: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    /// max over checked coordinates of |analytic − central| / max(1, |central|)
    pub max_rel_error: f64,
    pub checked: usize,
    /// (parameter name, flat coordinate) pairs skipped as kinks.
    pub excluded: Vec<(String, usize)>,
    pub worst: Option<(String, usize)>,
}

/// Checks the gradient of a scalar function of one tensor.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut store = ParamStore::new();
    let id = store.add("x", x.clone())?;
    let opts = GradCheckOptions {
        eps,
        ..GradCheckOptions::default()
    };
    grad_check_params(&store, |tape, bound| f(tape, bound[id]), &opts)
}

/// Checks the gradient of a scalar function with respect to every parameter
/// in `store`.
pub fn grad_check_params<F>(
    store: &ParamStore,
    f: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let loss = f(&mut tape, &bound)?;
    tape.backward(loss)?;
    let analytic = bound.grads(&tape);

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let b = s.bind_frozen(&mut t);
        let out = f(&mut t, &b)?;
        t.value(out).item()
    };
    let f0 = eval(store)?;

    let mut report = GradCheckReport::default();
    let mut probe = store.clone();
    for (id, name, tensor) in store.iter() {
        let n = tensor.numel();
        let stride = opts
            .max_coords_per_tensor
            .map_or(1, |m| n.div_ceil(m.max(1)));
        for k in (0..n).step_by(stride) {
            let orig = tensor.data()[k];
            probe.get_mut(id).data_mut()[k] = orig + opts.eps;
            let plus = eval(&probe)?;
            probe.get_mut(id).data_mut()[k] = orig - opts.eps;
            let minus = eval(&probe)?;
            probe.get_mut(id).data_mut()[k] = orig;

            let central = (plus - minus) / (2.0 * opts.eps);
            let forward = (plus - f0) / opts.eps;
            let backward = (f0 - minus) / opts.eps;
            let scale = central.abs().max(1.0);
            if (forward - backward).abs() > opts.kink_tol * scale {
                report.excluded.push((name.to_string(), k));
                continue;
            }
            let err = (analytic[id.index()].data()[k] - central).abs() / scale;
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((name.to_string(), k));
            }
        }
    }
    Ok(report)
}
