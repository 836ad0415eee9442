//! Central finite-difference verification of analytic gradients.
//!
//! Used by unit tests and the acceptance suite. The loss closure must
//! recompute the full forward pass on every call; when its second argument
//! is true it must also run backward so parameter gradients accumulate.

use crate::nn::{zero_grads, Module};
use crate::rng::RandomSource;

#[derive(Debug)]
pub struct GradCheckReport {
    pub coords_checked: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

/// Symmetric relative error with an absolute floor for near-zero pairs.
///
/// Central differences on an O(1) loss carry ~1e-8 of roundoff noise, so
/// differences below 1e-7 are treated as agreement regardless of magnitude.
pub fn rel_err(a: f64, n: f64) -> f64 {
    let diff = (a - n).abs();
    if diff < 1e-7 {
        return 0.0;
    }
    diff / (a.abs() + n.abs()).max(1e-6)
}

/// Compare analytic grads against central differences.
///
/// Checks up to `coords_per_tensor` randomly chosen coordinates in every
/// non-buffer parameter tensor (all coordinates when the tensor is small or
/// `coords_per_tensor` is `usize::MAX`).
pub fn check_grads<M, L>(
    model: &mut M,
    mut loss_fn: L,
    coords_per_tensor: usize,
    eps: f64,
    rng: &mut RandomSource,
) -> GradCheckReport
where
    M: Module,
    L: FnMut(&mut M, bool) -> f64,
{
    zero_grads(model);
    loss_fn(model, true);

    let mut analytic: Vec<(String, ndarray::ArrayD<f64>)> = Vec::new();
    model.visit(&mut |name, p| {
        if !p.buffer {
            analytic.push((name.to_string(), p.grad_or_zeros()));
        }
    });

    let mut report = GradCheckReport {
        coords_checked: 0,
        max_rel_err: 0.0,
        worst: String::new(),
    };

    for (name, grad) in &analytic {
        let len = grad.len();
        if len == 0 {
            continue;
        }
        let coords: Vec<usize> = if coords_per_tensor == usize::MAX || len <= coords_per_tensor {
            (0..len).collect()
        } else {
            (0..coords_per_tensor).map(|_| rng.below(len)).collect()
        };
        for &flat in &coords {
            let nudge = |m: &mut M, delta: f64| {
                m.visit_mut(&mut |n, p| {
                    if n == name {
                        let slice = p.value.as_slice_mut().expect("contiguous param");
                        slice[flat] += delta;
                    }
                });
            };
            nudge(model, eps);
            let lp = loss_fn(model, false);
            nudge(model, -2.0 * eps);
            let lm = loss_fn(model, false);
            nudge(model, eps);
            let numeric = (lp - lm) / (2.0 * eps);
            let a = grad.as_slice().expect("contiguous grad")[flat];
            let err = rel_err(a, numeric);
            report.coords_checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = format!("{name}[{flat}]: analytic={a:.6e} numeric={numeric:.6e}");
            }
        }
    }
    report
}
