//! Minimal CPU neural-network toolkit in `f64`.
//!
//! Layers own their parameters and expose explicit `forward`/`backward`
//! pairs; there is no tape. Containers compose caches by hand, which keeps
//! the whole training path deterministic and easy to check against finite
//! differences.

pub mod adam;
pub mod attention;
pub mod conv;
pub mod embedding;
pub mod gradcheck;
pub mod init;
pub mod linear;
pub mod lstm;
pub mod norm;

use ndarray::{ArrayD, IxDyn};

pub use adam::Adam;

/// Train/eval switch; batch norm is the only layer that cares.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One named tensor of a model: value, lazily allocated gradient, and a
/// buffer flag for running statistics that persist but are never optimized.
#[derive(Clone, Debug)]
pub struct Param {
    pub value: ArrayD<f64>,
    pub grad: Option<ArrayD<f64>>,
    pub buffer: bool,
}

impl Param {
    pub fn new(value: ArrayD<f64>) -> Self {
        Self { value, grad: None, buffer: false }
    }

    pub fn buffer(value: ArrayD<f64>) -> Self {
        Self { value, grad: None, buffer: true }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    /// Accumulate a gradient contribution (allocating on first use).
    pub fn add_grad(&mut self, g: &ArrayD<f64>) {
        debug_assert_eq!(g.shape(), self.value.shape());
        match &mut self.grad {
            Some(acc) => *acc += g,
            None => self.grad = Some(g.clone()),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn grad_or_zeros(&self) -> ArrayD<f64> {
        self.grad
            .clone()
            .unwrap_or_else(|| ArrayD::zeros(IxDyn(self.value.shape())))
    }
}

/// Visitor access to every named parameter of a model.
pub trait Module {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param));
}

/// Number of learnable scalars (buffers excluded).
pub fn param_count<M: Module + ?Sized>(m: &M) -> usize {
    let mut n = 0;
    m.visit(&mut |_, p| {
        if !p.buffer {
            n += p.len();
        }
    });
    n
}

pub fn zero_grads<M: Module + ?Sized>(m: &mut M) {
    m.visit_mut(&mut |_, p| p.zero_grad());
}

/// Global L2 norm over the gradients of non-frozen, non-buffer params.
pub fn grad_norm<M: Module + ?Sized>(m: &M, frozen: &[String]) -> f64 {
    let mut acc = 0.0;
    m.visit(&mut |name, p| {
        if p.buffer || is_frozen(name, frozen) {
            return;
        }
        if let Some(g) = &p.grad {
            acc += g.iter().map(|v| v * v).sum::<f64>();
        }
    });
    acc.sqrt()
}

/// Scale all gradients so the global norm is at most `max_norm`.
pub fn clip_grad_norm<M: Module + ?Sized>(m: &mut M, frozen: &[String], max_norm: f64) -> f64 {
    let norm = grad_norm(m, frozen);
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        m.visit_mut(&mut |name, p| {
            if p.buffer || is_frozen(name, frozen) {
                return;
            }
            if let Some(g) = &mut p.grad {
                g.mapv_inplace(|v| v * scale);
            }
        });
    }
    norm
}

pub fn is_frozen(name: &str, frozen_prefixes: &[String]) -> bool {
    frozen_prefixes.iter().any(|p| name.starts_with(p.as_str()))
}

/// Snapshot all values (including buffers) by name.
pub fn export_params<M: Module + ?Sized>(m: &M) -> Vec<(String, ArrayD<f64>)> {
    let mut out = Vec::new();
    m.visit(&mut |name, p| out.push((name.to_string(), p.value.clone())));
    out
}

/// Load values by name; shapes must match. Returns names that were absent.
pub fn import_params<M: Module + ?Sized>(
    m: &mut M,
    values: &std::collections::HashMap<String, ArrayD<f64>>,
) -> Vec<String> {
    let mut missing = Vec::new();
    m.visit_mut(&mut |name, p| match values.get(name) {
        Some(v) => {
            assert_eq!(
                v.shape(),
                p.value.shape(),
                "shape mismatch loading {name}"
            );
            p.value.assign(v);
        }
        None => missing.push(name.to_string()),
    });
    missing
}

/// Bit-level checksum of parameter values matching a name prefix.
pub fn checksum<M: Module + ?Sized>(m: &M, prefix: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64; // FNV offset basis
    m.visit(&mut |name, p| {
        if !name.starts_with(prefix) {
            return;
        }
        for &v in p.value.iter() {
            h ^= v.to_bits();
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    });
    h
}

// Small math helpers shared across layers.

pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn logsumexp2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY && b == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

pub fn logsumexp3(a: f64, b: f64, c: f64) -> f64 {
    let m = a.max(b).max(c);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + ((a - m).exp() + (b - m).exp() + (c - m).exp()).ln()
}

/// Row-wise softmax in place on a (rows, cols) slice.
pub fn softmax_rows(x: &mut ndarray::Array2<f64>) {
    for mut row in x.rows_mut() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
}

/// Row-wise log-softmax of a (rows, cols) array.
pub fn log_softmax_rows(x: &ndarray::Array2<f64>) -> ndarray::Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z = row.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
        for v in row.iter_mut() {
            *v -= z;
        }
    }
    out
}
