//! Token embedding and learned positional table.

use ndarray::{Array2, ArrayD};

use crate::nn::{init, Module, Param};
use crate::rng::RandomSource;

#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: Param, // (vocab, dim)
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(vocab: usize, dim: usize, rng: &mut RandomSource) -> Self {
        Self {
            table: Param::new(init::embedding_normal(&[vocab, dim], rng)),
            vocab,
            dim,
        }
    }

    pub fn forward(&self, ids: &[usize]) -> Array2<f64> {
        let mut out = Array2::<f64>::zeros((ids.len(), self.dim));
        for (i, &id) in ids.iter().enumerate() {
            debug_assert!(id < self.vocab, "token id {id} out of vocab {0}", self.vocab);
            for j in 0..self.dim {
                out[[i, j]] = self.table.value[[id, j]];
            }
        }
        out
    }

    pub fn backward(&mut self, ids: &[usize], dy: &Array2<f64>) {
        let mut grad = ArrayD::<f64>::zeros(self.table.value.raw_dim());
        for (i, &id) in ids.iter().enumerate() {
            for j in 0..self.dim {
                grad[[id, j]] += dy[[i, j]];
            }
        }
        self.table.add_grad(&grad);
    }
}

impl Module for Embedding {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        f("table", &self.table);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("table", &mut self.table);
    }
}

/// Learned positional encoding added to the first `T` rows.
#[derive(Clone, Debug)]
pub struct PositionalEncoding {
    pub table: Param, // (max_len, dim)
    pub max_len: usize,
    pub dim: usize,
}

impl PositionalEncoding {
    pub fn new(max_len: usize, dim: usize, rng: &mut RandomSource) -> Self {
        Self {
            table: Param::new(init::embedding_normal(&[max_len, dim], rng)),
            max_len,
            dim,
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let t = x.nrows();
        assert!(
            t <= self.max_len,
            "sequence length {t} exceeds positional table {0}",
            self.max_len
        );
        let mut out = x.clone();
        for i in 0..t {
            for j in 0..self.dim {
                out[[i, j]] += self.table.value[[i, j]];
            }
        }
        out
    }

    pub fn backward(&mut self, t: usize, dy: &Array2<f64>) {
        let mut grad = ArrayD::<f64>::zeros(self.table.value.raw_dim());
        for i in 0..t {
            for j in 0..self.dim {
                grad[[i, j]] += dy[[i, j]];
            }
        }
        self.table.add_grad(&grad);
    }
}

impl Module for PositionalEncoding {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        f("table", &self.table);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("table", &mut self.table);
    }
}
