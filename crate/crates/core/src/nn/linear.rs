//! Fully connected layer.

use ndarray::{Array1, Array2, ArrayD, Ix1, Ix2};

use crate::nn::{init, Module, Param};
use crate::rng::RandomSource;

/// `y = x W^T + b` on row-major batches (rows are samples/positions).
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Param, // (out, in)
    pub bias: Param,   // (out,)
    pub in_dim: usize,
    pub out_dim: usize,
}

/// Init family for the weight matrix.
#[derive(Clone, Copy, Debug)]
pub enum LinearInit {
    HeRelu,
    Xavier,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, init_kind: LinearInit, rng: &mut RandomSource) -> Self {
        let weight = match init_kind {
            LinearInit::HeRelu => init::he_normal(&[out_dim, in_dim], in_dim, rng),
            LinearInit::Xavier => init::xavier_uniform(&[out_dim, in_dim], in_dim, out_dim, rng),
        };
        Self {
            weight: Param::new(weight),
            bias: Param::new(ArrayD::zeros(ndarray::IxDyn(&[out_dim]))),
            in_dim,
            out_dim,
        }
    }

    fn w(&self) -> ndarray::ArrayView2<'_, f64> {
        self.weight.value.view().into_dimensionality::<Ix2>().unwrap()
    }

    fn b(&self) -> ndarray::ArrayView1<'_, f64> {
        self.bias.value.view().into_dimensionality::<Ix1>().unwrap()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        debug_assert_eq!(x.ncols(), self.in_dim);
        let mut y = x.dot(&self.w().t());
        y += &self.b();
        y
    }

    /// Accumulates parameter grads; returns grad w.r.t. the input.
    pub fn backward(&mut self, x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
        let dw = dy.t().dot(x).into_dyn();
        let db: Array1<f64> = dy.sum_axis(ndarray::Axis(0));
        self.weight.add_grad(&dw);
        self.bias.add_grad(&db.into_dyn());
        dy.dot(&self.w())
    }
}

impl Module for Linear {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        f("weight", &self.weight);
        f("bias", &self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("weight", &mut self.weight);
        f("bias", &mut self.bias);
    }
}
