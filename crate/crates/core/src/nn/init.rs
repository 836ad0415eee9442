//! Seeded weight initialization.

use ndarray::{ArrayD, IxDyn};

use crate::rng::RandomSource;

/// He (Kaiming) normal init for ReLU-followed convolutions and linears.
pub fn he_normal(shape: &[usize], fan_in: usize, rng: &mut RandomSource) -> ArrayD<f64> {
    let std = (2.0 / fan_in as f64).sqrt();
    ArrayD::from_shape_fn(IxDyn(shape), |_| rng.normal() * std)
}

/// Xavier/Glorot uniform init for attention and output projections.
pub fn xavier_uniform(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut RandomSource,
) -> ArrayD<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    ArrayD::from_shape_fn(IxDyn(shape), |_| rng.uniform_in(-limit, limit))
}

/// Uniform(-1/sqrt(h), 1/sqrt(h)) used for recurrent weights.
pub fn lstm_uniform(shape: &[usize], hidden: usize, rng: &mut RandomSource) -> ArrayD<f64> {
    let k = 1.0 / (hidden as f64).sqrt();
    ArrayD::from_shape_fn(IxDyn(shape), |_| rng.uniform_in(-k, k))
}

/// N(0, 0.02) for embeddings and positional tables.
pub fn embedding_normal(shape: &[usize], rng: &mut RandomSource) -> ArrayD<f64> {
    ArrayD::from_shape_fn(IxDyn(shape), |_| rng.normal() * 0.02)
}
