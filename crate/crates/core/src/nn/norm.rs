//! Batch normalization (2D) and layer normalization.

use ndarray::{Array1, Array2, Array4, ArrayD, IxDyn};

use crate::nn::{Mode, Module, Param};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch norm over `(B, C, H, W)`.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param, // buffer
    pub running_var: Param,  // buffer
    pub channels: usize,
}

/// Statistics cached by a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct BnStats {
    pub mean: Array1<f64>,
    pub inv_std: Array1<f64>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(ArrayD::ones(IxDyn(&[channels]))),
            beta: Param::new(ArrayD::zeros(IxDyn(&[channels]))),
            running_mean: Param::buffer(ArrayD::zeros(IxDyn(&[channels]))),
            running_var: Param::buffer(ArrayD::ones(IxDyn(&[channels]))),
            channels,
        }
    }

    /// Training mode computes batch statistics and updates the running
    /// buffers; eval mode applies the stored statistics.
    pub fn forward(&mut self, x: &Array4<f64>, mode: Mode) -> (Array4<f64>, Option<BnStats>) {
        let (b, c, h, w) = x.dim();
        debug_assert_eq!(c, self.channels);
        let n = (b * h * w) as f64;
        match mode {
            Mode::Train => {
                let mut mean = Array1::<f64>::zeros(c);
                let mut var = Array1::<f64>::zeros(c);
                for ci in 0..c {
                    let view = x.slice(ndarray::s![.., ci, .., ..]);
                    let m = view.sum() / n;
                    let v = view.iter().map(|&xv| (xv - m) * (xv - m)).sum::<f64>() / n;
                    mean[ci] = m;
                    var[ci] = v;
                }
                let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                let mut y = x.clone();
                for ci in 0..c {
                    let g = self.gamma.value[ci];
                    let be = self.beta.value[ci];
                    let m = mean[ci];
                    let is = inv_std[ci];
                    y.slice_mut(ndarray::s![.., ci, .., ..])
                        .mapv_inplace(|v| (v - m) * is * g + be);
                }
                // unbiased variance goes into the running buffer
                let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
                for ci in 0..c {
                    self.running_mean.value[ci] =
                        (1.0 - BN_MOMENTUM) * self.running_mean.value[ci] + BN_MOMENTUM * mean[ci];
                    self.running_var.value[ci] = (1.0 - BN_MOMENTUM) * self.running_var.value[ci]
                        + BN_MOMENTUM * var[ci] * unbias;
                }
                (y, Some(BnStats { mean, inv_std }))
            }
            Mode::Eval => {
                let mut y = x.clone();
                for ci in 0..c {
                    let g = self.gamma.value[ci];
                    let be = self.beta.value[ci];
                    let m = self.running_mean.value[ci];
                    let is = 1.0 / (self.running_var.value[ci] + BN_EPS).sqrt();
                    y.slice_mut(ndarray::s![.., ci, .., ..])
                        .mapv_inplace(|v| (v - m) * is * g + be);
                }
                (y, None)
            }
        }
    }

    /// Backward through a training-mode forward; needs the cached stats.
    pub fn backward(&mut self, x: &Array4<f64>, stats: &BnStats, dy: &Array4<f64>) -> Array4<f64> {
        let (b, c, h, w) = x.dim();
        let n = (b * h * w) as f64;
        let mut dgamma = Array1::<f64>::zeros(c);
        let mut dbeta = Array1::<f64>::zeros(c);
        let mut dx = Array4::<f64>::zeros(x.dim());
        for ci in 0..c {
            let m = stats.mean[ci];
            let is = stats.inv_std[ci];
            let g = self.gamma.value[ci];
            let xv = x.slice(ndarray::s![.., ci, .., ..]);
            let dyv = dy.slice(ndarray::s![.., ci, .., ..]);
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            ndarray::Zip::from(&xv).and(&dyv).for_each(|&xi, &d| {
                let xhat = (xi - m) * is;
                sum_dy += d;
                sum_dy_xhat += d * xhat;
            });
            dgamma[ci] = sum_dy_xhat;
            dbeta[ci] = sum_dy;
            let mut dxv = dx.slice_mut(ndarray::s![.., ci, .., ..]);
            ndarray::Zip::from(&mut dxv)
                .and(&xv)
                .and(&dyv)
                .for_each(|o, &xi, &d| {
                    let xhat = (xi - m) * is;
                    *o = g * is * (d - sum_dy / n - xhat * sum_dy_xhat / n);
                });
        }
        self.gamma.add_grad(&dgamma.into_dyn());
        self.beta.add_grad(&dbeta.into_dyn());
        dx
    }
}

impl Module for BatchNorm2d {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        f("gamma", &self.gamma);
        f("beta", &self.beta);
        f("running_mean", &self.running_mean);
        f("running_var", &self.running_var);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("gamma", &mut self.gamma);
        f("beta", &mut self.beta);
        f("running_mean", &mut self.running_mean);
        f("running_var", &mut self.running_var);
    }
}

const LN_EPS: f64 = 1e-5;

/// Per-row layer norm over the last dimension of `(rows, d)`.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Param::new(ArrayD::ones(IxDyn(&[dim]))),
            beta: Param::new(ArrayD::zeros(IxDyn(&[dim]))),
            dim,
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let d = self.dim as f64;
        let mut y = x.clone();
        for mut row in y.rows_mut() {
            let m = row.sum() / d;
            let v = row.iter().map(|&xv| (xv - m) * (xv - m)).sum::<f64>() / d;
            let is = 1.0 / (v + LN_EPS).sqrt();
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (*cell - m) * is * self.gamma.value[j] + self.beta.value[j];
            }
        }
        y
    }

    pub fn backward(&mut self, x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
        let d = self.dim as f64;
        let mut dgamma = Array1::<f64>::zeros(self.dim);
        let mut dbeta = Array1::<f64>::zeros(self.dim);
        let mut dx = Array2::<f64>::zeros(x.dim());
        for (i, row) in x.rows().into_iter().enumerate() {
            let m = row.sum() / d;
            let v = row.iter().map(|&xv| (xv - m) * (xv - m)).sum::<f64>() / d;
            let is = 1.0 / (v + LN_EPS).sqrt();
            let dyr = dy.row(i);
            let mut sum_dyg = 0.0;
            let mut sum_dyg_xhat = 0.0;
            for j in 0..self.dim {
                let xhat = (row[j] - m) * is;
                let dg = dyr[j] * self.gamma.value[j];
                sum_dyg += dg;
                sum_dyg_xhat += dg * xhat;
                dgamma[j] += dyr[j] * xhat;
                dbeta[j] += dyr[j];
            }
            for j in 0..self.dim {
                let xhat = (row[j] - m) * is;
                let dg = dyr[j] * self.gamma.value[j];
                dx[[i, j]] = is * (dg - sum_dyg / d - xhat * sum_dyg_xhat / d);
            }
        }
        self.gamma.add_grad(&dgamma.into_dyn());
        self.beta.add_grad(&dbeta.into_dyn());
        dx
    }
}

impl Module for LayerNorm {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        f("gamma", &self.gamma);
        f("beta", &self.beta);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("gamma", &mut self.gamma);
        f("beta", &mut self.beta);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;
    use crate::rng::RandomSource;

    #[test]
    fn bn_train_normalizes() {
        let mut rng = RandomSource::from_seed(9);
        let mut bn = BatchNorm2d::new(3);
        let x = Array4::from_shape_fn((4, 3, 5, 6), |_| rng.normal() * 3.0 + 1.0);
        let (y, _) = bn.forward(&x, Mode::Train);
        for ci in 0..3 {
            let view = y.slice(ndarray::s![.., ci, .., ..]);
            let n = view.len() as f64;
            let m = view.sum() / n;
            let v = view.iter().map(|&yv| (yv - m) * (yv - m)).sum::<f64>() / n;
            assert!(m.abs() < 1e-10);
            assert!((v - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn bn_eval_uses_running_stats() {
        let mut bn = BatchNorm2d::new(1);
        bn.running_mean.value[0] = 2.0;
        bn.running_var.value[0] = 4.0;
        let x = Array4::from_elem((1, 1, 1, 2), 4.0);
        let (y, stats) = bn.forward(&x, Mode::Eval);
        assert!(stats.is_none());
        // (4 - 2) / sqrt(4 + eps) ~ 1.0
        assert!((y[[0, 0, 0, 0]] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn bn_gradcheck() {
        let mut rng = RandomSource::from_seed(10);
        let x = Array4::from_shape_fn((3, 2, 4, 4), |_| rng.normal());
        let mut bn = BatchNorm2d::new(2);
        // target keeps loss non-degenerate under normalization
        let t = Array4::from_shape_fn((3, 2, 4, 4), |_| rng.normal());
        let report = gradcheck::check_grads(
            &mut bn,
            |m, with_grad| {
                // running stats must not drift between FD evaluations
                let saved_mean = m.running_mean.value.clone();
                let saved_var = m.running_var.value.clone();
                let (y, stats) = m.forward(&x, Mode::Train);
                let loss = y
                    .iter()
                    .zip(t.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
                if with_grad {
                    let dy = ndarray::Zip::from(&y).and(&t).map_collect(|a, b| 2.0 * (a - b));
                    m.backward(&x, stats.as_ref().unwrap(), &dy);
                }
                m.running_mean.value = saved_mean;
                m.running_var.value = saved_var;
                loss
            },
            usize::MAX,
            1e-6,
            &mut RandomSource::from_seed(11),
        );
        assert!(report.max_rel_err < 1e-6, "{report:?}");
    }

    #[test]
    fn ln_gradcheck() {
        let mut rng = RandomSource::from_seed(12);
        let x = Array2::from_shape_fn((5, 6), |_| rng.normal());
        let t = Array2::from_shape_fn((5, 6), |_| rng.normal());
        let mut ln = LayerNorm::new(6);
        let report = gradcheck::check_grads(
            &mut ln,
            |m, with_grad| {
                let y = m.forward(&x);
                let loss = y
                    .iter()
                    .zip(t.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
                if with_grad {
                    let dy = ndarray::Zip::from(&y).and(&t).map_collect(|a, b| 2.0 * (a - b));
                    m.backward(&x, &dy);
                }
                loss
            },
            usize::MAX,
            1e-6,
            &mut RandomSource::from_seed(13),
        );
        assert!(report.max_rel_err < 1e-6, "{report:?}");
    }
}
