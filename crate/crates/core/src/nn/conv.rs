//! 2D convolution (stride 1, same padding, no bias) and 2x2 max pooling.
//!
//! Convolution lowers to a single GEMM over the whole batch via im2col.
//! Backward re-materializes the column matrix from the cached layer input
//! instead of holding it, which keeps activation memory linear in the
//! network depth.

use ndarray::{Array2, Array4};

use crate::nn::{init, Module, Param};
use crate::rng::RandomSource;

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Param, // (out_ch, in_ch, k, k)
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
}

impl Conv2d {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, rng: &mut RandomSource) -> Self {
        assert!(kernel % 2 == 1, "same padding needs odd kernels");
        let fan_in = in_ch * kernel * kernel;
        Self {
            weight: Param::new(init::he_normal(&[out_ch, in_ch, kernel, kernel], fan_in, rng)),
            in_ch,
            out_ch,
            kernel,
        }
    }

    fn weight2d(&self) -> Array2<f64> {
        let k = self.kernel;
        self.weight
            .value
            .view()
            .into_shape_with_order((self.out_ch, self.in_ch * k * k))
            .unwrap()
            .to_owned()
    }

    /// Lower `(B, C, H, W)` into columns `(C*k*k, B*H*W)`.
    fn im2col(&self, x: &Array4<f64>) -> Array2<f64> {
        let (b, c, h, w) = x.dim();
        debug_assert_eq!(c, self.in_ch);
        let k = self.kernel;
        let pad = k as isize / 2;
        let hw = h * w;
        let mut cols = Array2::<f64>::zeros((c * k * k, b * hw));
        for bi in 0..b {
            for ci in 0..c {
                for ky in 0..k {
                    for kx in 0..k {
                        let row = (ci * k + ky) * k + kx;
                        let dy = ky as isize - pad;
                        let dx = kx as isize - pad;
                        for y in 0..h {
                            let sy = y as isize + dy;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let sy = sy as usize;
                            let x_lo = (-dx).max(0) as usize;
                            let x_hi = ((w as isize - dx).min(w as isize)).max(0) as usize;
                            if x_lo >= x_hi {
                                continue;
                            }
                            let src = x.slice(ndarray::s![
                                bi,
                                ci,
                                sy,
                                (x_lo as isize + dx) as usize..(x_hi as isize + dx) as usize
                            ]);
                            let base = bi * hw + y * w;
                            let mut dst =
                                cols.slice_mut(ndarray::s![row, base + x_lo..base + x_hi]);
                            dst.assign(&src);
                        }
                    }
                }
            }
        }
        cols
    }

    pub fn forward(&self, x: &Array4<f64>) -> Array4<f64> {
        let (b, _, h, w) = x.dim();
        let cols = self.im2col(x);
        let y2d = self.weight2d().dot(&cols); // (out_ch, B*H*W)
        let mut out = Array4::<f64>::zeros((b, self.out_ch, h, w));
        let hw = h * w;
        for bi in 0..b {
            for co in 0..self.out_ch {
                let src = y2d.slice(ndarray::s![co, bi * hw..(bi + 1) * hw]);
                let mut dst = out.slice_mut(ndarray::s![bi, co, .., ..]);
                dst.assign(&src.into_shape_with_order((h, w)).unwrap());
            }
        }
        out
    }

    /// Accumulates the weight gradient; returns grad w.r.t. the input.
    pub fn backward(&mut self, x: &Array4<f64>, dy: &Array4<f64>) -> Array4<f64> {
        let (b, _, h, w) = x.dim();
        let k = self.kernel;
        let pad = k as isize / 2;
        let hw = h * w;

        let mut dy2d = Array2::<f64>::zeros((self.out_ch, b * hw));
        for bi in 0..b {
            for co in 0..self.out_ch {
                let src = dy.slice(ndarray::s![bi, co, .., ..]);
                let mut dst = dy2d.slice_mut(ndarray::s![co, bi * hw..(bi + 1) * hw]);
                dst.assign(&src.into_shape_with_order(hw).unwrap());
            }
        }

        let cols = self.im2col(x);
        let dw = dy2d.dot(&cols.t()); // (out_ch, in_ch*k*k)
        self.weight.add_grad(
            &dw.into_shape_with_order((self.out_ch, self.in_ch, k, k))
                .unwrap()
                .into_dyn(),
        );

        let dcols = self.weight2d().t().dot(&dy2d); // (in_ch*k*k, B*H*W)
        let mut dx = Array4::<f64>::zeros(x.dim());
        for bi in 0..b {
            for ci in 0..self.in_ch {
                for ky in 0..k {
                    for kx in 0..k {
                        let row = (ci * k + ky) * k + kx;
                        let dyo = ky as isize - pad;
                        let dxo = kx as isize - pad;
                        for y in 0..h {
                            let sy = y as isize + dyo;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let sy = sy as usize;
                            let x_lo = (-dxo).max(0) as usize;
                            let x_hi = ((w as isize - dxo).min(w as isize)).max(0) as usize;
                            if x_lo >= x_hi {
                                continue;
                            }
                            let base = bi * hw + y * w;
                            let src = dcols.slice(ndarray::s![row, base + x_lo..base + x_hi]);
                            let mut dst = dx.slice_mut(ndarray::s![
                                bi,
                                ci,
                                sy,
                                (x_lo as isize + dxo) as usize..(x_hi as isize + dxo) as usize
                            ]);
                            dst += &src;
                        }
                    }
                }
            }
        }
        dx
    }
}

impl Module for Conv2d {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        f("weight", &self.weight);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("weight", &mut self.weight);
    }
}

/// 2x2 max pooling with stride 2 and no padding (odd trailing rows/columns drop).
#[derive(Clone, Copy, Debug, Default)]
pub struct MaxPool2;

impl MaxPool2 {
    pub fn out_shape(h: usize, w: usize) -> (usize, usize) {
        (h / 2, w / 2)
    }

    pub fn forward(&self, x: &Array4<f64>) -> Array4<f64> {
        let (b, c, h, w) = x.dim();
        let (oh, ow) = Self::out_shape(h, w);
        Array4::from_shape_fn((b, c, oh, ow), |(bi, ci, y, xx)| {
            let mut best = f64::NEG_INFINITY;
            for dy in 0..2 {
                for dx in 0..2 {
                    best = best.max(x[[bi, ci, 2 * y + dy, 2 * xx + dx]]);
                }
            }
            best
        })
    }

    pub fn backward(&self, x: &Array4<f64>, dy: &Array4<f64>) -> Array4<f64> {
        let (b, c, _, _) = x.dim();
        let (_, _, oh, ow) = dy.dim();
        let mut dx = Array4::<f64>::zeros(x.dim());
        for bi in 0..b {
            for ci in 0..c {
                for y in 0..oh {
                    for xx in 0..ow {
                        // first max wins, matching forward's scan order
                        let (mut by, mut bx, mut best) = (0, 0, f64::NEG_INFINITY);
                        for dy_ in 0..2 {
                            for dx_ in 0..2 {
                                let v = x[[bi, ci, 2 * y + dy_, 2 * xx + dx_]];
                                if v > best {
                                    best = v;
                                    by = dy_;
                                    bx = dx_;
                                }
                            }
                        }
                        dx[[bi, ci, 2 * y + by, 2 * xx + bx]] += dy[[bi, ci, y, xx]];
                    }
                }
            }
        }
        dx
    }
}

/// ReLU as a standalone stage (mask recomputed from the cached input).
pub fn relu_forward(x: &Array4<f64>) -> Array4<f64> {
    x.mapv(|v| v.max(0.0))
}

pub fn relu_backward(x: &Array4<f64>, dy: &Array4<f64>) -> Array4<f64> {
    let mut dx = dy.clone();
    ndarray::Zip::from(&mut dx).and(x).for_each(|d, &xv| {
        if xv <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;

    fn naive_conv(x: &Array4<f64>, w: &ndarray::ArrayD<f64>, k: usize) -> Array4<f64> {
        let (b, cin, h, wd) = x.dim();
        let cout = w.shape()[0];
        let pad = k as isize / 2;
        Array4::from_shape_fn((b, cout, h, wd), |(bi, co, y, xx)| {
            let mut acc = 0.0;
            for ci in 0..cin {
                for ky in 0..k {
                    for kx in 0..k {
                        let sy = y as isize + ky as isize - pad;
                        let sx = xx as isize + kx as isize - pad;
                        if sy >= 0 && sx >= 0 && sy < h as isize && sx < wd as isize {
                            acc += x[[bi, ci, sy as usize, sx as usize]]
                                * w[[co, ci, ky, kx]];
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn forward_matches_naive() {
        let mut rng = RandomSource::from_seed(4);
        let conv = Conv2d::new(3, 5, 3, &mut rng);
        let x = Array4::from_shape_fn((2, 3, 6, 7), |_| rng.normal());
        let fast = conv.forward(&x);
        let slow = naive_conv(&x, &conv.weight.value, 3);
        for (a, b) in fast.iter().zip(slow.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn one_by_one_projection() {
        let mut rng = RandomSource::from_seed(5);
        let conv = Conv2d::new(2, 4, 1, &mut rng);
        let x = Array4::from_shape_fn((1, 2, 3, 3), |_| rng.normal());
        let fast = conv.forward(&x);
        let slow = naive_conv(&x, &conv.weight.value, 1);
        for (a, b) in fast.iter().zip(slow.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn conv_gradcheck() {
        let mut rng = RandomSource::from_seed(6);
        let mut conv = Conv2d::new(2, 3, 3, &mut rng);
        let x = Array4::from_shape_fn((2, 2, 4, 5), |_| rng.normal());
        let report = gradcheck::check_grads(
            &mut conv,
            |m, with_grad| {
                let y = m.forward(&x);
                let loss = y.iter().map(|v| v * v).sum::<f64>();
                if with_grad {
                    let dy = y.mapv(|v| 2.0 * v);
                    m.backward(&x, &dy);
                }
                loss
            },
            usize::MAX,
            1e-6,
            &mut RandomSource::from_seed(7),
        );
        assert!(report.max_rel_err < 1e-7, "{report:?}");
    }

    #[test]
    fn conv_input_gradient_matches_fd() {
        let mut rng = RandomSource::from_seed(8);
        let mut conv = Conv2d::new(2, 2, 3, &mut rng);
        let mut x = Array4::from_shape_fn((1, 2, 4, 4), |_| rng.normal());
        let y = conv.forward(&x);
        let dy = y.mapv(|v| 2.0 * v);
        let dx = conv.backward(&x, &dy);
        let eps = 1e-6;
        for flat in [0usize, 7, 15, 31] {
            let idx = {
                let (_, c, h, w) = x.dim();
                let (ci, rest) = (flat / (h * w), flat % (h * w));
                (0, ci % c, rest / w, rest % w)
            };
            let orig = x[idx];
            x[idx] = orig + eps;
            let lp: f64 = conv.forward(&x).iter().map(|v| v * v).sum();
            x[idx] = orig - eps;
            let lm: f64 = conv.forward(&x).iter().map(|v| v * v).sum();
            x[idx] = orig;
            let numeric = (lp - lm) / (2.0 * eps);
            assert!(gradcheck::rel_err(dx[idx], numeric) < 1e-6);
        }
    }

    #[test]
    fn pool_forward_and_backward() {
        let x = Array4::from_shape_fn((1, 1, 4, 4), |(_, _, y, xx)| (y * 4 + xx) as f64);
        let pool = MaxPool2;
        let y = pool.forward(&x);
        assert_eq!(y.dim(), (1, 1, 2, 2));
        assert_eq!(y[[0, 0, 0, 0]], 5.0);
        assert_eq!(y[[0, 0, 1, 1]], 15.0);
        let dy = Array4::from_elem((1, 1, 2, 2), 1.0);
        let dx = pool.backward(&x, &dy);
        assert_eq!(dx[[0, 0, 1, 1]], 1.0);
        assert_eq!(dx[[0, 0, 0, 0]], 0.0);
        assert_eq!(dx.sum(), 4.0);
    }

    #[test]
    fn pool_drops_odd_tail() {
        let x = Array4::<f64>::zeros((1, 1, 5, 7));
        assert_eq!(MaxPool2.forward(&x).dim(), (1, 1, 2, 3));
    }
}
