//! LSTM layers: a single direction plus a bidirectional wrapper.
//!
//! Sequences are processed per sample (lengths vary inside a batch), which
//! also makes the reverse direction exact: it starts at each sample's true
//! last frame rather than at the padding.

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::nn::{init, Module, Param};
use crate::rng::RandomSource;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One direction. Gate layout along the 4H axis is `[i, f, g, o]`.
#[derive(Clone, Debug)]
pub struct LstmLayer {
    pub w_ih: Param, // (4H, D)
    pub w_hh: Param, // (4H, H)
    pub b_ih: Param, // (4H,)
    pub b_hh: Param, // (4H,)
    pub input_dim: usize,
    pub hidden: usize,
}

/// Per-sequence cache from a forward pass.
#[derive(Clone, Debug)]
pub struct LstmCache {
    pub gates: Array2<f64>,  // (T, 4H) post-activation
    pub cells: Array2<f64>,  // (T, H)
    pub tanh_c: Array2<f64>, // (T, H)
    pub hidden: Array2<f64>, // (T, H)
}

impl LstmLayer {
    pub fn new(input_dim: usize, hidden: usize, rng: &mut RandomSource) -> Self {
        Self {
            w_ih: Param::new(init::lstm_uniform(&[4 * hidden, input_dim], hidden, rng)),
            w_hh: Param::new(init::lstm_uniform(&[4 * hidden, hidden], hidden, rng)),
            b_ih: Param::new(init::lstm_uniform(&[4 * hidden], hidden, rng)),
            b_hh: Param::new(init::lstm_uniform(&[4 * hidden], hidden, rng)),
            input_dim,
            hidden,
        }
    }

    fn w_ih2(&self) -> ndarray::ArrayView2<'_, f64> {
        self.w_ih.value.view().into_dimensionality().unwrap()
    }

    fn w_hh2(&self) -> ndarray::ArrayView2<'_, f64> {
        self.w_hh.value.view().into_dimensionality().unwrap()
    }

    /// Run one sequence `(T, D)` from zero initial state.
    pub fn forward_seq(&self, xs: &Array2<f64>) -> (Array2<f64>, LstmCache) {
        let t_len = xs.nrows();
        let h = self.hidden;
        let mut gates = Array2::<f64>::zeros((t_len, 4 * h));
        let mut cells = Array2::<f64>::zeros((t_len, h));
        let mut tanh_c = Array2::<f64>::zeros((t_len, h));
        let mut hidden = Array2::<f64>::zeros((t_len, h));
        let mut h_prev = Array1::<f64>::zeros(h);
        let mut c_prev = Array1::<f64>::zeros(h);
        for t in 0..t_len {
            let x_t = xs.row(t);
            let mut z = self.w_ih2().dot(&x_t) + self.w_hh2().dot(&h_prev);
            z += &self.b_ih.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
            z += &self.b_hh.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
            for j in 0..h {
                let i_g = sigmoid(z[j]);
                let f_g = sigmoid(z[h + j]);
                let g_g = z[2 * h + j].tanh();
                let o_g = sigmoid(z[3 * h + j]);
                let c = f_g * c_prev[j] + i_g * g_g;
                let tc = c.tanh();
                gates[[t, j]] = i_g;
                gates[[t, h + j]] = f_g;
                gates[[t, 2 * h + j]] = g_g;
                gates[[t, 3 * h + j]] = o_g;
                cells[[t, j]] = c;
                tanh_c[[t, j]] = tc;
                hidden[[t, j]] = o_g * tc;
            }
            h_prev.assign(&hidden.row(t));
            c_prev.assign(&cells.row(t));
        }
        let out = hidden.clone();
        (
            out,
            LstmCache { gates, cells, tanh_c, hidden },
        )
    }

    /// BPTT for one sequence. Returns `(dx, partial parameter grads)`.
    pub fn backward_seq(
        &self,
        xs: &Array2<f64>,
        cache: &LstmCache,
        dh_out: &Array2<f64>,
    ) -> (Array2<f64>, LstmGrads) {
        let t_len = xs.nrows();
        let h = self.hidden;
        let d = self.input_dim;
        let mut grads = LstmGrads::zeros(d, h);
        let mut dxs = Array2::<f64>::zeros((t_len, d));
        let mut dh_next = Array1::<f64>::zeros(h);
        let mut dc_next = Array1::<f64>::zeros(h);
        for t in (0..t_len).rev() {
            let mut dz = Array1::<f64>::zeros(4 * h);
            for j in 0..h {
                let i_g = cache.gates[[t, j]];
                let f_g = cache.gates[[t, h + j]];
                let g_g = cache.gates[[t, 2 * h + j]];
                let o_g = cache.gates[[t, 3 * h + j]];
                let tc = cache.tanh_c[[t, j]];
                let c_prev = if t > 0 { cache.cells[[t - 1, j]] } else { 0.0 };
                let dh = dh_out[[t, j]] + dh_next[j];
                let d_o = dh * tc;
                let dc = dc_next[j] + dh * o_g * (1.0 - tc * tc);
                let d_i = dc * g_g;
                let d_g = dc * i_g;
                let d_f = dc * c_prev;
                dz[j] = d_i * i_g * (1.0 - i_g);
                dz[h + j] = d_f * f_g * (1.0 - f_g);
                dz[2 * h + j] = d_g * (1.0 - g_g * g_g);
                dz[3 * h + j] = d_o * o_g * (1.0 - o_g);
                dc_next[j] = dc * f_g;
            }
            let x_t = xs.row(t);
            let h_prev = if t > 0 {
                cache.hidden.row(t - 1).to_owned()
            } else {
                Array1::zeros(h)
            };
            for r in 0..4 * h {
                let dzr = dz[r];
                if dzr != 0.0 {
                    for c in 0..d {
                        grads.w_ih[[r, c]] += dzr * x_t[c];
                    }
                    for c in 0..h {
                        grads.w_hh[[r, c]] += dzr * h_prev[c];
                    }
                    grads.b_ih[r] += dzr;
                    grads.b_hh[r] += dzr;
                }
            }
            let dx = self.w_ih2().t().dot(&dz);
            dxs.row_mut(t).assign(&dx);
            dh_next = self.w_hh2().t().dot(&dz);
        }
        (dxs, grads)
    }

    pub fn apply_grads(&mut self, grads: &LstmGrads) {
        self.w_ih.add_grad(&grads.w_ih.clone().into_dyn());
        self.w_hh.add_grad(&grads.w_hh.clone().into_dyn());
        self.b_ih.add_grad(&grads.b_ih.clone().into_dyn());
        self.b_hh.add_grad(&grads.b_hh.clone().into_dyn());
    }
}

/// Parameter-gradient accumulator for one sequence.
#[derive(Clone, Debug)]
pub struct LstmGrads {
    pub w_ih: Array2<f64>,
    pub w_hh: Array2<f64>,
    pub b_ih: Array1<f64>,
    pub b_hh: Array1<f64>,
}

impl LstmGrads {
    fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            w_ih: Array2::zeros((4 * hidden, input_dim)),
            w_hh: Array2::zeros((4 * hidden, hidden)),
            b_ih: Array1::zeros(4 * hidden),
            b_hh: Array1::zeros(4 * hidden),
        }
    }

    fn merge(&mut self, other: &LstmGrads) {
        self.w_ih += &other.w_ih;
        self.w_hh += &other.w_hh;
        self.b_ih += &other.b_ih;
        self.b_hh += &other.b_hh;
    }
}

impl Module for LstmLayer {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        f("w_ih", &self.w_ih);
        f("w_hh", &self.w_hh);
        f("b_ih", &self.b_ih);
        f("b_hh", &self.b_hh);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("w_ih", &mut self.w_ih);
        f("w_hh", &mut self.w_hh);
        f("b_ih", &mut self.b_ih);
        f("b_hh", &mut self.b_hh);
    }
}

fn reverse_rows(x: &Array2<f64>) -> Array2<f64> {
    let t = x.nrows();
    let mut out = Array2::zeros(x.dim());
    for i in 0..t {
        out.row_mut(i).assign(&x.row(t - 1 - i));
    }
    out
}

/// Bidirectional layer: forward and reverse passes concatenated per frame
/// into `2H` features (forward half first).
#[derive(Clone, Debug)]
pub struct BiLstm {
    pub fwd: LstmLayer,
    pub bwd: LstmLayer,
}

#[derive(Clone, Debug)]
pub struct BiLstmCache {
    pub fwd: LstmCache,
    pub bwd: LstmCache,
    pub xs_rev: Array2<f64>,
}

impl BiLstm {
    pub fn new(input_dim: usize, hidden: usize, rng: &mut RandomSource) -> Self {
        Self {
            fwd: LstmLayer::new(input_dim, hidden, rng),
            bwd: LstmLayer::new(input_dim, hidden, rng),
        }
    }

    pub fn out_dim(&self) -> usize {
        2 * self.fwd.hidden
    }

    pub fn forward_seq(&self, xs: &Array2<f64>) -> (Array2<f64>, BiLstmCache) {
        let (hf, cf) = self.fwd.forward_seq(xs);
        let xs_rev = reverse_rows(xs);
        let (hb_rev, cb) = self.bwd.forward_seq(&xs_rev);
        let hb = reverse_rows(&hb_rev);
        let t = xs.nrows();
        let h = self.fwd.hidden;
        let mut out = Array2::<f64>::zeros((t, 2 * h));
        out.slice_mut(ndarray::s![.., ..h]).assign(&hf);
        out.slice_mut(ndarray::s![.., h..]).assign(&hb);
        (out, BiLstmCache { fwd: cf, bwd: cb, xs_rev })
    }

    pub fn backward_seq(
        &self,
        xs: &Array2<f64>,
        cache: &BiLstmCache,
        dy: &Array2<f64>,
    ) -> (Array2<f64>, LstmGrads, LstmGrads) {
        let h = self.fwd.hidden;
        let d_fwd = dy.slice(ndarray::s![.., ..h]).to_owned();
        let d_bwd = reverse_rows(&dy.slice(ndarray::s![.., h..]).to_owned());
        let (dx_f, gf) = self.fwd.backward_seq(xs, &cache.fwd, &d_fwd);
        let (dx_b_rev, gb) = self.bwd.backward_seq(&cache.xs_rev, &cache.bwd, &d_bwd);
        let dx = dx_f + reverse_rows(&dx_b_rev);
        (dx, gf, gb)
    }

    /// Batch helper over per-sample sequences; parallel, deterministic merge.
    pub fn forward_batch(&self, seqs: &[Array2<f64>]) -> (Vec<Array2<f64>>, Vec<BiLstmCache>) {
        let results: Vec<_> = seqs.par_iter().map(|xs| self.forward_seq(xs)).collect();
        results.into_iter().unzip()
    }

    pub fn backward_batch(
        &mut self,
        seqs: &[Array2<f64>],
        caches: &[BiLstmCache],
        dys: &[Array2<f64>],
    ) -> Vec<Array2<f64>> {
        let parts: Vec<_> = seqs
            .par_iter()
            .zip(caches.par_iter())
            .zip(dys.par_iter())
            .map(|((xs, cache), dy)| self.backward_seq(xs, cache, dy))
            .collect();
        let mut dxs = Vec::with_capacity(parts.len());
        let mut acc_f = LstmGrads::zeros(self.fwd.input_dim, self.fwd.hidden);
        let mut acc_b = LstmGrads::zeros(self.bwd.input_dim, self.bwd.hidden);
        for (dx, gf, gb) in parts {
            dxs.push(dx);
            acc_f.merge(&gf);
            acc_b.merge(&gb);
        }
        self.fwd.apply_grads(&acc_f);
        self.bwd.apply_grads(&acc_b);
        dxs
    }
}

impl Module for BiLstm {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        self.fwd.visit(&mut |n, p| f(&format!("fwd.{n}"), p));
        self.bwd.visit(&mut |n, p| f(&format!("bwd.{n}"), p));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.fwd.visit_mut(&mut |n, p| f(&format!("fwd.{n}"), p));
        self.bwd.visit_mut(&mut |n, p| f(&format!("bwd.{n}"), p));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;

    #[test]
    fn single_frame_passes_through() {
        let mut rng = RandomSource::from_seed(20);
        let lstm = BiLstm::new(6, 4, &mut rng);
        let xs = Array2::from_shape_fn((1, 6), |_| rng.normal());
        let (out, _) = lstm.forward_seq(&xs);
        assert_eq!(out.dim(), (1, 8));
    }

    #[test]
    fn lstm_gradcheck() {
        let mut rng = RandomSource::from_seed(21);
        let mut lstm = LstmLayer::new(3, 4, &mut rng);
        let xs = Array2::from_shape_fn((5, 3), |_| rng.normal());
        let report = gradcheck::check_grads(
            &mut lstm,
            |m, with_grad| {
                let (hs, cache) = m.forward_seq(&xs);
                let loss = hs.iter().map(|v| v * v).sum::<f64>();
                if with_grad {
                    let dh = hs.mapv(|v| 2.0 * v);
                    let (_, grads) = m.backward_seq(&xs, &cache, &dh);
                    m.apply_grads(&grads);
                }
                loss
            },
            usize::MAX,
            1e-6,
            &mut RandomSource::from_seed(22),
        );
        assert!(report.max_rel_err < 1e-6, "{report:?}");
    }

    #[test]
    fn bilstm_input_gradcheck() {
        let mut rng = RandomSource::from_seed(23);
        let lstm = BiLstm::new(3, 2, &mut rng);
        let mut xs = Array2::from_shape_fn((4, 3), |_| rng.normal());
        let (out, cache) = lstm.forward_seq(&xs);
        let dy = out.mapv(|v| 2.0 * v);
        let (dx, _, _) = lstm.backward_seq(&xs, &cache, &dy);
        let eps = 1e-6;
        for flat in 0..xs.len() {
            let (r, c) = (flat / 3, flat % 3);
            let orig = xs[[r, c]];
            xs[[r, c]] = orig + eps;
            let lp: f64 = lstm.forward_seq(&xs).0.iter().map(|v| v * v).sum();
            xs[[r, c]] = orig - eps;
            let lm: f64 = lstm.forward_seq(&xs).0.iter().map(|v| v * v).sum();
            xs[[r, c]] = orig;
            let numeric = (lp - lm) / (2.0 * eps);
            assert!(
                gradcheck::rel_err(dx[[r, c]], numeric) < 1e-6,
                "dx[{r},{c}]: {} vs {}",
                dx[[r, c]],
                numeric
            );
        }
    }

    #[test]
    fn direction_swap_reverses_frames() {
        // Swapping direction weights and reversing input frames reverses the
        // output frames, with the two concatenated halves exchanged.
        let mut rng = RandomSource::from_seed(24);
        let lstm = BiLstm::new(3, 2, &mut rng);
        let swapped = BiLstm { fwd: lstm.bwd.clone(), bwd: lstm.fwd.clone() };
        let xs = Array2::from_shape_fn((6, 3), |_| rng.normal());
        let (out, _) = lstm.forward_seq(&xs);
        let (out_swapped, _) = swapped.forward_seq(&reverse_rows(&xs));
        let t = xs.nrows();
        let h = 2;
        for i in 0..t {
            for j in 0..h {
                let a = out[[t - 1 - i, j]]; // original forward half, reversed
                let b = out_swapped[[i, h + j]]; // swapped run, backward half
                assert!((a - b).abs() < 1e-12);
                let c = out[[t - 1 - i, h + j]];
                let d = out_swapped[[i, j]];
                assert!((c - d).abs() < 1e-12);
            }
        }
    }
}
