//! Multi-head attention and the post-norm transformer decoder layer.

use ndarray::{Array2, Array3};

use crate::nn::linear::{Linear, LinearInit};
use crate::nn::norm::LayerNorm;
use crate::nn::{Module, Param};
use crate::rng::RandomSource;

/// Attention masking for one call.
#[derive(Clone, Copy, Debug)]
pub enum AttnMask {
    None,
    /// Query position i may attend to key positions <= i.
    Causal,
    /// Keys at positions >= the given length are hidden (memory padding).
    KeyLimit(usize),
}

impl AttnMask {
    fn allowed(&self, q: usize, k: usize) -> bool {
        match self {
            AttnMask::None => true,
            AttnMask::Causal => k <= q,
            AttnMask::KeyLimit(len) => k < *len,
        }
    }
}

/// Multi-head scaled dot-product attention over single sequences.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
    pub dim: usize,
    pub kv_dim: usize,
}

/// Cache from one attention forward.
#[derive(Clone, Debug)]
pub struct AttnCache {
    q: Array2<f64>,       // (Tq, dim)
    k: Array2<f64>,       // (Tk, dim)
    v: Array2<f64>,       // (Tk, dim)
    attn: Array3<f64>,    // (heads, Tq, Tk) post-softmax
    concat: Array2<f64>,  // (Tq, dim) pre-output-projection
}

impl MultiHeadAttention {
    /// `dim` is the model width (queries and output); `kv_dim` the width of
    /// the attended memory.
    pub fn new(dim: usize, kv_dim: usize, heads: usize, rng: &mut RandomSource) -> Self {
        assert!(dim % heads == 0, "dim {dim} not divisible by heads {heads}");
        Self {
            wq: Linear::new(dim, dim, LinearInit::Xavier, rng),
            wk: Linear::new(kv_dim, dim, LinearInit::Xavier, rng),
            wv: Linear::new(kv_dim, dim, LinearInit::Xavier, rng),
            wo: Linear::new(dim, dim, LinearInit::Xavier, rng),
            heads,
            dim,
            kv_dim,
        }
    }

    pub fn forward(
        &self,
        x: &Array2<f64>,
        memory: &Array2<f64>,
        mask: AttnMask,
    ) -> (Array2<f64>, AttnCache) {
        let tq = x.nrows();
        let tk = memory.nrows();
        let h = self.heads;
        let hd = self.dim / h;
        let scale = 1.0 / (hd as f64).sqrt();

        let q = self.wq.forward(x);
        let k = self.wk.forward(memory);
        let v = self.wv.forward(memory);

        let mut attn = Array3::<f64>::zeros((h, tq, tk));
        let mut concat = Array2::<f64>::zeros((tq, self.dim));
        for head in 0..h {
            let off = head * hd;
            for qi in 0..tq {
                // scores with masking, then softmax
                let mut row = vec![f64::NEG_INFINITY; tk];
                for ki in 0..tk {
                    if mask.allowed(qi, ki) {
                        let mut s = 0.0;
                        for d in 0..hd {
                            s += q[[qi, off + d]] * k[[ki, off + d]];
                        }
                        row[ki] = s * scale;
                    }
                }
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for r in row.iter_mut() {
                    *r = (*r - m).exp();
                    z += *r;
                }
                for (ki, r) in row.iter().enumerate() {
                    attn[[head, qi, ki]] = r / z;
                }
                for d in 0..hd {
                    let mut acc = 0.0;
                    for ki in 0..tk {
                        acc += attn[[head, qi, ki]] * v[[ki, off + d]];
                    }
                    concat[[qi, off + d]] = acc;
                }
            }
        }
        let out = self.wo.forward(&concat);
        (out, AttnCache { q, k, v, attn, concat })
    }

    /// Returns `(dx, dmemory)`.
    pub fn backward(
        &mut self,
        x: &Array2<f64>,
        memory: &Array2<f64>,
        cache: &AttnCache,
        dy: &Array2<f64>,
    ) -> (Array2<f64>, Array2<f64>) {
        let tq = x.nrows();
        let tk = memory.nrows();
        let h = self.heads;
        let hd = self.dim / h;
        let scale = 1.0 / (hd as f64).sqrt();

        let dconcat = self.wo.backward(&cache.concat, dy);

        let mut dq = Array2::<f64>::zeros((tq, self.dim));
        let mut dk = Array2::<f64>::zeros((tk, self.dim));
        let mut dv = Array2::<f64>::zeros((tk, self.dim));
        for head in 0..h {
            let off = head * hd;
            for qi in 0..tq {
                // d attn = dconcat . v^T ; then softmax backward; then to q, k
                let mut dattn = vec![0.0; tk];
                for ki in 0..tk {
                    let mut acc = 0.0;
                    for d in 0..hd {
                        acc += dconcat[[qi, off + d]] * cache.v[[ki, off + d]];
                    }
                    dattn[ki] = acc;
                }
                let mut dot = 0.0;
                for ki in 0..tk {
                    dot += dattn[ki] * cache.attn[[head, qi, ki]];
                }
                for ki in 0..tk {
                    let a = cache.attn[[head, qi, ki]];
                    if a == 0.0 {
                        continue;
                    }
                    let dscore = a * (dattn[ki] - dot);
                    for d in 0..hd {
                        dq[[qi, off + d]] += dscore * cache.k[[ki, off + d]] * scale;
                        dk[[ki, off + d]] += dscore * cache.q[[qi, off + d]] * scale;
                    }
                }
                for ki in 0..tk {
                    let a = cache.attn[[head, qi, ki]];
                    if a == 0.0 {
                        continue;
                    }
                    for d in 0..hd {
                        dv[[ki, off + d]] += a * dconcat[[qi, off + d]];
                    }
                }
            }
        }
        let dx = self.wq.backward(x, &dq);
        let dm_k = self.wk.backward(memory, &dk);
        let dm_v = self.wv.backward(memory, &dv);
        (dx, dm_k + dm_v)
    }
}

impl Module for MultiHeadAttention {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        self.wq.visit(&mut |n, p| f(&format!("wq.{n}"), p));
        self.wk.visit(&mut |n, p| f(&format!("wk.{n}"), p));
        self.wv.visit(&mut |n, p| f(&format!("wv.{n}"), p));
        self.wo.visit(&mut |n, p| f(&format!("wo.{n}"), p));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.wq.visit_mut(&mut |n, p| f(&format!("wq.{n}"), p));
        self.wk.visit_mut(&mut |n, p| f(&format!("wk.{n}"), p));
        self.wv.visit_mut(&mut |n, p| f(&format!("wv.{n}"), p));
        self.wo.visit_mut(&mut |n, p| f(&format!("wo.{n}"), p));
    }
}

/// Two-layer position-wise feed-forward with ReLU.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub lin1: Linear,
    pub lin2: Linear,
}

#[derive(Clone, Debug)]
pub struct FfCache {
    pre: Array2<f64>,    // lin1 output before ReLU
    hidden: Array2<f64>, // after ReLU
}

impl FeedForward {
    pub fn new(dim: usize, hidden: usize, rng: &mut RandomSource) -> Self {
        Self {
            lin1: Linear::new(dim, hidden, LinearInit::HeRelu, rng),
            lin2: Linear::new(hidden, dim, LinearInit::Xavier, rng),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, FfCache) {
        let pre = self.lin1.forward(x);
        let hidden = pre.mapv(|v| v.max(0.0));
        let out = self.lin2.forward(&hidden);
        (out, FfCache { pre, hidden })
    }

    pub fn backward(&mut self, x: &Array2<f64>, cache: &FfCache, dy: &Array2<f64>) -> Array2<f64> {
        let dhidden = self.lin2.backward(&cache.hidden, dy);
        let mut dpre = dhidden;
        ndarray::Zip::from(&mut dpre).and(&cache.pre).for_each(|d, &p| {
            if p <= 0.0 {
                *d = 0.0;
            }
        });
        self.lin1.backward(x, &dpre)
    }
}

impl Module for FeedForward {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        self.lin1.visit(&mut |n, p| f(&format!("lin1.{n}"), p));
        self.lin2.visit(&mut |n, p| f(&format!("lin2.{n}"), p));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.lin1.visit_mut(&mut |n, p| f(&format!("lin1.{n}"), p));
        self.lin2.visit_mut(&mut |n, p| f(&format!("lin2.{n}"), p));
    }
}

/// One post-norm transformer decoder layer:
/// self-attention, cross-attention over the encoder memory, feed-forward,
/// each wrapped in residual + layer norm.
#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub self_attn: MultiHeadAttention,
    pub cross_attn: MultiHeadAttention,
    pub ff: FeedForward,
    pub ln1: LayerNorm,
    pub ln2: LayerNorm,
    pub ln3: LayerNorm,
}

#[derive(Clone, Debug)]
pub struct DecoderLayerCache {
    a_cache: AttnCache,
    sum1: Array2<f64>,
    x1: Array2<f64>,
    b_cache: AttnCache,
    sum2: Array2<f64>,
    x2: Array2<f64>,
    ff_cache: FfCache,
    sum3: Array2<f64>,
}

impl DecoderLayer {
    pub fn new(dim: usize, kv_dim: usize, heads: usize, ff_hidden: usize, rng: &mut RandomSource) -> Self {
        Self {
            self_attn: MultiHeadAttention::new(dim, dim, heads, rng),
            cross_attn: MultiHeadAttention::new(dim, kv_dim, heads, rng),
            ff: FeedForward::new(dim, ff_hidden, rng),
            ln1: LayerNorm::new(dim),
            ln2: LayerNorm::new(dim),
            ln3: LayerNorm::new(dim),
        }
    }

    pub fn forward(
        &self,
        x: &Array2<f64>,
        memory: &Array2<f64>,
        mem_len: usize,
    ) -> (Array2<f64>, DecoderLayerCache) {
        let (a, a_cache) = self.self_attn.forward(x, x, AttnMask::Causal);
        let sum1 = x + &a;
        let x1 = self.ln1.forward(&sum1);
        let (b, b_cache) = self
            .cross_attn
            .forward(&x1, memory, AttnMask::KeyLimit(mem_len));
        let sum2 = &x1 + &b;
        let x2 = self.ln2.forward(&sum2);
        let (c, ff_cache) = self.ff.forward(&x2);
        let sum3 = &x2 + &c;
        let y = self.ln3.forward(&sum3);
        (
            y,
            DecoderLayerCache { a_cache, sum1, x1, b_cache, sum2, x2, ff_cache, sum3 },
        )
    }

    /// Returns `(dx, dmemory)`.
    pub fn backward(
        &mut self,
        x: &Array2<f64>,
        memory: &Array2<f64>,
        cache: &DecoderLayerCache,
        dy: &Array2<f64>,
    ) -> (Array2<f64>, Array2<f64>) {
        let dsum3 = self.ln3.backward(&cache.sum3, dy);
        let dc = dsum3.clone();
        let dx2_ff = self.ff.backward(&cache.x2, &cache.ff_cache, &dc);
        let dx2 = &dsum3 + &dx2_ff;
        let dsum2 = self.ln2.backward(&cache.sum2, &dx2);
        let (dx1_cross, dmem) =
            self.cross_attn
                .backward(&cache.x1, memory, &cache.b_cache, &dsum2);
        let dx1 = &dsum2 + &dx1_cross;
        let dsum1 = self.ln1.backward(&cache.sum1, &dx1);
        let (dx_attn, dx_mem_self) = self.self_attn.backward(x, x, &cache.a_cache, &dsum1);
        // self-attention: x enters as query and as memory
        let dx = &dsum1 + &dx_attn + &dx_mem_self;
        (dx, dmem)
    }
}

impl Module for DecoderLayer {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        self.self_attn.visit(&mut |n, p| f(&format!("self_attn.{n}"), p));
        self.cross_attn.visit(&mut |n, p| f(&format!("cross_attn.{n}"), p));
        self.ff.visit(&mut |n, p| f(&format!("ff.{n}"), p));
        self.ln1.visit(&mut |n, p| f(&format!("ln1.{n}"), p));
        self.ln2.visit(&mut |n, p| f(&format!("ln2.{n}"), p));
        self.ln3.visit(&mut |n, p| f(&format!("ln3.{n}"), p));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.self_attn.visit_mut(&mut |n, p| f(&format!("self_attn.{n}"), p));
        self.cross_attn.visit_mut(&mut |n, p| f(&format!("cross_attn.{n}"), p));
        self.ff.visit_mut(&mut |n, p| f(&format!("ff.{n}"), p));
        self.ln1.visit_mut(&mut |n, p| f(&format!("ln1.{n}"), p));
        self.ln2.visit_mut(&mut |n, p| f(&format!("ln2.{n}"), p));
        self.ln3.visit_mut(&mut |n, p| f(&format!("ln3.{n}"), p));
    }
}
