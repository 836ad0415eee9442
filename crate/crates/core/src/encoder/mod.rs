//! The recognizer encoder: visual features, map-to-sequence, and stacked
//! bidirectional LSTMs producing the frame representation `S`.

pub mod counting;
pub mod resnet;

use ndarray::{Array2, Array3, Array4};

use crate::error::{Result, ScribeError};
use crate::nn::lstm::{BiLstm, BiLstmCache};
use crate::nn::{Mode, Module, Param};
use crate::raster::NORM_HEIGHT;
use crate::rng::RandomSource;

pub use resnet::{stack_plan, CnnCache, CnnStack, PlanStage, ResidualBlock};

/// Horizontal downsampling factor of the stack (five 2x2 poolings).
pub const DOWNSAMPLE: usize = 32;

/// Frame count produced for an input of the given pixel width.
pub fn frame_count(width: usize) -> usize {
    width / DOWNSAMPLE
}

/// Size knobs for the encoder. `channel_div = 1` is the full architecture
/// (512 output channels, LSTM hidden 256); larger divisors shrink every
/// width proportionally for desk-scale training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct EncoderConfig {
    pub channel_div: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { channel_div: 1 }
    }
}

impl EncoderConfig {
    pub fn out_channels(&self) -> usize {
        resnet::out_channels(self.channel_div)
    }

    /// Feature-map rows for height-64 inputs.
    pub fn fmap_rows(&self) -> usize {
        NORM_HEIGHT / DOWNSAMPLE
    }

    /// Frame dimension after map-to-sequence (`c' * H'`).
    pub fn frame_dim(&self) -> usize {
        self.out_channels() * self.fmap_rows()
    }

    /// Per-direction LSTM hidden size.
    pub fn lstm_hidden(&self) -> usize {
        (256 / self.channel_div).max(1)
    }

    /// Dimension of the final representation (two directions concatenated).
    pub fn seq_dim(&self) -> usize {
        2 * self.lstm_hidden()
    }
}

/// Flatten one feature map `(c', H', W')` into `W'` frames of `c' * H'`.
///
/// Frame `i` is column `i` with channels varying slowest: index
/// `c * H' + h` holds `fmap[c, h, i]`.
pub fn map_to_sequence(fmap: &Array3<f64>) -> Array2<f64> {
    let (c, h, w) = fmap.dim();
    Array2::from_shape_fn((w, c * h), |(i, j)| fmap[[j / h, j % h, i]])
}

/// Inverse of [`map_to_sequence`]; the pair is a reshape bijection.
pub fn sequence_to_map(frames: &Array2<f64>, c: usize, h: usize) -> Array3<f64> {
    let (w, d) = frames.dim();
    assert_eq!(d, c * h);
    Array3::from_shape_fn((c, h, w), |(ci, hi, i)| frames[[i, ci * h + hi]])
}

/// The full encoder `f(.) = rnn(m(cnn(.)))`.
#[derive(Debug)]
pub struct Encoder {
    pub cnn: CnnStack,
    pub rnn1: BiLstm,
    pub rnn2: BiLstm,
    pub config: EncoderConfig,
}

/// Caches for one training-mode batch forward.
pub struct EncoderCache {
    pub cnn: CnnCache,
    pub frames: Vec<Array2<f64>>, // rnn1 inputs, per sample, true length
    pub rnn1: Vec<BiLstmCache>,
    pub mid: Vec<Array2<f64>>, // rnn1 outputs
    pub rnn2: Vec<BiLstmCache>,
    pub fmap_dim: (usize, usize, usize, usize),
}

impl Encoder {
    pub fn new(config: EncoderConfig, rng: &mut RandomSource) -> Self {
        let cnn = CnnStack::new(config.channel_div, rng);
        let hidden = config.lstm_hidden();
        let rnn1 = BiLstm::new(config.frame_dim(), hidden, rng);
        let rnn2 = BiLstm::new(2 * hidden, hidden, rng);
        Self { cnn, rnn1, rnn2, config }
    }

    fn check_batch(images: &Array4<f64>, widths: &[usize]) -> Result<()> {
        let (b, c, h, _) = images.dim();
        if c != 1 || h != NORM_HEIGHT {
            return Err(ScribeError::InvalidInput(format!(
                "expected (B,1,{NORM_HEIGHT},W) images, got {:?}",
                images.dim()
            )));
        }
        if b != widths.len() {
            return Err(ScribeError::InvalidInput("widths/batch size mismatch".into()));
        }
        for &w in widths {
            if frame_count(w) == 0 {
                return Err(ScribeError::ImageTooNarrow { width: w });
            }
        }
        Ok(())
    }

    /// CNN features for a batch `(B, 1, 64, W)`; errors when any sample is
    /// narrower than one output column.
    pub fn encode_visual(
        &mut self,
        images: &Array4<f64>,
        widths: &[usize],
        mode: Mode,
    ) -> Result<(Array4<f64>, Option<CnnCache>)> {
        Self::check_batch(images, widths)?;
        Ok(match mode {
            Mode::Eval => (self.cnn.forward_eval(images), None),
            Mode::Train => {
                let (y, cache) = self.cnn.forward_train(images);
                (y, Some(cache))
            }
        })
    }

    /// Frame sequences through the two bidirectional layers.
    ///
    /// Input and output are per-sample `(T_i, D)` matrices.
    pub fn encode_sequence(
        &self,
        frames: &[Array2<f64>],
    ) -> (Vec<Array2<f64>>, Vec<BiLstmCache>, Vec<Array2<f64>>, Vec<BiLstmCache>) {
        let (mid, c1) = self.rnn1.forward_batch(frames);
        let (out, c2) = self.rnn2.forward_batch(&mid);
        (out, c2, mid, c1)
    }

    /// Full forward pass: images to the representation `S` per sample.
    pub fn forward(
        &mut self,
        images: &Array4<f64>,
        widths: &[usize],
        mode: Mode,
    ) -> Result<(Vec<Array2<f64>>, Option<EncoderCache>)> {
        let (fmap, cnn_cache) = self.encode_visual(images, widths, mode)?;
        let frames = split_frames(&fmap, widths);
        let (out, c2, mid, c1) = self.encode_sequence(&frames);
        let cache = cnn_cache.map(|cnn| EncoderCache {
            cnn,
            frames,
            rnn1: c1,
            mid,
            rnn2: c2,
            fmap_dim: fmap.dim(),
        });
        Ok((out, cache))
    }

    /// Backward from per-sample `dS` gradients; parameter grads accumulate.
    pub fn backward(&mut self, cache: &EncoderCache, d_out: &[Array2<f64>]) {
        let dmid = self.rnn2.backward_batch(&cache.mid, &cache.rnn2, d_out);
        let dframes = self.rnn1.backward_batch(&cache.frames, &cache.rnn1, &dmid);
        let (b, c, h, w) = cache.fmap_dim;
        let mut dfmap = Array4::<f64>::zeros((b, c, h, w));
        for (bi, df) in dframes.iter().enumerate() {
            for i in 0..df.nrows() {
                for j in 0..df.ncols() {
                    dfmap[[bi, j / h, j % h, i]] = df[[i, j]];
                }
            }
        }
        self.cnn.backward(&cache.cnn, &dfmap);
    }
}

/// Slice a batch feature map into per-sample frame matrices of true length.
pub fn split_frames(fmap: &Array4<f64>, widths: &[usize]) -> Vec<Array2<f64>> {
    let (_, c, h, _) = fmap.dim();
    widths
        .iter()
        .enumerate()
        .map(|(bi, &w)| {
            let t = frame_count(w);
            let sub = fmap
                .index_axis(ndarray::Axis(0), bi)
                .slice(ndarray::s![.., .., ..t])
                .to_owned();
            map_to_sequence(&sub.into_shape_with_order((c, h, t)).unwrap())
        })
        .collect()
}

impl Module for Encoder {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        self.cnn.visit(&mut |n, p| f(&format!("cnn.{n}"), p));
        self.rnn1.visit(&mut |n, p| f(&format!("rnn1.{n}"), p));
        self.rnn2.visit(&mut |n, p| f(&format!("rnn2.{n}"), p));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.cnn.visit_mut(&mut |n, p| f(&format!("cnn.{n}"), p));
        self.rnn1.visit_mut(&mut |n, p| f(&format!("rnn1.{n}"), p));
        self.rnn2.visit_mut(&mut |n, p| f(&format!("rnn2.{n}"), p));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;

    fn tiny_config() -> EncoderConfig {
        EncoderConfig { channel_div: 8 }
    }

    fn batch_of(widths: &[usize], rng: &mut RandomSource) -> Array4<f64> {
        let max_w = *widths.iter().max().unwrap();
        Array4::from_shape_fn((widths.len(), 1, NORM_HEIGHT, max_w), |_| rng.uniform())
    }

    #[test]
    fn shape_law_on_tiny_model() {
        let mut rng = RandomSource::from_seed(60);
        let mut enc = Encoder::new(tiny_config(), &mut rng);
        for w in [32usize, 64, 96, 100, 333] {
            let x = batch_of(&[w], &mut rng);
            let (fmap, _) = enc.encode_visual(&x, &[w], Mode::Eval).unwrap();
            let (_, c, h, wc) = fmap.dim();
            assert_eq!(c, enc.config.out_channels());
            assert_eq!(h, 2, "H'=2 for height-64 inputs");
            assert_eq!(wc, w / 32, "W'=floor(W/32) at W={w}");
        }
    }

    #[test]
    fn narrow_image_is_an_error() {
        let mut rng = RandomSource::from_seed(61);
        let mut enc = Encoder::new(tiny_config(), &mut rng);
        let x = batch_of(&[31], &mut rng);
        assert!(matches!(
            enc.encode_visual(&x, &[31], Mode::Eval),
            Err(ScribeError::ImageTooNarrow { width: 31 })
        ));
    }

    #[test]
    fn map_to_sequence_is_a_bijection() {
        let mut rng = RandomSource::from_seed(62);
        let fmap = Array3::from_shape_fn((5, 2, 3), |_| rng.normal());
        let frames = map_to_sequence(&fmap);
        assert_eq!(frames.dim(), (3, 10));
        let back = sequence_to_map(&frames, 5, 2);
        assert_eq!(fmap, back);
    }

    #[test]
    fn map_to_sequence_single_column() {
        let fmap = Array3::from_elem((4, 2, 1), 0.5);
        assert_eq!(map_to_sequence(&fmap).dim(), (1, 8));
    }

    #[test]
    fn sequence_dims_match_config() {
        let mut rng = RandomSource::from_seed(63);
        let cfg = tiny_config();
        let enc = Encoder::new(cfg, &mut rng);
        let frames = vec![Array2::from_shape_fn((3, cfg.frame_dim()), |_| rng.normal())];
        let (out, _, _, _) = enc.encode_sequence(&frames);
        assert_eq!(out[0].dim(), (3, cfg.seq_dim()));
    }

    #[test]
    fn equal_images_equal_outputs_in_eval() {
        let mut rng = RandomSource::from_seed(64);
        let mut enc = Encoder::new(tiny_config(), &mut rng);
        let single = batch_of(&[64], &mut rng);
        let mut pair = Array4::zeros((2, 1, NORM_HEIGHT, 64));
        pair.index_axis_mut(ndarray::Axis(0), 0)
            .assign(&single.index_axis(ndarray::Axis(0), 0));
        pair.index_axis_mut(ndarray::Axis(0), 1)
            .assign(&single.index_axis(ndarray::Axis(0), 0));
        let (s, _) = enc.forward(&pair, &[64, 64], Mode::Eval).unwrap();
        assert_eq!(s[0], s[1]);
        let (s_single, _) = enc.forward(&single, &[64], Mode::Eval).unwrap();
        assert_eq!(s[0], s_single[0]);
    }

    /// Encoder gradients vs finite differences on a tiny instantiation
    /// (channel widths divided by 8). Every parameter tensor is probed at a
    /// few random coordinates; exhaustive probing is quadratic in model size.
    #[test]
    fn encoder_gradcheck_tiny() {
        let mut rng = RandomSource::from_seed(65);
        let cfg = EncoderConfig { channel_div: 8 };
        let mut enc = Encoder::new(cfg, &mut rng);
        let x = batch_of(&[32], &mut rng);
        let widths = [32usize];

        let mut bn_snapshot: Vec<ndarray::ArrayD<f64>> = Vec::new();
        enc.visit(&mut |name, p| {
            if name.contains("running_") {
                bn_snapshot.push(p.value.clone());
            }
        });
        let report = gradcheck::check_grads(
            &mut enc,
            |m, with_grad| {
                let (s, cache) = m.forward(&x, &widths, Mode::Train).unwrap();
                let loss = s.iter().flat_map(|f| f.iter()).map(|v| v * v).sum::<f64>();
                if with_grad {
                    let ds: Vec<Array2<f64>> = s.iter().map(|f| f.mapv(|v| 2.0 * v)).collect();
                    m.backward(cache.as_ref().unwrap(), &ds);
                }
                let mut k = 0;
                m.visit_mut(&mut |name, p| {
                    if name.contains("running_") {
                        p.value.assign(&bn_snapshot[k]);
                        k += 1;
                    }
                });
                loss
            },
            3,
            1e-5,
            &mut RandomSource::from_seed(66),
        );
        assert!(
            report.max_rel_err < 1e-3,
            "encoder gradcheck failed: {report:?}"
        );
    }
}
