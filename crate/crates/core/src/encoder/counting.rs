//! Analytic parameter and FLOP accounting.
//!
//! Counts walk the same [`stack_plan`] the builders use, so they stay exact
//! with respect to instantiated models (verified in tests). FLOPs follow the
//! common convention of 2 x multiply-adds; convolutional cost is reported
//! separately because it is the only width-dependent term of consequence.

use serde::{Deserialize, Serialize};

use crate::encoder::resnet::{stack_plan, PlanStage};
use crate::encoder::EncoderConfig;
use crate::raster::NORM_HEIGHT;

/// Which text decoder sits on top of the encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    Ctc,
    Td,
}

impl std::fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DecoderKind::Ctc => write!(f, "ctc"),
            DecoderKind::Td => write!(f, "td"),
        }
    }
}

impl std::str::FromStr for DecoderKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ctc" => Ok(DecoderKind::Ctc),
            "td" => Ok(DecoderKind::Td),
            other => Err(format!("unknown decoder {other:?} (expected ctc|td)")),
        }
    }
}

/// Fully specified model for accounting purposes.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ModelSpec {
    pub encoder: EncoderConfig,
    pub decoder: DecoderKind,
    /// Number of characters (reserved symbols derive from it).
    pub alphabet_len: usize,
}

/// TD decoder hyper-parameters tied to the channel divisor.
pub fn td_dims(encoder: &EncoderConfig) -> (usize, usize, usize, usize) {
    // (model dim, heads, feed-forward width, max positions)
    let dim = (512 / encoder.channel_div).max(8);
    let heads = 8.min(dim);
    (dim, heads, 4 * dim, 64)
}

#[derive(Clone, Debug, Default)]
pub struct CountReport {
    pub params: u64,
    /// Total multiply-adds for one image of the given width.
    pub madds: f64,
    /// Convolutional multiply-adds only.
    pub conv_madds: f64,
    /// Per-layer breakdown: (label, params, madds).
    pub breakdown: Vec<(String, u64, f64)>,
}

impl CountReport {
    pub fn flops(&self) -> f64 {
        2.0 * self.madds
    }

    pub fn conv_flops(&self) -> f64 {
        2.0 * self.conv_madds
    }

    fn push(&mut self, label: impl Into<String>, params: u64, madds: f64) {
        self.params += params;
        self.madds += madds;
        self.breakdown.push((label.into(), params, madds));
    }
}

fn conv_cost(cin: usize, cout: usize, k: usize, h: usize, w: usize) -> (u64, f64) {
    let params = (cout * cin * k * k) as u64;
    let madds = params as f64 * (h * w) as f64;
    (params, madds)
}

fn bn_cost(c: usize, h: usize, w: usize) -> (u64, f64) {
    ((2 * c) as u64, (2 * c * h * w) as f64)
}

/// Exact parameter count and analytic multiply-adds at input width `w`.
pub fn count_params_flops(spec: &ModelSpec, input_width: usize) -> CountReport {
    let mut report = CountReport::default();
    let mut h = NORM_HEIGHT;
    let mut w = input_width;
    for (i, stage) in stack_plan(spec.encoder.channel_div).into_iter().enumerate() {
        match stage {
            PlanStage::Conv { cin, cout } => {
                let (p1, m1) = conv_cost(cin, cout, 3, h, w);
                let (p2, m2) = bn_cost(cout, h, w);
                report.push(format!("cnn.s{i}.conv3x3[{cin}->{cout}]"), p1 + p2, m1 + m2);
                report.conv_madds += m1;
            }
            PlanStage::Pool => {
                h /= 2;
                w /= 2;
                report.push(format!("cnn.s{i}.maxpool"), 0, 0.0);
            }
            PlanStage::Block { cin, cout } => {
                let (p1, m1) = conv_cost(cin, cout, 3, h, w);
                let (p2, m2) = conv_cost(cout, cout, 3, h, w);
                let (pb1, mb1) = bn_cost(cout, h, w);
                let (pb2, mb2) = bn_cost(cout, h, w);
                let (mut p, mut m) = (p1 + p2 + pb1 + pb2, m1 + m2 + mb1 + mb2);
                report.conv_madds += m1 + m2;
                if cin != cout {
                    let (pp, mp) = conv_cost(cin, cout, 1, h, w);
                    let (ppb, mpb) = bn_cost(cout, h, w);
                    p += pp + ppb;
                    m += mp + mpb;
                    report.conv_madds += mp;
                }
                report.push(format!("cnn.s{i}.block[{cin}->{cout}]"), p, m);
            }
        }
    }

    let frames = w; // after five pools, w = floor(input_width / 32)
    let frame_dim = spec.encoder.frame_dim();
    let hidden = spec.encoder.lstm_hidden();
    // One LSTM direction: 4H x (D + H) weights, two 4H bias vectors.
    let lstm_dir = |d: usize| (4 * hidden * (d + hidden) + 8 * hidden) as u64;
    let lstm_madds = |d: usize| (4 * hidden * (d + hidden)) as f64 * frames as f64;
    report.push("rnn1.bilstm", 2 * lstm_dir(frame_dim), 2.0 * lstm_madds(frame_dim));
    report.push("rnn2.bilstm", 2 * lstm_dir(2 * hidden), 2.0 * lstm_madds(2 * hidden));

    let d_s = spec.encoder.seq_dim();
    match spec.decoder {
        DecoderKind::Ctc => {
            let classes = spec.alphabet_len + 1;
            let params = (d_s * classes + classes) as u64;
            let madds = (d_s * classes) as f64 * frames as f64;
            report.push("decoder.ctc_proj", params, madds);
        }
        DecoderKind::Td => {
            let (dim, _heads, ff, max_pos) = td_dims(&spec.encoder);
            let vocab = spec.alphabet_len + 3; // chars + SOS/EOS/PAD
            // Teacher-forced cost for a token sequence as long as the frame
            // count, the width-coupled quantity a report can state.
            let tokens = frames.max(1) as f64;
            let embed = (vocab * dim) as u64;
            let pos = (max_pos * dim) as u64;
            report.push("decoder.td.embed", embed + pos, 0.0);
            // wq and wo are dim->dim; wk and wv read the kv width
            let attn_params = |kv: usize| (2 * (dim * dim + dim) + 2 * (dim * kv + dim)) as u64;
            // q,k,v,o projections + dot products with frames
            let self_madds = tokens * (4.0 * (dim * dim) as f64) + tokens * tokens * dim as f64 * 2.0;
            let cross_madds = tokens * 2.0 * (dim * dim) as f64
                + frames as f64 * 2.0 * (dim * d_s) as f64
                + tokens * frames as f64 * dim as f64 * 2.0;
            report.push("decoder.td.self_attn", attn_params(dim), self_madds);
            report.push("decoder.td.cross_attn", attn_params(d_s), cross_madds);
            let ff_params = (dim * ff + ff + ff * dim + dim) as u64;
            report.push("decoder.td.ff", ff_params, tokens * 2.0 * (dim * ff) as f64);
            report.push("decoder.td.layernorms", (3 * 2 * dim) as u64, 0.0);
            let out = (dim * vocab + vocab) as u64;
            report.push("decoder.td.out_proj", out, tokens * (dim * vocab) as f64);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::param_count;
    use crate::rng::RandomSource;

    #[test]
    fn analytic_count_matches_instantiated_encoder() {
        let mut rng = RandomSource::from_seed(70);
        for div in [8usize, 16] {
            let cfg = EncoderConfig { channel_div: div };
            let enc = crate::encoder::Encoder::new(cfg, &mut rng);
            let spec = ModelSpec { encoder: cfg, decoder: DecoderKind::Ctc, alphabet_len: 26 };
            let report = count_params_flops(&spec, 64);
            let encoder_params: u64 = report
                .breakdown
                .iter()
                .filter(|(l, _, _)| l.starts_with("cnn") || l.starts_with("rnn"))
                .map(|(_, p, _)| p)
                .sum();
            assert_eq!(encoder_params, param_count(&enc) as u64, "div {div}");
        }
    }

    #[test]
    fn full_size_params_near_reported() {
        let ctc = ModelSpec {
            encoder: EncoderConfig { channel_div: 1 },
            decoder: DecoderKind::Ctc,
            alphabet_len: 78,
        };
        let p_ctc = count_params_flops(&ctc, 256).params as f64 / 1e6;
        assert!((p_ctc - 48.0).abs() / 48.0 < 0.05, "CTC params {p_ctc}M");

        let td = ModelSpec { decoder: DecoderKind::Td, ..ctc };
        let p_td = count_params_flops(&td, 256).params as f64 / 1e6;
        assert!((p_td - 50.7).abs() / 50.7 < 0.05, "TD params {p_td}M");
    }

    #[test]
    fn conv_flops_linear_in_width() {
        let spec = ModelSpec {
            encoder: EncoderConfig { channel_div: 1 },
            decoder: DecoderKind::Ctc,
            alphabet_len: 78,
        };
        let narrow = count_params_flops(&spec, 128);
        let wide = count_params_flops(&spec, 256);
        let ratio = wide.conv_flops() / narrow.conv_flops();
        assert!((ratio - 2.0).abs() < 1e-9, "ratio {ratio}");
    }

    #[test]
    fn params_independent_of_width() {
        let spec = ModelSpec {
            encoder: EncoderConfig { channel_div: 4 },
            decoder: DecoderKind::Td,
            alphabet_len: 30,
        };
        assert_eq!(
            count_params_flops(&spec, 64).params,
            count_params_flops(&spec, 512).params
        );
    }
}
