//! The convolutional feature extractor.
//!
//! Layer stack (full size): two 3x3 convolutions (32, 64 channels), then
//! residual blocks interleaved with five 2x2 poolings: one block at 128, two
//! at 256, five at 512 followed by a 3x3 convolution, three more at 512 and
//! a final 3x3 convolution. Every convolution is followed by batch norm and
//! ReLU; residual blocks use identity skips with a 1x1 projection where the
//! channel count changes. 26 block/stem convolutions plus 3 projections.
//!
//! A channel divisor scales every width down uniformly so that the same
//! topology trains quickly at desk scale.

use ndarray::Array4;

use crate::nn::conv::{relu_backward, relu_forward, Conv2d, MaxPool2};
use crate::nn::norm::{BatchNorm2d, BnStats};
use crate::nn::{Mode, Module, Param};
use crate::rng::RandomSource;

/// Structural description of one stage; the single source of truth for
/// both module construction and analytic parameter/FLOP accounting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlanStage {
    Conv { cin: usize, cout: usize },
    Pool,
    Block { cin: usize, cout: usize },
}

fn ch(base: usize, div: usize) -> usize {
    (base / div).max(1)
}

/// The layer plan at a given channel divisor (1 = full size).
pub fn stack_plan(div: usize) -> Vec<PlanStage> {
    use PlanStage::*;
    let c32 = ch(32, div);
    let c64 = ch(64, div);
    let c128 = ch(128, div);
    let c256 = ch(256, div);
    let c512 = ch(512, div);
    vec![
        Conv { cin: 1, cout: c32 },
        Conv { cin: c32, cout: c64 },
        Pool,
        Block { cin: c64, cout: c128 },
        Pool,
        Block { cin: c128, cout: c256 },
        Block { cin: c256, cout: c256 },
        Pool,
        Block { cin: c256, cout: c512 },
        Block { cin: c512, cout: c512 },
        Block { cin: c512, cout: c512 },
        Block { cin: c512, cout: c512 },
        Block { cin: c512, cout: c512 },
        Conv { cin: c512, cout: c512 },
        Pool,
        Block { cin: c512, cout: c512 },
        Block { cin: c512, cout: c512 },
        Block { cin: c512, cout: c512 },
        Pool,
        Conv { cin: c512, cout: c512 },
    ]
}

/// Output channel count of the stack.
pub fn out_channels(div: usize) -> usize {
    ch(512, div)
}

/// Residual block: conv-bn-relu, conv-bn, add skip, relu.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub conv1: Conv2d,
    pub bn1: BatchNorm2d,
    pub conv2: Conv2d,
    pub bn2: BatchNorm2d,
    pub proj: Option<(Conv2d, BatchNorm2d)>,
}

#[derive(Debug)]
pub struct BlockCache {
    a: Array4<f64>,           // conv1 output
    stats1: BnStats,
    h: Array4<f64>,           // relu(bn1) output, conv2 input
    b: Array4<f64>,           // conv2 output
    stats2: BnStats,
    p: Option<Array4<f64>>,   // projection conv output
    stats_p: Option<BnStats>,
}

impl ResidualBlock {
    pub fn new(cin: usize, cout: usize, rng: &mut RandomSource) -> Self {
        let proj = (cin != cout).then(|| (Conv2d::new(cin, cout, 1, rng), BatchNorm2d::new(cout)));
        Self {
            conv1: Conv2d::new(cin, cout, 3, rng),
            bn1: BatchNorm2d::new(cout),
            conv2: Conv2d::new(cout, cout, 3, rng),
            bn2: BatchNorm2d::new(cout),
            proj,
        }
    }

    pub fn forward(&mut self, x: &Array4<f64>, mode: Mode) -> (Array4<f64>, Option<BlockCache>) {
        let a = self.conv1.forward(x);
        let (bn1_out, stats1) = self.bn1.forward(&a, mode);
        let h = relu_forward(&bn1_out);
        let b = self.conv2.forward(&h);
        let (bn2_out, stats2) = self.bn2.forward(&b, mode);
        let (skip, p, stats_p) = match &mut self.proj {
            Some((conv_p, bn_p)) => {
                let p = conv_p.forward(x);
                let (s, st) = bn_p.forward(&p, mode);
                (s, Some(p), st)
            }
            None => (x.clone(), None, None),
        };
        let y = relu_forward(&(&bn2_out + &skip));
        let cache = match mode {
            Mode::Train => Some(BlockCache {
                a,
                stats1: stats1.unwrap(),
                h,
                b,
                stats2: stats2.unwrap(),
                p,
                stats_p,
            }),
            Mode::Eval => None,
        };
        (y, cache)
    }

    /// `y` is this block's forward output (used for the final ReLU mask).
    pub fn backward(
        &mut self,
        x: &Array4<f64>,
        y: &Array4<f64>,
        cache: &BlockCache,
        dy: &Array4<f64>,
    ) -> Array4<f64> {
        let dsum = relu_backward(y, dy);
        let db = self.bn2.backward(&cache.b, &cache.stats2, &dsum);
        let dh = self.conv2.backward(&cache.h, &db);
        let dh = relu_backward(&cache.h, &dh);
        let da = self.bn1.backward(&cache.a, &cache.stats1, &dh);
        let dx_main = self.conv1.backward(x, &da);
        let dx_skip = match (&mut self.proj, &cache.p, &cache.stats_p) {
            (Some((conv_p, bn_p)), Some(p), Some(stats_p)) => {
                let dp = bn_p.backward(p, stats_p, &dsum);
                conv_p.backward(x, &dp)
            }
            _ => dsum,
        };
        dx_main + dx_skip
    }
}

impl Module for ResidualBlock {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        self.conv1.visit(&mut |n, p| f(&format!("conv1.{n}"), p));
        self.bn1.visit(&mut |n, p| f(&format!("bn1.{n}"), p));
        self.conv2.visit(&mut |n, p| f(&format!("conv2.{n}"), p));
        self.bn2.visit(&mut |n, p| f(&format!("bn2.{n}"), p));
        if let Some((c, b)) = &self.proj {
            c.visit(&mut |n, p| f(&format!("proj_conv.{n}"), p));
            b.visit(&mut |n, p| f(&format!("proj_bn.{n}"), p));
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.conv1.visit_mut(&mut |n, p| f(&format!("conv1.{n}"), p));
        self.bn1.visit_mut(&mut |n, p| f(&format!("bn1.{n}"), p));
        self.conv2.visit_mut(&mut |n, p| f(&format!("conv2.{n}"), p));
        self.bn2.visit_mut(&mut |n, p| f(&format!("bn2.{n}"), p));
        if let Some((c, b)) = &mut self.proj {
            c.visit_mut(&mut |n, p| f(&format!("proj_conv.{n}"), p));
            b.visit_mut(&mut |n, p| f(&format!("proj_bn.{n}"), p));
        }
    }
}

#[derive(Debug)]
enum Stage {
    Conv { conv: Conv2d, bn: BatchNorm2d },
    Pool,
    Block(ResidualBlock),
}

#[derive(Debug)]
enum StageCache {
    Conv { conv_out: Array4<f64>, stats: BnStats },
    Pool,
    Block(BlockCache),
    None,
}

/// The full convolutional stack.
#[derive(Debug)]
pub struct CnnStack {
    stages: Vec<Stage>,
    pub channel_div: usize,
}

/// Forward activations retained for backward: `acts[i]` is the input of
/// stage `i`; `acts.last()` is the stack output.
pub struct CnnCache {
    acts: Vec<Array4<f64>>,
    stages: Vec<StageCache>,
}

impl CnnStack {
    pub fn new(channel_div: usize, rng: &mut RandomSource) -> Self {
        let stages = stack_plan(channel_div)
            .into_iter()
            .map(|s| match s {
                PlanStage::Conv { cin, cout } => Stage::Conv {
                    conv: Conv2d::new(cin, cout, 3, rng),
                    bn: BatchNorm2d::new(cout),
                },
                PlanStage::Pool => Stage::Pool,
                PlanStage::Block { cin, cout } => Stage::Block(ResidualBlock::new(cin, cout, rng)),
            })
            .collect();
        Self { stages, channel_div }
    }

    pub fn out_channels(&self) -> usize {
        out_channels(self.channel_div)
    }

    /// Eval-mode forward without caches.
    pub fn forward_eval(&mut self, x: &Array4<f64>) -> Array4<f64> {
        let mut cur = x.clone();
        for i in 0..self.stages.len() {
            cur = self.stage_forward(i, &cur, Mode::Eval).0;
        }
        cur
    }

    /// Training forward; caches everything backward needs.
    pub fn forward_train(&mut self, x: &Array4<f64>) -> (Array4<f64>, CnnCache) {
        let mut acts = Vec::with_capacity(self.stages.len() + 1);
        let mut caches = Vec::with_capacity(self.stages.len());
        acts.push(x.clone());
        for i in 0..self.stages.len() {
            let (y, cache) = self.stage_forward(i, acts.last().unwrap(), Mode::Train);
            acts.push(y);
            caches.push(cache);
        }
        let out = acts.last().unwrap().clone();
        (out, CnnCache { acts, stages: caches })
    }

    fn stage_forward(&mut self, i: usize, x: &Array4<f64>, mode: Mode) -> (Array4<f64>, StageCache) {
        match &mut self.stages[i] {
            Stage::Conv { conv, bn } => {
                let conv_out = conv.forward(x);
                let (bn_out, stats) = bn.forward(&conv_out, mode);
                let y = relu_forward(&bn_out);
                match mode {
                    Mode::Train => (y, StageCache::Conv { conv_out, stats: stats.unwrap() }),
                    Mode::Eval => (y, StageCache::None),
                }
            }
            Stage::Pool => (MaxPool2.forward(x), StageCache::Pool),
            Stage::Block(block) => {
                let (y, cache) = block.forward(x, mode);
                match cache {
                    Some(c) => (y, StageCache::Block(c)),
                    None => (y, StageCache::None),
                }
            }
        }
    }

    /// Backward through a cached training forward; returns grad w.r.t. input.
    pub fn backward(&mut self, cache: &CnnCache, dy: &Array4<f64>) -> Array4<f64> {
        let mut grad = dy.clone();
        for i in (0..self.stages.len()).rev() {
            let x = &cache.acts[i];
            let y = &cache.acts[i + 1];
            grad = match (&mut self.stages[i], &cache.stages[i]) {
                (Stage::Conv { conv, bn }, StageCache::Conv { conv_out, stats }) => {
                    let dbn = relu_backward(y, &grad);
                    let dconv = bn.backward(conv_out, stats, &dbn);
                    conv.backward(x, &dconv)
                }
                (Stage::Pool, _) => MaxPool2.backward(x, &grad),
                (Stage::Block(block), StageCache::Block(bc)) => block.backward(x, y, bc, &grad),
                _ => unreachable!("cache does not match stage"),
            };
        }
        grad
    }
}

impl Module for CnnStack {
    fn visit(&self, f: &mut dyn FnMut(&str, &Param)) {
        for (i, stage) in self.stages.iter().enumerate() {
            match stage {
                Stage::Conv { conv, bn } => {
                    conv.visit(&mut |n, p| f(&format!("s{i}.conv.{n}"), p));
                    bn.visit(&mut |n, p| f(&format!("s{i}.bn.{n}"), p));
                }
                Stage::Pool => {}
                Stage::Block(b) => b.visit(&mut |n, p| f(&format!("s{i}.{n}"), p)),
            }
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, stage) in self.stages.iter_mut().enumerate() {
            match stage {
                Stage::Conv { conv, bn } => {
                    conv.visit_mut(&mut |n, p| f(&format!("s{i}.conv.{n}"), p));
                    bn.visit_mut(&mut |n, p| f(&format!("s{i}.bn.{n}"), p));
                }
                Stage::Pool => {}
                Stage::Block(b) => b.visit_mut(&mut |n, p| f(&format!("s{i}.{n}"), p)),
            }
        }
    }
}
