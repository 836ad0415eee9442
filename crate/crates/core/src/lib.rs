//! Spatial-context self-supervised pretraining for handwritten word recognition.
//!
//! The crate is organised around a conventional encoder-decoder recognizer:
//! a convolutional feature extractor is reshaped into a frame sequence,
//! refined by stacked bidirectional LSTMs, and decoded either per frame
//! (CTC) or autoregressively (a single-layer transformer decoder).
//!
//! On top of that sit four pretext tasks (rotation, flip, jigsaw, sorting)
//! that pretrain the encoder from unlabelled word images, plus the two
//! evaluation protocols used to judge them: a frozen-representation probe
//! and transfer learning at reduced labelled fractions.
//!
//! Everything runs on the CPU in `f64`. Models are deliberately scalable via
//! a channel divisor so that full training loops finish at desk scale while
//! the full-size architecture remains available for parameter and FLOP
//! accounting.

pub mod augment;
pub mod corpus;
pub mod decoders;
pub mod encoder;
pub mod error;
pub mod nn;
pub mod pretext;
pub mod raster;
pub mod rng;
pub mod train_eval;

pub use error::{Result, ScribeError};
pub use raster::{GrayRaster, ImageTensor};
pub use rng::RandomSource;
