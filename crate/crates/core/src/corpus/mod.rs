//! Dataset representation: alphabets, manifests, synthetic rendering,
//! deterministic splits and batch assembly.

pub mod alphabet;
pub mod batch;
pub mod manifest;
pub mod split;
pub mod synth;

pub use alphabet::Alphabet;
pub use batch::{collate, load_batch, Batch, LoadedCorpus};
pub use manifest::{build_manifest, load_manifest, save_manifest, Manifest, SampleRef};
pub use split::{split_blocks, split_fraction, shuffled_order, BlockRange, SplitSpec};
pub use synth::{generate_words, supported_chars, synth_word, CANVAS_HEIGHT};
