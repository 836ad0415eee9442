//! Batch assembly: padded image blocks plus encoded transcripts.

use ndarray::{Array2, Array3};
use rayon::prelude::*;

use crate::corpus::manifest::Manifest;
use crate::error::{Result, ScribeError};
use crate::raster::{normalize_image, GrayRaster, ImageTensor, BACKGROUND};

/// A right-padded image block with per-sample widths and encoded targets.
#[derive(Clone, Debug)]
pub struct Batch {
    /// (batch, height, padded width); padding holds the background value.
    pub images: Array3<f64>,
    /// Actual width of each sample before padding.
    pub widths: Vec<usize>,
    /// Character ids per sample.
    pub targets: Vec<Vec<usize>>,
    /// Transcript lengths (`targets[i].len()`).
    pub lengths: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.widths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.widths.is_empty()
    }

    /// View of sample `i` trimmed back to its own width.
    pub fn image(&self, i: usize) -> Array2<f64> {
        self.images
            .index_axis(ndarray::Axis(0), i)
            .slice(ndarray::s![.., ..self.widths[i]])
            .to_owned()
    }
}

/// Assemble a batch from already-normalized images and transcripts.
pub fn collate(images: &[ImageTensor], targets: Vec<Vec<usize>>) -> Batch {
    assert_eq!(images.len(), targets.len());
    assert!(!images.is_empty(), "empty batch");
    let height = images[0].height();
    let widths: Vec<usize> = images.iter().map(|im| im.width()).collect();
    let max_w = *widths.iter().max().unwrap();
    let mut block = Array3::from_elem((images.len(), height, max_w), BACKGROUND);
    for (i, im) in images.iter().enumerate() {
        assert_eq!(im.height(), height, "mixed heights in a batch");
        block
            .slice_mut(ndarray::s![i, .., ..im.width()])
            .assign(im.values());
    }
    let lengths = targets.iter().map(Vec::len).collect();
    Batch {
        images: block,
        widths,
        targets,
        lengths,
    }
}

/// Load `indices` of `manifest` from disk and collate them.
///
/// Images are read as 8-bit grayscale PNG, normalized to height 64, and
/// right-padded with background to the widest sample in the batch.
pub fn load_batch(manifest: &Manifest, indices: &[usize]) -> Result<Batch> {
    let n = manifest.len();
    for &i in indices {
        if i >= n {
            return Err(ScribeError::IndexOutOfRange { index: i, len: n });
        }
    }
    let images = indices
        .par_iter()
        .map(|&i| {
            let raster = GrayRaster::load_png(&manifest.sample_path(i))?;
            normalize_image(&raster)
        })
        .collect::<Result<Vec<_>>>()?;
    let targets = indices
        .iter()
        .map(|&i| manifest.alphabet.encode(&manifest.samples[i].transcript))
        .collect::<Result<Vec<_>>>()?;
    Ok(collate(&images, targets))
}

/// A manifest with all images resident in memory.
///
/// Training loops iterate the corpus many times; loading once and batching
/// from memory keeps epochs cheap. `batch` produces exactly what
/// [`load_batch`] would.
#[derive(Clone, Debug)]
pub struct LoadedCorpus {
    pub manifest: Manifest,
    pub images: Vec<ImageTensor>,
}

impl LoadedCorpus {
    pub fn load(manifest: &Manifest) -> Result<Self> {
        let images = (0..manifest.len())
            .into_par_iter()
            .map(|i| {
                let raster = GrayRaster::load_png(&manifest.sample_path(i))?;
                normalize_image(&raster)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            manifest: manifest.clone(),
            images,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let n = self.len();
        for &i in indices {
            if i >= n {
                return Err(ScribeError::IndexOutOfRange { index: i, len: n });
            }
        }
        let images: Vec<ImageTensor> = indices.iter().map(|&i| self.images[i].clone()).collect();
        let targets = indices
            .iter()
            .map(|&i| {
                self.manifest
                    .alphabet
                    .encode(&self.manifest.samples[i].transcript)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(collate(&images, targets))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::manifest::build_manifest;
    use crate::corpus::synth::synth_word;
    use std::fs;

    fn corpus(words: &[&str]) -> (tempfile::TempDir, Manifest) {
        let dir = tempfile::tempdir().unwrap();
        let mut labels = String::new();
        for (i, w) in words.iter().enumerate() {
            let (raster, _) = synth_word(w, i as u64).unwrap();
            let name = format!("img_{i}.png");
            raster.save_png(&dir.path().join(&name)).unwrap();
            labels.push_str(&format!("{name}\t{w}\n"));
        }
        let label_path = dir.path().join("labels.tsv");
        fs::write(&label_path, labels).unwrap();
        let m = build_manifest(dir.path(), &label_path, "train").unwrap();
        (dir, m)
    }

    #[test]
    fn pads_to_widest() {
        let (_dir, m) = corpus(&["ab", "abcdef"]);
        let b = load_batch(&m, &[0, 1]).unwrap();
        assert_eq!(b.widths.len(), 2);
        assert!(b.widths[0] < b.widths[1]);
        assert_eq!(b.images.shape()[2], b.widths[1]);
        // padding region is background
        let pad = b.images[[0, 10, b.widths[1] - 1]];
        assert_eq!(pad, BACKGROUND);
    }

    #[test]
    fn single_sample_no_padding() {
        let (_dir, m) = corpus(&["cat"]);
        let b = load_batch(&m, &[0]).unwrap();
        assert_eq!(b.images.shape()[2], b.widths[0]);
    }

    #[test]
    fn transcripts_encode_via_alphabet() {
        let (_dir, m) = corpus(&["ab", "ba"]);
        let b = load_batch(&m, &[0]).unwrap();
        assert_eq!(b.targets[0], vec![0, 1]); // a->0, b->1 in sorted alphabet
        assert_eq!(b.lengths[0], 2);
    }

    #[test]
    fn out_of_range_index_is_error() {
        let (_dir, m) = corpus(&["ab"]);
        assert!(matches!(
            load_batch(&m, &[3]),
            Err(ScribeError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn loaded_corpus_matches_disk_batches() {
        let (_dir, m) = corpus(&["cat", "dog", "bird"]);
        let loaded = LoadedCorpus::load(&m).unwrap();
        let a = load_batch(&m, &[2, 0]).unwrap();
        let b = loaded.batch(&[2, 0]).unwrap();
        assert_eq!(a.images, b.images);
        assert_eq!(a.targets, b.targets);
    }
}
