//! Dataset manifests: ordered sample references plus the alphabet.
//!
//! Label files are UTF-8 TSV, one `relative_path<TAB>transcript` pair per
//! line. A persisted manifest is a line-oriented text file whose first line
//! is a header carrying the format version, split name and alphabet; sample
//! lines follow in order as `path<TAB>transcript<TAB>writer<TAB>block`
//! (empty fields for absent tags).

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::alphabet::Alphabet;
use crate::error::{Result, ScribeError};

/// Reference to one labelled word image.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRef {
    /// Path relative to the manifest root.
    pub path: String,
    pub transcript: String,
    pub writer_id: Option<String>,
    pub block_id: Option<u32>,
}

/// Ordered collection of sample references sharing an alphabet.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub split_name: String,
    pub alphabet: Alphabet,
    pub samples: Vec<SampleRef>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Absolute path of sample `i`.
    pub fn sample_path(&self, i: usize) -> PathBuf {
        self.root.join(&self.samples[i].path)
    }

    /// Shallow copy with a different sample list; alphabet and root carry over.
    pub fn with_samples(&self, split_name: &str, samples: Vec<SampleRef>) -> Manifest {
        Manifest {
            root: self.root.clone(),
            split_name: split_name.to_string(),
            alphabet: self.alphabet.clone(),
            samples,
        }
    }
}

/// Build a manifest by reading a TSV label file under `root`.
///
/// Samples keep label-file order. The alphabet is the sorted set of
/// transcript characters. Each referenced image must exist.
pub fn build_manifest(root: &Path, label_file: &Path, split_name: &str) -> Result<Manifest> {
    let text = fs::read_to_string(label_file)?;
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    let mut chars = HashSet::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.splitn(4, '\t');
        let path = parts.next().unwrap_or_default();
        let transcript = parts.next().ok_or_else(|| {
            ScribeError::ManifestFormat(format!(
                "{}:{}: expected path<TAB>transcript",
                label_file.display(),
                lineno + 1
            ))
        })?;
        if transcript.is_empty() {
            return Err(ScribeError::ManifestFormat(format!(
                "{}:{}: empty transcript",
                label_file.display(),
                lineno + 1
            )));
        }
        let writer_id = parts.next().filter(|s| !s.is_empty()).map(str::to_string);
        let block_id = match parts.next().filter(|s| !s.is_empty()) {
            Some(s) => Some(s.parse::<u32>().map_err(|_| {
                ScribeError::ManifestFormat(format!(
                    "{}:{}: bad block id {s:?}",
                    label_file.display(),
                    lineno + 1
                ))
            })?),
            None => None,
        };
        if !seen.insert(path.to_string()) {
            return Err(ScribeError::DuplicatePath(path.to_string()));
        }
        let full = root.join(path);
        if !full.is_file() {
            return Err(ScribeError::MissingImage(full));
        }
        chars.extend(transcript.chars());
        samples.push(SampleRef {
            path: path.to_string(),
            transcript: transcript.to_string(),
            writer_id,
            block_id,
        });
    }
    if samples.is_empty() {
        return Err(ScribeError::EmptyLabelFile(label_file.to_path_buf()));
    }
    Ok(Manifest {
        root: root.to_path_buf(),
        split_name: split_name.to_string(),
        alphabet: Alphabet::from_chars(chars),
        samples,
    })
}

const MANIFEST_MAGIC: &str = "#scribe-manifest";
const MANIFEST_VERSION: &str = "v1";

/// Serialize to the line-oriented text format.
pub fn save_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!(
        "{MANIFEST_MAGIC}\t{MANIFEST_VERSION}\t{}\t{}\n",
        manifest.split_name,
        manifest.alphabet.key()
    ));
    for s in &manifest.samples {
        let block = s.block_id.map(|b| b.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            s.path,
            s.transcript,
            s.writer_id.as_deref().unwrap_or(""),
            block
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Load a manifest persisted by [`save_manifest`]. `root` resolves sample paths.
pub fn load_manifest(path: &Path, root: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| ScribeError::ManifestFormat(format!("{}: empty file", path.display())))?;
    let mut fields = header.split('\t');
    if fields.next() != Some(MANIFEST_MAGIC) || fields.next() != Some(MANIFEST_VERSION) {
        return Err(ScribeError::ManifestFormat(format!(
            "{}: bad header {header:?}",
            path.display()
        )));
    }
    let split_name = fields
        .next()
        .ok_or_else(|| ScribeError::ManifestFormat("missing split name".into()))?
        .to_string();
    let alphabet = Alphabet::from_chars(
        fields
            .next()
            .ok_or_else(|| ScribeError::ManifestFormat("missing alphabet".into()))?
            .chars(),
    );
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 4 {
            return Err(ScribeError::ManifestFormat(format!(
                "{}:{}: expected 4 fields, got {}",
                path.display(),
                lineno + 2,
                parts.len()
            )));
        }
        if !seen.insert(parts[0].to_string()) {
            return Err(ScribeError::DuplicatePath(parts[0].to_string()));
        }
        samples.push(SampleRef {
            path: parts[0].to_string(),
            transcript: parts[1].to_string(),
            writer_id: (!parts[2].is_empty()).then(|| parts[2].to_string()),
            block_id: if parts[3].is_empty() {
                None
            } else {
                Some(parts[3].parse().map_err(|_| {
                    ScribeError::ManifestFormat(format!("bad block id {:?}", parts[3]))
                })?)
            },
        });
    }
    Ok(Manifest {
        root: root.to_path_buf(),
        split_name,
        alphabet,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth::synth_word;

    fn write_corpus(dir: &Path, words: &[&str]) -> PathBuf {
        let mut labels = String::new();
        for (i, w) in words.iter().enumerate() {
            let (raster, _) = synth_word(w, i as u64).unwrap();
            let name = format!("img_{i}.png");
            raster.save_png(&dir.join(&name)).unwrap();
            labels.push_str(&format!("{name}\t{w}\n"));
        }
        let label_path = dir.join("labels.tsv");
        fs::write(&label_path, labels).unwrap();
        label_path
    }

    #[test]
    fn three_line_label_file() {
        let dir = tempfile::tempdir().unwrap();
        let labels = write_corpus(dir.path(), &["ab", "bc", "ca"]);
        let m = build_manifest(dir.path(), &labels, "train").unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.samples[0].transcript, "ab");
    }

    #[test]
    fn alphabet_is_char_union() {
        let dir = tempfile::tempdir().unwrap();
        let labels = write_corpus(dir.path(), &["ab", "bc"]);
        let m = build_manifest(dir.path(), &labels, "train").unwrap();
        assert_eq!(m.alphabet.chars(), &['a', 'b', 'c']);
    }

    #[test]
    fn empty_label_file_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let labels = dir.path().join("labels.tsv");
        fs::write(&labels, "").unwrap();
        assert!(matches!(
            build_manifest(dir.path(), &labels, "train"),
            Err(ScribeError::EmptyLabelFile(_))
        ));
    }

    #[test]
    fn missing_image_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let labels = dir.path().join("labels.tsv");
        fs::write(&labels, "ghost.png\tcat\n").unwrap();
        match build_manifest(dir.path(), &labels, "train") {
            Err(ScribeError::MissingImage(p)) => assert!(p.ends_with("ghost.png")),
            other => panic!("expected MissingImage, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_path_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let labels = write_corpus(dir.path(), &["ab"]);
        let mut text = fs::read_to_string(&labels).unwrap();
        text.push_str("img_0.png\tba\n");
        fs::write(&labels, text).unwrap();
        assert!(matches!(
            build_manifest(dir.path(), &labels, "train"),
            Err(ScribeError::DuplicatePath(_))
        ));
    }

    #[test]
    fn persist_roundtrip_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let labels = write_corpus(dir.path(), &["cat", "dog"]);
        let m = build_manifest(dir.path(), &labels, "train").unwrap();
        let mpath = dir.path().join("train.manifest");
        save_manifest(&m, &mpath).unwrap();
        let back = load_manifest(&mpath, dir.path()).unwrap();
        assert_eq!(m, back);
        // reload again to confirm ordering stability
        save_manifest(&back, &mpath).unwrap();
        let again = load_manifest(&mpath, dir.path()).unwrap();
        assert_eq!(back.samples, again.samples);
    }
}
