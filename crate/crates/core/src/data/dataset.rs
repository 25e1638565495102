use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::text::{tokenize, Vocabulary};
use crate::decoder::{TokenId, EOS};
use crate::error::{Error, Result};
use crate::metrics::Sentence;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub captions: Vec<String>,
}

/// Dataset description stored as JSON next to the feature blob.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub n_v: usize,
    pub n_s: usize,
    pub features: String,
    pub splits: Splits,
    pub records: Vec<ManifestRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

impl Splits {
    pub fn ids(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }
}

/// One video as stored on disk: features plus raw caption strings.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRecord {
    pub id: String,
    pub visual: Vec<f32>,
    pub semantic: Vec<f32>,
    pub captions: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub records: Vec<RawRecord>,
}

/// A video ready for the decoder: features, tokenized references and
/// EOS-terminated encoded annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoRecord<T> {
    pub id: String,
    pub visual: Tensor<T>,
    pub semantic: Tensor<T>,
    pub references: Vec<Sentence>,
    pub annotations: Vec<Vec<TokenId>>,
}

impl<T: Real> VideoRecord<T> {
    /// Word count of annotation `k` (EOS excluded).
    pub fn annotation_len(&self, k: usize) -> usize {
        self.annotations[k].len().saturating_sub(1)
    }
}

impl Manifest {
    /// Checks split disjointness, id uniqueness and caption presence.
    pub fn validate(&self) -> Result<()> {
        if self.n_v == 0 || self.n_s == 0 {
            return Err(Error::Validation("n_v and n_s must be positive".into()));
        }
        let mut ids = BTreeSet::new();
        for r in &self.records {
            if !ids.insert(r.id.as_str()) {
                return Err(Error::Validation(format!("duplicate record id `{}`", r.id)));
            }
            if r.captions.is_empty() {
                return Err(Error::Validation(format!("record `{}` has no captions", r.id)));
            }
        }
        let mut seen = BTreeSet::new();
        for split in [Split::Train, Split::Validation, Split::Test] {
            for id in self.splits.ids(split) {
                if !ids.contains(id.as_str()) {
                    return Err(Error::Validation(format!("split id `{id}` has no feature row")));
                }
                if !seen.insert(id.as_str()) {
                    return Err(Error::Validation(format!("id `{id}` appears in more than one split")));
                }
            }
        }
        Ok(())
    }

    pub fn row_bytes(&self) -> usize {
        (self.n_v + self.n_s) * 4
    }
}

impl Dataset {
    pub fn record(&self, id: &str) -> Option<&RawRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn split(&self, split: Split) -> Vec<&RawRecord> {
        self.manifest
            .splits
            .ids(split)
            .iter()
            .filter_map(|id| self.record(id))
            .collect()
    }

    /// Tokenized captions of a split, for vocabulary building.
    pub fn tokenized(&self, split: Split) -> Vec<Sentence> {
        self.split(split)
            .into_iter()
            .flat_map(|r| r.captions.iter().map(|c| tokenize(c)))
            .collect()
    }

    /// Encodes a split against `vocab`.
    pub fn encode<T: Real>(&self, split: Split, vocab: &Vocabulary) -> Result<Vec<VideoRecord<T>>> {
        self.split(split).into_iter().map(|r| encode_record(r, vocab)).collect()
    }
}

pub(crate) fn encode_record<T: Real>(r: &RawRecord, vocab: &Vocabulary) -> Result<VideoRecord<T>> {
    let references: Vec<Sentence> = r.captions.iter().map(|c| tokenize(c)).collect();
    let annotations = references
        .iter()
        .map(|t| {
            let mut ids = vocab.encode(t);
            ids.push(EOS);
            ids
        })
        .collect();
    Ok(VideoRecord {
        id: r.id.clone(),
        visual: Tensor::vector(r.visual.iter().map(|&x| T::of(x as f64)).collect())?,
        semantic: Tensor::vector(r.semantic.iter().map(|&x| T::of(x as f64)).collect())?,
        references,
        annotations,
    })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Reads a manifest and its feature blob. Features are little-endian `f32`,
/// `v` then `s` per record, in manifest record order, without header.
pub fn load_dataset(manifest_path: &Path, features_path: &Path) -> Result<Dataset> {
    let text = read(manifest_path)?;
    let manifest: Manifest = serde_json::from_slice(&text).map_err(|e| Error::Json {
        path: manifest_path.to_path_buf(),
        source: e,
    })?;
    manifest.validate()?;
    let blob = read(features_path)?;
    let row = manifest.row_bytes();
    let expected = row * manifest.records.len();
    if blob.len() != expected {
        return Err(Error::Format {
            context: features_path.display().to_string(),
            offset: blob.len().min(expected) as u64,
            message: format!("expected {expected} bytes, found {}", blob.len()),
        });
    }
    let mut records = Vec::with_capacity(manifest.records.len());
    for (k, (rec, chunk)) in manifest.records.iter().zip(blob.chunks_exact(row)).enumerate() {
        let values: Vec<f32> = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if let Some(i) = values.iter().position(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::Validation(format!(
                "feature {i} of record `{}` (byte {}) is {}, outside [0, 1]",
                rec.id,
                k * row + 4 * i,
                values[i]
            )));
        }
        let (v, s) = values.split_at(manifest.n_v);
        records.push(RawRecord {
            id: rec.id.clone(),
            visual: v.to_vec(),
            semantic: s.to_vec(),
            captions: rec.captions.clone(),
        });
    }
    Ok(Dataset { manifest, records })
}

/// Resolves the feature file named in a manifest relative to its directory.
pub fn features_path_for(manifest_path: &Path, manifest: &Manifest) -> PathBuf {
    manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&manifest.features)
}

impl Dataset {
    /// Loads a manifest and the feature file it names.
    pub fn open(manifest_path: &Path) -> Result<Dataset> {
        let text = read(manifest_path)?;
        let manifest: Manifest = serde_json::from_slice(&text).map_err(|e| Error::Json {
            path: manifest_path.to_path_buf(),
            source: e,
        })?;
        load_dataset(manifest_path, &features_path_for(manifest_path, &manifest))
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Writes `manifest.json` and the feature blob into `dir`; returns the
/// manifest path.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let m = &dataset.manifest;
    m.validate()?;
    if dataset.records.len() != m.records.len() {
        return Err(Error::Validation("records do not match the manifest".into()));
    }
    let mut blob = Vec::with_capacity(m.row_bytes() * dataset.records.len());
    for (r, mr) in dataset.records.iter().zip(&m.records) {
        if r.id != mr.id || r.visual.len() != m.n_v || r.semantic.len() != m.n_s {
            return Err(Error::Validation(format!("record `{}` does not match the manifest", r.id)));
        }
        for x in r.visual.iter().chain(&r.semantic) {
            blob.extend_from_slice(&x.to_le_bytes());
        }
    }
    let manifest_path = dir.join("manifest.json");
    let mut json = serde_json::to_vec_pretty(m).map_err(|e| Error::Json {
        path: manifest_path.clone(),
        source: e,
    })?;
    json.push(b'\n');
    write_atomic(&dir.join(&m.features), &blob)?;
    write_atomic(&manifest_path, &json)?;
    Ok(manifest_path)
}

/// Picks `n` annotation indices out of `available`: uniformly without
/// replacement up to `available`, the remainder uniformly with replacement.
pub fn sample_annotations(available: usize, n: usize, rng: &mut impl Rng) -> Vec<usize> {
    if available == 0 || n == 0 {
        return Vec::new();
    }
    let first = n.min(available);
    let mut out = index::sample(rng, available, first).into_vec();
    out.extend((first..n).map(|_| rng.gen_range(0..available)));
    out
}

/// Caption file: one `<id>\t<caption>` line per video.
pub fn write_caption_file(path: &Path, captions: &[(String, String)]) -> Result<()> {
    let text: String = captions.iter().map(|(id, c)| format!("{id}\t{c}\n")).collect();
    write_atomic(path, text.as_bytes())
}

pub fn read_caption_file(path: &Path) -> Result<Vec<(String, String)>> {
    let bytes = read(path)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Format {
        context: path.display().to_string(),
        offset: e.utf8_error().valid_up_to() as u64,
        message: "caption file is not UTF-8".into(),
    })?;
    text.lines()
        .enumerate()
        .map(|(n, line)| {
            line.split_once('\t')
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .ok_or_else(|| Error::Validation(format!("caption line {} has no tab", n + 1)))
        })
        .collect()
}
