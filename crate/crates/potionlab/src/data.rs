//! Datasets: image tensors, label bookkeeping, dataset views, the synthetic
//! Gaussian-blob generator, and the on-disk dataset format (little-endian
//! `f64` blobs plus a JSON manifest carrying shapes, labels and checksums).

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// N x H x W x C image tensor, row-major, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Images {
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    data: Vec<f64>,
}

impl Images {
    pub fn zeros(n: usize, h: usize, w: usize, c: usize) -> Self {
        Images {
            n,
            h,
            w,
            c,
            data: vec![0.0; n * h * w * c],
        }
    }

    pub fn from_data(n: usize, h: usize, w: usize, c: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * h * w * c {
            return Err(Error::Config(format!(
                "image buffer has {} values, expected {}x{}x{}x{} = {}",
                data.len(),
                n,
                h,
                w,
                c,
                n * h * w * c
            )));
        }
        Ok(Images { n, h, w, c, data })
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    /// Flattened pixels per sample (dense-layer input width).
    pub fn sample_len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let len = self.sample_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [f64] {
        let len = self.sample_len();
        &mut self.data[i * len..(i + 1) * len]
    }

    pub fn get(&self, i: usize, r: usize, col: usize, ch: usize) -> f64 {
        self.data[((i * self.h + r) * self.w + col) * self.c + ch]
    }

    pub fn set(&mut self, i: usize, r: usize, col: usize, ch: usize, value: f64) {
        self.data[((i * self.h + r) * self.w + col) * self.c + ch] = value;
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }
}

/// Which split a dataset carries; test_poisoned is the full clean test set
/// with triggers applied but clean labels kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    TestClean,
    TestPoisoned,
}

/// A dataset with poisoning bookkeeping. Clean datasets use the same type
/// with empty flags; `assigned` equals `clean` until an attack rewrites it.
#[derive(Debug, Clone)]
pub struct PoisonedDataset {
    pub images: Images,
    /// Ground-truth labels.
    pub clean: Vec<u32>,
    /// Labels as the trainer sees them (poisoned samples may differ).
    pub assigned: Vec<u32>,
    /// Membership in the manipulated set S_m.
    pub in_manipulated: Vec<bool>,
    /// Membership in the discovered forget set S_f (subset of S_m).
    pub in_forget: Vec<bool>,
    pub split: Split,
    pub classes: u32,
}

impl PoisonedDataset {
    pub fn from_clean(images: Images, labels: Vec<u32>, classes: u32, split: Split) -> Result<Self> {
        let n = images.count();
        if labels.len() != n {
            return Err(Error::Config(format!(
                "{} labels for {} images",
                labels.len(),
                n
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Config(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(PoisonedDataset {
            images,
            assigned: labels.clone(),
            clean: labels,
            in_manipulated: vec![false; n],
            in_forget: vec![false; n],
            split,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.images.count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Indices of S_m, ascending.
    pub fn manipulated_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.in_manipulated[i]).collect()
    }

    /// Indices of S_f, ascending.
    pub fn forget_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.in_forget[i]).collect()
    }

    /// Structural invariants: equal lengths, labels in range, S_f subset of S_m.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.clean.len() != n
            || self.assigned.len() != n
            || self.in_manipulated.len() != n
            || self.in_forget.len() != n
        {
            return Err(Error::Config("dataset field lengths disagree".into()));
        }
        for labels in [&self.clean, &self.assigned] {
            if let Some(&bad) = labels.iter().find(|&&l| l >= self.classes) {
                return Err(Error::Config(format!(
                    "label {bad} out of range for {} classes",
                    self.classes
                )));
            }
        }
        if (0..n).any(|i| self.in_forget[i] && !self.in_manipulated[i]) {
            return Err(Error::Config("forget set not a subset of S_m".into()));
        }
        Ok(())
    }
}

/// Which label column an evaluation or gradient uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    Assigned,
    Clean,
}

/// A borrowed subset of a dataset. Indices are canonicalised to ascending
/// order at construction, which fixes every reduction's summation order by
/// sample id: permuted index lists yield bitwise-identical results.
#[derive(Debug, Clone)]
pub struct View<'a> {
    data: &'a PoisonedDataset,
    indices: Vec<usize>,
    mode: LabelMode,
}

impl<'a> View<'a> {
    pub fn full(data: &'a PoisonedDataset, mode: LabelMode) -> Self {
        View {
            data,
            indices: (0..data.len()).collect(),
            mode,
        }
    }

    pub fn subset(data: &'a PoisonedDataset, mut indices: Vec<usize>, mode: LabelMode) -> Self {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&last) = indices.last() {
            assert!(last < data.len(), "view index {last} out of bounds");
        }
        View {
            data,
            indices,
            mode,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn mode(&self) -> LabelMode {
        self.mode
    }

    pub fn dataset(&self) -> &'a PoisonedDataset {
        self.data
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Pixels of the j-th view element.
    pub fn image(&self, j: usize) -> &[f64] {
        self.data.images.sample(self.indices[j])
    }

    /// Label of the j-th view element under the view's label mode.
    pub fn label(&self, j: usize) -> u32 {
        let i = self.indices[j];
        match self.mode {
            LabelMode::Assigned => self.data.assigned[i],
            LabelMode::Clean => self.data.clean[i],
        }
    }
}

// ---------------------------------------------------------------------------
// Seeding helpers
// ---------------------------------------------------------------------------

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives a named sub-seed from a base seed; stable across platforms.
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    splitmix64(base ^ fnv1a(tag.as_bytes()))
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Synthetic blob generator
// ---------------------------------------------------------------------------

/// Parameters of the built-in synthetic dataset: one Gaussian blob per class,
/// centres arranged on a ring so image corners stay near-black.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    pub classes: u32,
    pub train: usize,
    pub test: usize,
    pub height: usize,
    pub width: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    pub seed: u64,
}

fn default_channels() -> usize {
    1
}

impl BlobSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config("blob classes must be >= 2".into()));
        }
        if self.train == 0 || self.test == 0 {
            return Err(Error::Config("blob train/test counts must be > 0".into()));
        }
        if self.height < 4 || self.width < 4 || self.channels == 0 {
            return Err(Error::Config(
                "blob images must be at least 4x4 with >= 1 channel".into(),
            ));
        }
        Ok(())
    }
}

fn render_blobs(
    spec: &BlobSpec,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> (Images, Vec<u32>) {
    let (h, w, c) = (spec.height, spec.width, spec.channels);
    let mut images = Images::zeros(count, h, w, c);
    let mut labels = Vec::with_capacity(count);
    let ring = 0.28 * h.min(w) as f64;
    let sigma = 0.11 * h.min(w) as f64;
    let jitter = 0.05 * h.min(w) as f64;
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    for i in 0..count {
        let k = (i as u32) % spec.classes;
        labels.push(k);
        let phi = 2.0 * std::f64::consts::PI * k as f64 / spec.classes as f64;
        let gy: f64 = StandardNormal.sample(rng);
        let gx: f64 = StandardNormal.sample(rng);
        let by = cy + ring * phi.sin() + jitter * gy;
        let bx = cx + ring * phi.cos() + jitter * gx;
        let amp = 0.85 + 0.1 * rng.random::<f64>();
        for r in 0..h {
            for col in 0..w {
                let d2 = (r as f64 - by).powi(2) + (col as f64 - bx).powi(2);
                let base = amp * (-d2 / (2.0 * sigma * sigma)).exp();
                for ch in 0..c {
                    let noise: f64 = StandardNormal.sample(rng);
                    let v = (base + 0.04 * noise).clamp(0.0, 1.0);
                    images.set(i, r, col, ch, v);
                }
            }
        }
    }
    (images, labels)
}

/// Generates the synthetic train/test pair. Deterministic in `spec.seed`.
pub fn generate_blobs(spec: &BlobSpec) -> Result<(PoisonedDataset, PoisonedDataset)> {
    spec.validate()?;
    let mut train_rng = rng_from(derive_seed(spec.seed, "blobs/train"));
    let mut test_rng = rng_from(derive_seed(spec.seed, "blobs/test"));
    let (train_images, train_labels) = render_blobs(spec, spec.train, &mut train_rng);
    let (test_images, test_labels) = render_blobs(spec, spec.test, &mut test_rng);
    let train = PoisonedDataset::from_clean(train_images, train_labels, spec.classes, Split::Train)?;
    let test = PoisonedDataset::from_clean(test_images, test_labels, spec.classes, Split::TestClean)?;
    Ok((train, test))
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

pub fn sha256_hex(chunks: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for c in chunks {
        hasher.update(c);
    }
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

pub fn f64s_to_le_bytes(values: &[f64]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

pub fn le_bytes_to_f64s(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::Config(format!(
            "blob length {} is not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitManifest {
    count: usize,
    labels: Vec<u32>,
    images: String,
    checksum: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetManifest {
    version: u32,
    kind: String,
    height: usize,
    width: usize,
    channels: usize,
    classes: u32,
    train: SplitManifest,
    test: SplitManifest,
    /// Content id over shape, labels and blob checksums.
    id: String,
}

/// A clean train/test pair with its content id.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: PoisonedDataset,
    pub test: PoisonedDataset,
    pub id: String,
}

fn dataset_id(
    h: usize,
    w: usize,
    c: usize,
    classes: u32,
    train: (&[u32], &str),
    test: (&[u32], &str),
) -> String {
    let shape = format!("{h}x{w}x{c}/{classes}");
    let train_labels: Vec<u8> = train.0.iter().flat_map(|l| l.to_le_bytes()).collect();
    let test_labels: Vec<u8> = test.0.iter().flat_map(|l| l.to_le_bytes()).collect();
    sha256_hex(&[
        shape.as_bytes(),
        &train_labels,
        train.1.as_bytes(),
        &test_labels,
        test.1.as_bytes(),
    ])
}

/// Writes `manifest.json`, `train.f64`, `test.f64` into `dir`; returns the
/// dataset id. Deterministic: identical data produces identical bytes.
pub fn save_dataset(dir: &Path, train: &PoisonedDataset, test: &PoisonedDataset) -> Result<String> {
    train.validate()?;
    test.validate()?;
    let img = &train.images;
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let train_bytes = f64s_to_le_bytes(train.images.raw());
    let test_bytes = f64s_to_le_bytes(test.images.raw());
    let train_sum = sha256_hex(&[&train_bytes]);
    let test_sum = sha256_hex(&[&test_bytes]);
    let id = dataset_id(
        h,
        w,
        c,
        train.classes,
        (&train.clean, &train_sum),
        (&test.clean, &test_sum),
    );
    let manifest = DatasetManifest {
        version: 1,
        kind: "dataset".into(),
        height: h,
        width: w,
        channels: c,
        classes: train.classes,
        train: SplitManifest {
            count: train.len(),
            labels: train.clean.clone(),
            images: "train.f64".into(),
            checksum: train_sum,
        },
        test: SplitManifest {
            count: test.len(),
            labels: test.clean.clone(),
            images: "test.f64".into(),
            checksum: test_sum,
        },
        id: id.clone(),
    };
    write_bytes(&dir.join("train.f64"), &train_bytes)?;
    write_bytes(&dir.join("test.f64"), &test_bytes)?;
    let json = serde_json::to_vec_pretty(&manifest)
        .map_err(|e| Error::json("dataset manifest", e))?;
    write_bytes(&dir.join("manifest.json"), &json)?;
    Ok(id)
}

fn load_split(
    dir: &Path,
    m: &SplitManifest,
    h: usize,
    w: usize,
    c: usize,
    classes: u32,
    split: Split,
) -> Result<PoisonedDataset> {
    let path = dir.join(&m.images);
    let bytes = read_bytes(&path)?;
    let actual = sha256_hex(&[&bytes]);
    if actual != m.checksum {
        return Err(Error::corrupt(
            &path,
            format!("checksum mismatch: manifest {} vs blob {}", m.checksum, actual),
        ));
    }
    let values = le_bytes_to_f64s(&bytes)?;
    if m.labels.len() != m.count {
        return Err(Error::corrupt(dir.join("manifest.json"), "label count mismatch"));
    }
    let images = Images::from_data(m.count, h, w, c, values)
        .map_err(|_| Error::corrupt(&path, "blob size does not match declared shape"))?;
    PoisonedDataset::from_clean(images, m.labels.clone(), classes, split)
}

/// Loads and validates a dataset directory written by [`save_dataset`].
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("manifest.json");
    let bytes = read_bytes(&manifest_path)?;
    let manifest: DatasetManifest = serde_json::from_slice(&bytes)
        .map_err(|e| Error::json(manifest_path.display().to_string(), e))?;
    if manifest.version != 1 || manifest.kind != "dataset" {
        return Err(Error::corrupt(
            &manifest_path,
            format!("unsupported manifest (version {}, kind {})", manifest.version, manifest.kind),
        ));
    }
    let (h, w, c) = (manifest.height, manifest.width, manifest.channels);
    let train = load_split(dir, &manifest.train, h, w, c, manifest.classes, Split::Train)?;
    let test = load_split(dir, &manifest.test, h, w, c, manifest.classes, Split::TestClean)?;
    let id = dataset_id(
        h,
        w,
        c,
        manifest.classes,
        (&train.clean, &manifest.train.checksum),
        (&test.clean, &manifest.test.checksum),
    );
    if id != manifest.id {
        return Err(Error::corrupt(&manifest_path, "dataset id mismatch"));
    }
    Ok(Dataset { train, test, id })
}

/// Validates and re-saves an external dataset directory into `out`.
pub fn import_dataset(src: &Path, out: &Path) -> Result<String> {
    let ds = load_dataset(src)?;
    save_dataset(out, &ds.train, &ds.test)
}

pub fn default_out_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
