//! MNIST-family datasets from IDX files.
//!
//! Images are `0x00000803` IDX files of 28x28 `u8` pixels, labels are
//! `0x00000801` files of `u8` classes. Either may be gzip-compressed; the
//! gzip magic is sniffed, not inferred from the file name.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use thiserror::Error;

use crate::nn::Tensor;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const SIDE: usize = 28;
pub const NUM_CLASSES: usize = 10;

/// Dataset names known to the standard on-disk layout.
pub const STANDARD_NAMES: [&str; 4] = ["mnist", "kmnist", "fashion_mnist", "notmnist"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {detail}")]
    Parse { path: PathBuf, detail: String },
    #[error("unknown dataset '{name}' (registered: {known})")]
    UnknownDataset { name: String, known: String },
    #[error("registry line {line}: {detail}")]
    Registry { line: usize, detail: String },
    #[error("dataset '{name}': {detail}")]
    Inconsistent { name: String, detail: String },
}

fn parse_err(path: &Path, detail: impl Into<String>) -> DatasetError {
    DatasetError::Parse { path: path.to_path_buf(), detail: detail.into() }
}

fn open_maybe_gzip(path: &Path) -> Result<Vec<u8>, DatasetError> {
    let io_err = |source| DatasetError::Io { path: path.to_path_buf(), source };
    let mut raw = Vec::new();
    File::open(path).and_then(|f| BufReader::new(f).read_to_end(&mut raw)).map_err(io_err)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(io_err)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes.get(at..at + 4).map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Parses an IDX image file into `[N, 28, 28, 1]` pixels in `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<Tensor<f32>, DatasetError> {
    let magic = be_u32(bytes, 0).ok_or_else(|| parse_err(path, "truncated header"))?;
    if magic != IMAGE_MAGIC {
        return Err(parse_err(path, format!("bad image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}")));
    }
    let dims: Vec<usize> = (0..3)
        .map(|i| be_u32(bytes, 4 + 4 * i).map(|d| d as usize))
        .collect::<Option<_>>()
        .ok_or_else(|| parse_err(path, "truncated header"))?;
    let (n, rows, cols) = (dims[0], dims[1], dims[2]);
    if rows != SIDE || cols != SIDE {
        return Err(parse_err(path, format!("images are {rows}x{cols}, expected 28x28")));
    }
    let body = &bytes[16..];
    let need = n * SIDE * SIDE;
    if body.len() != need {
        return Err(parse_err(
            path,
            format!("header announces {n} images ({need} bytes) but body has {} bytes", body.len()),
        ));
    }
    let data = body.iter().map(|&b| b as f32 / 255.0).collect();
    Tensor::new(vec![n, SIDE, SIDE, 1], data).map_err(|e| parse_err(path, e.to_string()))
}

/// Parses an IDX label file; every label must be in `0..10`.
pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>, DatasetError> {
    let magic = be_u32(bytes, 0).ok_or_else(|| parse_err(path, "truncated header"))?;
    if magic != LABEL_MAGIC {
        return Err(parse_err(path, format!("bad label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}")));
    }
    let n = be_u32(bytes, 4).ok_or_else(|| parse_err(path, "truncated header"))? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(parse_err(path, format!("header announces {n} labels but body has {} bytes", body.len())));
    }
    if let Some((i, &l)) = body.iter().enumerate().find(|(_, &l)| l as usize >= NUM_CLASSES) {
        return Err(parse_err(path, format!("label {l} at index {i} is outside 0..=9")));
    }
    Ok(body.to_vec())
}

pub fn load_idx_images(path: &Path) -> Result<Tensor<f32>, DatasetError> {
    parse_idx_images(&open_maybe_gzip(path)?, path)
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>, DatasetError> {
    parse_idx_labels(&open_maybe_gzip(path)?, path)
}

fn write_file(path: &Path, bytes: &[u8], gzip: bool) -> Result<(), DatasetError> {
    let io_err = |source| DatasetError::Io { path: path.to_path_buf(), source };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    if gzip {
        let mut enc = GzEncoder::new(w, Compression::default());
        enc.write_all(bytes).map_err(io_err)?;
        w = enc.finish().map_err(io_err)?;
    } else {
        w.write_all(bytes).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Quantises pixels back to bytes (`round(x * 255)`) and writes an IDX file.
pub fn write_idx_images(path: &Path, images: &Tensor<f32>, gzip: bool) -> Result<(), DatasetError> {
    if images.rank() != 4 || images.shape()[1..] != [SIDE, SIDE, 1] {
        return Err(parse_err(path, format!("expected [N,28,28,1] images, got {:?}", images.shape())));
    }
    let mut bytes = Vec::with_capacity(16 + images.len());
    bytes.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    for d in [images.dim(0), SIDE, SIDE] {
        bytes.extend_from_slice(&(d as u32).to_be_bytes());
    }
    bytes.extend(images.data().iter().map(|&x| (x.clamp(0.0, 1.0) * 255.0).round() as u8));
    write_file(path, &bytes, gzip)
}

pub fn write_idx_labels(path: &Path, labels: &[u8], gzip: bool) -> Result<(), DatasetError> {
    let mut bytes = Vec::with_capacity(8 + labels.len());
    bytes.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    bytes.extend_from_slice(labels);
    write_file(path, &bytes, gzip)
}

/// Images in `[0,1]^(28x28)` with labels in `0..10`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImageSet {
    pub name: String,
    pub images: Tensor<f32>,
    pub labels: Vec<u8>,
}

impl LabeledImageSet {
    pub fn new(name: impl Into<String>, images: Tensor<f32>, labels: Vec<u8>) -> Result<Self, DatasetError> {
        let name = name.into();
        let bad = |detail: String| DatasetError::Inconsistent { name: name.clone(), detail };
        if images.rank() != 4 || images.shape()[1..] != [SIDE, SIDE, 1] {
            return Err(bad(format!("images must be [N,28,28,1], got {:?}", images.shape())));
        }
        if images.dim(0) != labels.len() {
            return Err(bad(format!("{} images but {} labels", images.dim(0), labels.len())));
        }
        if images.data().iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(bad("pixel outside [0,1]".into()));
        }
        if labels.iter().any(|&l| l as usize >= NUM_CLASSES) {
            return Err(bad("label outside 0..=9".into()));
        }
        Ok(Self { name, images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-class label counts.
    pub fn class_counts(&self) -> [u64; NUM_CLASSES] {
        let mut counts = [0u64; NUM_CLASSES];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Writes the four-file IDX layout (`train-*` or `t10k-*` prefix).
    pub fn write_idx(&self, dir: &Path, prefix: &str, gzip: bool) -> Result<(PathBuf, PathBuf), DatasetError> {
        let ext = if gzip { ".gz" } else { "" };
        let img = dir.join(format!("{prefix}-images-idx3-ubyte{ext}"));
        let lbl = dir.join(format!("{prefix}-labels-idx1-ubyte{ext}"));
        write_idx_images(&img, &self.images, gzip)?;
        write_idx_labels(&lbl, &self.labels, gzip)?;
        Ok((img, lbl))
    }
}

/// A small learnable stand-in for the real datasets: class `k` is a bright
/// horizontal bar at rows `2k+4..2k+6` over uniform background noise in
/// `[0, 0.3)`. Deterministic in `seed`; labels cycle `0..10`.
pub fn synthetic_bars(name: &str, n: usize, seed: u64) -> LabeledImageSet {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<u8> = (0..n).map(|i| (i % NUM_CLASSES) as u8).collect();
    let mut data = Vec::with_capacity(n * SIDE * SIDE);
    for &l in &labels {
        let rows = 2 * l as usize + 4..2 * l as usize + 6;
        for y in 0..SIDE {
            for _ in 0..SIDE {
                let noise = rng.random::<f32>() * 0.3;
                data.push(if rows.contains(&y) { 1.0 - noise } else { noise });
            }
        }
    }
    let images = Tensor::new(vec![n, SIDE, SIDE, 1], data).expect("sized above");
    LabeledImageSet::new(name, images, labels).expect("valid by construction")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

/// Dataset name -> four IDX paths.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Registry {
    entries: BTreeMap<String, DatasetPaths>,
}

impl Registry {
    pub fn insert(&mut self, name: impl Into<String>, paths: DatasetPaths) {
        self.entries.insert(name.into(), paths);
    }

    pub fn get(&self, name: &str) -> Result<&DatasetPaths, DatasetError> {
        self.entries
            .get(name)
            .ok_or_else(|| DatasetError::UnknownDataset { name: name.to_string(), known: self.names().join(", ") })
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    /// Standard layout: `<root>/<name>/{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]`
    /// for each of [`STANDARD_NAMES`]. A `.gz` file is used when the plain
    /// one is absent.
    pub fn standard(root: &Path) -> Self {
        let mut reg = Self::default();
        for name in STANDARD_NAMES {
            let dir = root.join(name);
            let pick = |stem: &str| {
                let plain = dir.join(stem);
                if plain.exists() {
                    plain
                } else {
                    dir.join(format!("{stem}.gz"))
                }
            };
            reg.insert(
                name,
                DatasetPaths {
                    train_images: pick("train-images-idx3-ubyte"),
                    train_labels: pick("train-labels-idx1-ubyte"),
                    test_images: pick("t10k-images-idx3-ubyte"),
                    test_labels: pick("t10k-labels-idx1-ubyte"),
                },
            );
        }
        reg
    }

    /// Parses the plain-text registry format:
    ///
    /// ```text
    /// # name  train-images  train-labels  test-images  test-labels
    /// mnist   mnist/train-images-idx3-ubyte.gz  ...
    /// ```
    ///
    /// Relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, DatasetError> {
        let mut reg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 5 {
                return Err(DatasetError::Registry {
                    line: i + 1,
                    detail: format!("expected name and four paths, got {} fields", fields.len()),
                });
            }
            let p = |s: &str| base.join(s);
            reg.insert(
                fields[0],
                DatasetPaths {
                    train_images: p(fields[1]),
                    train_labels: p(fields[2]),
                    test_images: p(fields[3]),
                    test_labels: p(fields[4]),
                },
            );
        }
        Ok(reg)
    }

    pub fn from_file(path: &Path) -> Result<Self, DatasetError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }
}

/// Loads `(train, validation)`; validation is the dataset's test split.
pub fn load_dataset(registry: &Registry, name: &str) -> Result<(LabeledImageSet, LabeledImageSet), DatasetError> {
    let paths = registry.get(name)?;
    let train =
        LabeledImageSet::new(name, load_idx_images(&paths.train_images)?, load_idx_labels(&paths.train_labels)?)?;
    let val = LabeledImageSet::new(name, load_idx_images(&paths.test_images)?, load_idx_labels(&paths.test_labels)?)?;
    Ok((train, val))
}
