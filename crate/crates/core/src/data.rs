//! MNIST ingestion and pixel-inversion noise.
//!
//! IDX files are big-endian: a 4-byte magic (`0x00000803` for images,
//! `0x00000801` for labels), one 4-byte extent per dimension, then raw
//! bytes. Gzip-compressed files are detected by their `1f 8b` prefix.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::{Rng, Tensor};

pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const NUM_CLASSES: usize = 10;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Environment variable naming the directory holding the MNIST IDX files.
pub const DATA_DIR_ENV: &str = "REPINF_DATA_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn expected_len(self) -> usize {
        match self {
            Split::Train => 60_000,
            Split::Test => 10_000,
        }
    }

    fn file_prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }
}

/// Images as rows of a `[N, 784]` tensor with intensities in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct Dataset {
    images: Tensor<f32>,
    labels: Vec<u8>,
    split: Split,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<u8>, split: Split) -> Result<Self> {
        let (n, d) = images.dims2()?;
        if d != IMAGE_PIXELS {
            return Err(Error::Shape(format!("images must have {IMAGE_PIXELS} columns, got {d}")));
        }
        if n != labels.len() {
            return Err(Error::format("dataset", format!("{n} images but {} labels", labels.len())));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::format("dataset", format!("label {bad} outside 0..{NUM_CLASSES}")));
        }
        if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::format("dataset", "pixel intensity outside [0, 1]"));
        }
        Ok(Dataset { images, labels, split })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &[f32] {
        self.images.row(i)
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    /// Row indices carrying `label`, in dataset order.
    pub fn indices_of(&self, label: u8) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == label).collect()
    }

    /// The first `n` rows (or all, if fewer).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: self.images.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            split: self.split,
        }
    }
}

/// Reads a file, transparently inflating gzip content.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::format(what, "truncated header"))
}

/// Parses an IDX image container into `(rows, cols, pixels)`, one byte per
/// pixel, images concatenated.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let what = "IDX image file";
    let magic = be_u32(bytes, 0, what)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::format(what, format!("bad magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4, what)? as usize;
    let rows = be_u32(bytes, 8, what)? as usize;
    let cols = be_u32(bytes, 12, what)? as usize;
    let body = &bytes[16..];
    let need = n * rows * cols;
    if body.len() < need {
        return Err(Error::format(what, format!("expected {need} pixel bytes, found {}", body.len())));
    }
    Ok((rows, cols, body[..need].to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let what = "IDX label file";
    let magic = be_u32(bytes, 0, what)?;
    if magic != LABEL_MAGIC {
        return Err(Error::format(what, format!("bad magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4, what)? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::format(what, format!("expected {n} labels, found {}", body.len())));
    }
    Ok(body[..n].to_vec())
}

/// Loads an image/label IDX pair, scaling bytes to `[0, 1]` by `/ 255`.
pub fn load_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<Dataset> {
    let (rows, cols, pixels) = parse_idx_images(&read_maybe_gz(images_path)?)?;
    if rows * cols != IMAGE_PIXELS {
        return Err(Error::format("IDX image file", format!("images are {rows}x{cols}, expected 28x28")));
    }
    let labels = parse_idx_labels(&read_maybe_gz(labels_path)?)?;
    let n = pixels.len() / IMAGE_PIXELS;
    if n != labels.len() {
        return Err(Error::format("IDX pair", format!("{n} images but {} labels", labels.len())));
    }
    let images = Tensor::new([n, IMAGE_PIXELS], pixels.into_iter().map(|b| b as f32 / 255.0).collect())?;
    Dataset::new(images, labels, split)
}

fn find_idx(dir: &Path, stem: &str) -> Result<PathBuf> {
    for name in [stem.to_string(), format!("{stem}.gz")] {
        let p = dir.join(&name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::io(
        dir.join(stem),
        std::io::Error::new(std::io::ErrorKind::NotFound, "MNIST file not found (plain or .gz)"),
    ))
}

/// Loads a canonical MNIST split from `dir`, checking the expected row count.
pub fn load_mnist(dir: &Path, split: Split) -> Result<Dataset> {
    let prefix = split.file_prefix();
    let images = find_idx(dir, &format!("{prefix}-images-idx3-ubyte"))?;
    let labels = find_idx(dir, &format!("{prefix}-labels-idx1-ubyte"))?;
    let ds = load_idx(&images, &labels, split)?;
    if ds.len() != split.expected_len() {
        return Err(Error::format(
            "MNIST split",
            format!("{:?} split has {} rows, expected {}", split, ds.len(), split.expected_len()),
        ));
    }
    Ok(ds)
}

/// Directory from [`DATA_DIR_ENV`], falling back to `data/mnist`.
pub fn default_data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data/mnist"))
}

/// Fraction of pixels to invert, plus the seed that picks them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub p: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(p: f64, seed: u64) -> Result<Self> {
        check_probability(p)?;
        Ok(NoiseSpec { p, seed })
    }
}

fn check_probability(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("noise fraction {p} outside [0, 1]")))
    }
}

/// Selects each of `len` pixels independently with probability `p`.
pub fn noise_mask(len: usize, p: f64, rng: &mut Rng) -> Result<Vec<bool>> {
    check_probability(p)?;
    Ok((0..len).map(|_| rng.uniform() < p).collect())
}

/// Inverts (`x -> 1 - x`) the selected pixels.
pub fn apply_mask(image: &[f32], mask: &[bool]) -> Result<Vec<f32>> {
    if image.len() != mask.len() {
        return Err(Error::Shape(format!("mask of {} for image of {}", mask.len(), image.len())));
    }
    Ok(image.iter().zip(mask).map(|(&x, &m)| if m { 1.0 - x } else { x }).collect())
}

/// Corrupts one image, drawing the pixel selection from `rng`.
pub fn corrupt_with(image: &[f32], p: f64, rng: &mut Rng) -> Result<Vec<f32>> {
    let mask = noise_mask(image.len(), p, rng)?;
    apply_mask(image, &mask)
}

/// Corrupts one image under `spec`; output depends only on `(image, spec)`.
pub fn corrupt(image: &Tensor<f32>, spec: &NoiseSpec) -> Result<Tensor<f32>> {
    let mut rng = Rng::new(spec.seed);
    let out = corrupt_with(image.data(), spec.p, &mut rng)?;
    Tensor::new(image.shape().to_vec(), out)
}
