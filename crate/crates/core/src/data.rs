//! Labelled datasets: MNIST from IDX files and small synthetic sets.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Pixel normalization applied at load: `(p/255 - mean) / std`.
pub const MNIST_MEAN: f32 = 0.1307;
pub const MNIST_STD: f32 = 0.3081;

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

/// Environment variable naming the dataset root when none is given.
pub const DATA_DIR_ENV: &str = "HADANET_DATA_DIR";

/// Labelled samples of one fixed shape, stored back to back.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    sample_shape: Vec<usize>,
    pixels: Vec<f32>,
    labels: Vec<u8>,
    classes: usize,
}

impl Dataset {
    /// Samples stacked along the first axis of `images`, one label each.
    pub fn new(images: Tensor, labels: Vec<u8>, classes: usize) -> Result<Self> {
        if images.rank() < 2 || images.shape()[0] != labels.len() {
            return Err(Error::shape(format!(
                "{} labels for images of shape {:?}",
                labels.len(),
                images.shape()
            )));
        }
        let sample_shape = images.shape()[1..].to_vec();
        Dataset::from_parts(sample_shape, images.into_data(), labels, classes)
    }

    /// Like [`Dataset::new`] but also accepts zero samples.
    pub fn from_parts(sample_shape: Vec<usize>, pixels: Vec<f32>, labels: Vec<u8>, classes: usize) -> Result<Self> {
        let len: usize = sample_shape.iter().product();
        if sample_shape.is_empty() || len == 0 || pixels.len() != len * labels.len() {
            return Err(Error::shape(format!(
                "{} values for {} samples of shape {sample_shape:?}",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::invalid(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(Dataset {
            sample_shape,
            pixels,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// All sample values, sample after sample.
    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    /// Shape of one sample.
    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    fn sample_len(&self) -> usize {
        self.sample_shape.iter().product()
    }

    fn stacked(&self, count: usize, data: Vec<f32>) -> Tensor {
        let mut shape = vec![count];
        shape.extend_from_slice(&self.sample_shape);
        Tensor::new(&shape, data).expect("non-empty batch")
    }

    /// Gathers the given samples into one batch. `indices` must be non-empty.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<u8>) {
        let len = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend_from_slice(&self.pixels[i * len..(i + 1) * len]);
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (self.stacked(indices.len(), data), labels)
    }

    /// Samples `start..end` as one batch; requires `start < end <= len`.
    pub fn range(&self, start: usize, end: usize) -> (Tensor, Vec<u8>) {
        let len = self.sample_len();
        let data = self.pixels[start * len..end * len].to_vec();
        (self.stacked(end - start, data), self.labels[start..end].to_vec())
    }

    /// Every sample as one `[N, ...]` tensor.
    pub fn images(&self) -> Tensor {
        self.range(0, self.len()).0
    }

    /// The first `n` samples (all of them if fewer).
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            sample_shape: self.sample_shape.clone(),
            pixels: self.pixels[..n * self.sample_len()].to_vec(),
            labels: self.labels[..n].to_vec(),
            classes: self.classes,
        }
    }
}

fn data_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Data {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| data_err(path, e.to_string()))
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Parses an IDX3 image file: big-endian magic, count, rows, cols, then
/// `count·rows·cols` unsigned bytes. Returns `(pixels, count, rows, cols)`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(Vec<u8>, usize, usize, usize)> {
    if bytes.len() < 16 {
        return Err(data_err(path, "file shorter than the IDX3 header"));
    }
    let magic = be_u32(bytes, 0);
    if magic != IDX_IMAGE_MAGIC {
        return Err(data_err(path, format!("bad image magic {magic:#010x}")));
    }
    let (n, rows, cols) = (be_u32(bytes, 4) as usize, be_u32(bytes, 8) as usize, be_u32(bytes, 12) as usize);
    let body = &bytes[16..];
    if body.len() != n * rows * cols {
        return Err(data_err(
            path,
            format!("expected {} pixel bytes, found {}", n * rows * cols, body.len()),
        ));
    }
    Ok((body.to_vec(), n, rows, cols))
}

/// Parses an IDX1 label file: big-endian magic and count, then the labels.
pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    if bytes.len() < 8 {
        return Err(data_err(path, "file shorter than the IDX1 header"));
    }
    let magic = be_u32(bytes, 0);
    if magic != IDX_LABEL_MAGIC {
        return Err(data_err(path, format!("bad label magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4) as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(data_err(path, format!("expected {n} labels, found {}", body.len())));
    }
    if let Some(bad) = body.iter().find(|&&l| l > 9) {
        return Err(data_err(path, format!("label {bad} outside 0..=9")));
    }
    Ok(body.to_vec())
}

fn find_file(dir: &Path, names: &[&str]) -> Result<PathBuf> {
    names
        .iter()
        .map(|n| dir.join(n))
        .find(|p| p.is_file())
        .ok_or_else(|| data_err(&dir.join(names[0]), "file not found (uncompressed IDX expected)"))
}

fn load_split(dir: &Path, images: &[&str], labels: &[&str]) -> Result<Dataset> {
    let ipath = find_file(dir, images)?;
    let lpath = find_file(dir, labels)?;
    let (pixels, n, rows, cols) = parse_idx_images(&read_file(&ipath)?, &ipath)?;
    let labels = parse_idx_labels(&read_file(&lpath)?, &lpath)?;
    if labels.len() != n {
        return Err(data_err(
            &lpath,
            format!("{} labels for {n} images in {}", labels.len(), ipath.display()),
        ));
    }
    let data = pixels
        .iter()
        .map(|&p| (p as f32 / 255.0 - MNIST_MEAN) / MNIST_STD)
        .collect();
    let images = Tensor::new(&[n, 1, rows, cols], data)?;
    Dataset::new(images, labels, 10)
}

/// Loads the train and test splits from `dir`, which must hold the four
/// uncompressed IDX files under their distribution names.
pub fn load_mnist(dir: &Path) -> Result<(Dataset, Dataset)> {
    if !dir.is_dir() {
        return Err(data_err(dir, "dataset directory does not exist"));
    }
    let train = load_split(
        dir,
        &["train-images-idx3-ubyte", "train-images.idx3-ubyte"],
        &["train-labels-idx1-ubyte", "train-labels.idx1-ubyte"],
    )?;
    let test = load_split(
        dir,
        &["t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"],
        &["t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"],
    )?;
    Ok((train, test))
}

/// `explicit` if given, else `$HADANET_DATA_DIR`.
pub fn resolve_data_dir(explicit: Option<&Path>) -> Result<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p.to_path_buf());
    }
    match env::var_os(DATA_DIR_ENV) {
        Some(v) if !v.is_empty() => Ok(PathBuf::from(v)),
        _ => Err(data_err(
            Path::new(""),
            format!("no dataset directory given and {DATA_DIR_ENV} is unset"),
        )),
    }
}

/// Two Gaussian blobs in the plane, centred at `(±2, ±2)` with standard
/// deviation 0.5, labels alternating 0/1. The classes overlap with
/// probability below 1e-8 per sample, so they are separable in practice.
pub fn two_blobs(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % 2) as u8;
        let c = if label == 0 { -2.0 } else { 2.0 };
        for _ in 0..2 {
            data.push(c + 0.5 * rng.sample::<f32, _>(StandardNormal));
        }
        labels.push(label);
    }
    Dataset::new(Tensor::new(&[n, 2], data).expect("shape"), labels, 2).expect("labels")
}

/// Ten-class `1×28×28` images: each class is a fixed random template made
/// of a few bright strokes, and samples add pixel noise and a random shift
/// of up to two pixels. Templates depend only on `template_seed`, so train
/// and test sets drawn with different `seed`s share them.
pub fn synthetic_digits(n: usize, template_seed: u64, seed: u64) -> Dataset {
    const SIDE: usize = 28;
    let mut trng = ChaCha8Rng::seed_from_u64(template_seed);
    let templates: Vec<Vec<f32>> = (0..10)
        .map(|_| {
            let mut t = vec![0.0f32; SIDE * SIDE];
            for _ in 0..4 {
                let (r0, c0) = (trng.random_range(6..22), trng.random_range(6..22));
                let (dr, dc) = (trng.random_range(-1i32..=1), trng.random_range(-1i32..=1));
                let (mut r, mut c) = (r0 as i32, c0 as i32);
                for _ in 0..8 {
                    if (0..SIDE as i32).contains(&r) && (0..SIDE as i32).contains(&c) {
                        t[r as usize * SIDE + c as usize] = 1.0;
                    }
                    r += dr;
                    c += if dr == 0 && dc == 0 { 1 } else { dc };
                }
            }
            t
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * SIDE * SIDE);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % 10) as u8;
        let (sy, sx) = (rng.random_range(-2i32..=2), rng.random_range(-2i32..=2));
        let t = &templates[label as usize];
        for r in 0..SIDE as i32 {
            for c in 0..SIDE as i32 {
                let (tr, tc) = (r - sy, c - sx);
                let base = if (0..SIDE as i32).contains(&tr) && (0..SIDE as i32).contains(&tc) {
                    t[tr as usize * SIDE + tc as usize]
                } else {
                    0.0
                };
                let p = (base + 0.3 * rng.sample::<f32, _>(StandardNormal)).clamp(0.0, 1.0);
                data.push((p - MNIST_MEAN) / MNIST_STD);
            }
        }
        labels.push(label);
    }
    Dataset::new(Tensor::new(&[n, 1, SIDE, SIDE], data).expect("shape"), labels, 10).expect("labels")
}
