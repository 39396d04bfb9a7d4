//! Labelled image datasets: the CIFAR-10 binary format and a deterministic
//! synthetic glyph set for desk-scale experiments.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use kerneltn_core::conv::Image;
use kerneltn_core::DenseTensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

pub const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;
pub const SYNTH_SIDE: usize = 16;
pub const SYNTH_NOISE: f64 = 0.1;
/// Fraction of a dataset kept for training by [`Dataset::split`]; the rest validates.
pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("file length {len} is not a multiple of {CIFAR_RECORD}")]
    BadRecordSize { len: usize },
    #[error("record {record} has label {label} > 9")]
    BadLabel { record: usize, label: u8 },
    #[error("invalid data spec '{0}' (expected synth:N,CLASSES,SEED or a path, optionally suffixed @train or @val)")]
    BadSpec(String),
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// First `TRAIN_FRACTION` of the samples, then the remainder.
    pub fn split(&self) -> (Dataset, Dataset) {
        let cut = (self.len() as f64 * TRAIN_FRACTION).round() as usize;
        (self.slice(0, cut), self.slice(cut, self.len()))
    }

    fn slice(&self, lo: usize, hi: usize) -> Dataset {
        Dataset { images: self.images[lo..hi].to_vec(), labels: self.labels[lo..hi].to_vec(), classes: self.classes }
    }

    /// Image shape `(C, H, W)` of the first sample.
    pub fn image_shape(&self) -> Option<(usize, usize, usize)> {
        self.images.first().map(Image::shape)
    }
}

/// Decodes CIFAR-10 binary records: one label byte, then 3×32×32 pixel
/// bytes in channel-major, row-major order. Pixels are scaled to [0, 1].
pub fn decode_cifar10(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(DataError::BadRecordSize { len: bytes.len() });
    }
    let mut images = Vec::with_capacity(bytes.len() / CIFAR_RECORD);
    let mut labels = Vec::with_capacity(images.capacity());
    for (record, chunk) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = chunk[0];
        if label > 9 {
            return Err(DataError::BadLabel { record, label });
        }
        let pixels = chunk[1..].iter().map(|&b| b as f64 / 255.0).collect();
        let t = DenseTensor::new(vec![3, 32, 32], pixels).expect("record size checked");
        images.push(Image::new(t).expect("rank 3"));
        labels.push(label as usize);
    }
    Ok(Dataset { images, labels, classes: 10 })
}

pub fn load_cifar10(path: impl AsRef<Path>) -> Result<Dataset> {
    decode_cifar10(&fs::read(path)?)
}

/// Noise-free 16×16 glyph for class `c`. The first eight classes are bars
/// (horizontal, vertical, both diagonals) and the four corner brackets;
/// later classes repeat the family with the stroke shifted, giving 24
/// distinct glyphs before the pattern cycles.
pub fn glyph(class: usize) -> Vec<f64> {
    let n = SYNTH_SIDE;
    let shift = 2 * (class / 8) % 6;
    let lo = 3 + shift;
    let hi = n - 4 - shift;
    let mid = n / 2 - 1 + shift / 2;
    let mut img = vec![0.0; n * n];
    let mut on = |r: usize, c: usize| img[r * n + c] = 1.0;
    match class % 8 {
        0 => (2..n - 2).for_each(|c| {
            on(mid, c);
            on(mid + 1, c)
        }),
        1 => (2..n - 2).for_each(|r| {
            on(r, mid);
            on(r, mid + 1)
        }),
        2 => (1..n - 1 - shift).for_each(|i| {
            on(i, i + shift);
            on(i, i + shift + 1)
        }),
        3 => (1..n - 1 - shift).for_each(|i| {
            on(i, n - 1 - i - shift);
            on(i, n - 2 - i - shift)
        }),
        corner => {
            let (row, col) = match corner {
                4 => (lo, lo),
                5 => (lo, hi),
                6 => (hi, lo),
                _ => (hi, hi),
            };
            (lo..=hi).for_each(|i| {
                on(row, i);
                on(i, col)
            })
        }
    }
    img
}

pub fn synth_dataset(n: usize, classes: usize, seed: u64) -> Result<Dataset> {
    synth_dataset_with_noise(n, classes, seed, SYNTH_NOISE)
}

/// `n` single-channel glyph images with balanced, shuffled labels and
/// Gaussian pixel noise of standard deviation `sigma`.
pub fn synth_dataset_with_noise(n: usize, classes: usize, seed: u64, sigma: f64) -> Result<Dataset> {
    if classes < 2 {
        return Err(DataError::TooFewClasses(classes));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);
    let glyphs: Vec<Vec<f64>> = (0..classes).map(glyph).collect();
    let noise = Normal::new(0.0, sigma).expect("sigma must be finite and nonnegative");
    let images = labels
        .iter()
        .map(|&l| {
            let px = glyphs[l].iter().map(|&v| if sigma > 0.0 { v + noise.sample(&mut rng) } else { v }).collect();
            Image::new(DenseTensor::new(vec![1, SYNTH_SIDE, SYNTH_SIDE], px).unwrap()).unwrap()
        })
        .collect();
    Ok(Dataset { images, labels, classes })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    All,
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Synth { n: usize, classes: usize, seed: u64 },
    Cifar(String),
}

/// Command-line data selector: `synth:N,CLASSES,SEED` or a CIFAR-10 binary
/// file path, optionally followed by `@train` or `@val` to take one side of
/// [`Dataset::split`].
#[derive(Debug, Clone, PartialEq)]
pub struct DataSpec {
    pub source: Source,
    pub part: Part,
}

impl FromStr for DataSpec {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || DataError::BadSpec(s.to_string());
        let (body, part) = match s.rsplit_once('@') {
            Some((b, "train")) => (b, Part::Train),
            Some((b, "val")) => (b, Part::Val),
            Some(_) => return Err(bad()),
            None => (s, Part::All),
        };
        let source = match body.strip_prefix("synth:") {
            Some(args) => {
                let v: Vec<&str> = args.split(',').collect();
                let [n, c, seed] = v.as_slice() else { return Err(bad()) };
                Source::Synth {
                    n: n.trim().parse().map_err(|_| bad())?,
                    classes: c.trim().parse().map_err(|_| bad())?,
                    seed: seed.trim().parse().map_err(|_| bad())?,
                }
            }
            None if !body.is_empty() => Source::Cifar(body.to_string()),
            None => return Err(bad()),
        };
        Ok(DataSpec { source, part })
    }
}

impl DataSpec {
    pub fn load(&self) -> Result<Dataset> {
        let full = match &self.source {
            Source::Synth { n, classes, seed } => synth_dataset(*n, *classes, *seed)?,
            Source::Cifar(path) => load_cifar10(path)?,
        };
        Ok(match self.part {
            Part::All => full,
            Part::Train => full.split().0,
            Part::Val => full.split().1,
        })
    }
}
