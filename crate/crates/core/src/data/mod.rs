//! Datasets: MNIST IDX ingestion with dynamic binarization, grayscale patch
//! corpora split by patient, and a binary cache for prepared datasets.

pub mod cache;
pub mod idx;
pub mod images;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Shape, TensorValue};

pub use cache::{read_cache, write_cache};
pub use images::{extract_patches, ingest_patch_dir, load_gray_image, rgb_to_gray, split_by_patient, GrayImage, PatientSplits};

/// Pixels per MNIST image and per histopathology patch.
pub const PIXELS: usize = 784;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub(crate) fn tag(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Split> {
        [Split::Train, Split::Validation, Split::Test].get(tag as usize).copied()
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "valid" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Invalid(format!("unknown split `{other}`"))),
        }
    }
}

/// Items of one split, stored row-major as `len x dim` pixels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageDataset {
    pixels: Vec<f64>,
    dim: usize,
    pub labels: Option<Vec<u8>>,
    pub patient_ids: Option<Vec<String>>,
    pub split: Split,
}

impl ImageDataset {
    /// Checks the pixel range, the item count and metadata lengths.
    pub fn new(pixels: Vec<f64>, dim: usize, split: Split) -> Result<Self> {
        if dim == 0 || !pixels.len().is_multiple_of(dim) {
            return Err(Error::InvalidShape(format!("{} pixels do not form items of {dim}", pixels.len())));
        }
        if pixels.is_empty() {
            return Err(Error::EmptySplit(split.as_str()));
        }
        if let Some((index, &value)) = pixels.iter().enumerate().find(|(_, p)| !(0.0..=1.0).contains(*p)) {
            return Err(Error::OutOfRange {
                what: "pixel",
                index,
                value,
                range: "[0, 1]",
            });
        }
        Ok(ImageDataset {
            pixels,
            dim,
            labels: None,
            patient_ids: None,
            split,
        })
    }

    pub fn with_labels(mut self, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::CountMismatch {
                images: self.len(),
                labels: labels.len(),
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_patient_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.len() {
            return Err(Error::LengthMismatch {
                what: "patient ids",
                expected: self.len(),
                got: ids.len(),
            });
        }
        self.patient_ids = Some(ids);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.pixels.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn item(&self, i: usize) -> &[f64] {
        &self.pixels[i * self.dim..(i + 1) * self.dim]
    }

    /// Items at `indices`, in that order, as a `len x dim` matrix.
    pub fn batch(&self, indices: &[usize]) -> Result<TensorValue> {
        if indices.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.item(i));
        }
        TensorValue::new(Shape::new(vec![indices.len(), self.dim])?, data)
    }

    /// New dataset of the items at `indices` (metadata carried along).
    pub fn select(&self, indices: &[usize], split: Split) -> Result<Self> {
        let mut pixels = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            pixels.extend_from_slice(self.item(i));
        }
        let mut out = ImageDataset::new(pixels, self.dim, split)?;
        out.labels = self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect());
        out.patient_ids = self.patient_ids.as_ref().map(|p| indices.iter().map(|&i| p[i].clone()).collect());
        Ok(out)
    }
}

/// Binary draws alongside the intensities they were drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct BinarizedBatch {
    pub originals: TensorValue,
    pub samples: TensorValue,
}

/// Independent `Bernoulli(pixel)` draw for every pixel.
pub fn dynamic_binarize(batch: &TensorValue, rng: &mut impl Rng) -> Result<BinarizedBatch> {
    let mut samples = Vec::with_capacity(batch.len());
    for (index, &p) in batch.data().iter().enumerate() {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::OutOfRange {
                what: "pixel",
                index,
                value: p,
                range: "[0, 1]",
            });
        }
        // `gen` is in [0, 1), so p = 0 never fires and p = 1 always does.
        samples.push(if rng.gen::<f64>() < p { 1.0 } else { 0.0 });
    }
    Ok(BinarizedBatch {
        originals: batch.clone(),
        samples: TensorValue::new(batch.shape().clone(), samples)?,
    })
}

/// Reads an IDX image file and its label file, scaling bytes by 1/255.
pub fn load_mnist_idx(images: &Path, labels: &Path, split: Split) -> Result<ImageDataset> {
    let imgs = idx::parse_images(&idx::read_maybe_gz(images)?)?;
    let labs = idx::parse_labels(&idx::read_maybe_gz(labels)?)?;
    if imgs.count != labs.len() {
        return Err(Error::CountMismatch {
            images: imgs.count,
            labels: labs.len(),
        });
    }
    let pixels = imgs.pixels.iter().map(|&b| f64::from(b) / 255.0).collect();
    ImageDataset::new(pixels, imgs.rows * imgs.cols, split)?.with_labels(labs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataSplits {
    pub train: ImageDataset,
    pub validation: ImageDataset,
    pub test: ImageDataset,
}

/// Shuffles the training file with `rng` and carves the last
/// `validation_size` items into validation. `train_limit` keeps only the
/// first items of what remains, for reduced-size runs.
pub fn split_train_validation(
    full_train: &ImageDataset,
    test: ImageDataset,
    validation_size: usize,
    train_limit: Option<usize>,
    rng: &mut impl Rng,
) -> Result<DataSplits> {
    let n = full_train.len();
    if validation_size >= n {
        return Err(Error::EmptySplit("train"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let (train_idx, val_idx) = order.split_at(n - validation_size);
    let train_idx = match train_limit {
        Some(limit) => &train_idx[..limit.min(train_idx.len())],
        None => train_idx,
    };
    Ok(DataSplits {
        train: full_train.select(train_idx, Split::Train)?,
        validation: full_train.select(val_idx, Split::Validation)?,
        test: ImageDataset { split: Split::Test, ..test },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy(n: usize, split: Split) -> ImageDataset {
        let pixels = (0..n * 4).map(|i| (i % 5) as f64 / 4.0).collect();
        ImageDataset::new(pixels, 4, split).unwrap().with_labels((0..n as u8).collect()).unwrap()
    }

    #[test]
    fn dataset_validation() {
        assert!(matches!(ImageDataset::new(vec![], 4, Split::Test), Err(Error::EmptySplit("test"))));
        assert!(matches!(
            ImageDataset::new(vec![0.0, 1.2, 0.5, 0.5], 4, Split::Train),
            Err(Error::OutOfRange { index: 1, .. })
        ));
        assert!(ImageDataset::new(vec![0.0; 5], 4, Split::Train).is_err());
        assert!(toy(3, Split::Train).with_labels(vec![1]).is_err());
    }

    #[test]
    fn binarize_extremes_and_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = TensorValue::from_slice(&[0.0, 1.0]);
        for _ in 0..1000 {
            let b = dynamic_binarize(&t, &mut rng).unwrap();
            assert_eq!(b.samples.data(), &[0.0, 1.0]);
        }
        let n = 100_000;
        let half = TensorValue::filled(Shape::vector(n), 0.5);
        let b = dynamic_binarize(&half, &mut rng).unwrap();
        let mean = b.samples.data().iter().sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.005, "{mean}");
        assert!(b.samples.data().iter().all(|&s| s == 0.0 || s == 1.0));
        assert_eq!(b.originals, half);
        assert!(dynamic_binarize(&TensorValue::from_slice(&[-0.1]), &mut rng).is_err());
    }

    #[test]
    fn binarize_redraws() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = TensorValue::filled(Shape::vector(PIXELS), 0.3);
        let a = dynamic_binarize(&img, &mut rng).unwrap();
        let b = dynamic_binarize(&img, &mut rng).unwrap();
        assert_ne!(a.samples, b.samples);
    }

    #[test]
    fn validation_is_carved_from_shuffled_train() {
        let full = toy(10, Split::Train);
        let test = toy(2, Split::Test);
        let s = split_train_validation(&full, test, 3, None, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (7, 3, 2));
        let mut seen: Vec<u8> = s.train.labels.clone().unwrap();
        seen.extend(s.validation.labels.clone().unwrap());
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<u8>>());
        let again = split_train_validation(&full, toy(2, Split::Test), 3, Some(4), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(again.validation, s.validation);
        assert_eq!(again.train.labels.unwrap(), s.train.labels.unwrap()[..4].to_vec());
    }
}
