//! Grayscale image ingestion, patch tiling and patient-level splits.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use crate::data::{ImageDataset, Split};
use crate::error::{Error, Result};

/// Luma of an 8-bit RGB pixel, scaled to `[0, 1]`.
pub fn rgb_to_gray(r: u8, g: u8, b: u8) -> f64 {
    (0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b)) / 255.0
}

/// Row-major grayscale image with pixels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::LengthMismatch {
                what: "image pixels",
                expected: width * height,
                got: pixels.len(),
            });
        }
        Ok(GrayImage { width, height, pixels })
    }
}

/// Decodes a PNG or PGM file. Colour images go through [`rgb_to_gray`];
/// alpha is ignored.
pub fn load_gray_image(path: &Path) -> Result<GrayImage> {
    let img = image::open(path)?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    let pixels = if img.color().has_color() {
        img.to_rgb8().pixels().map(|p| rgb_to_gray(p[0], p[1], p[2])).collect()
    } else {
        img.to_luma8().pixels().map(|p| f64::from(p[0]) / 255.0).collect()
    };
    GrayImage::new(width, height, pixels)
}

/// Non-overlapping `patch x patch` tiles from the top-left corner in
/// row-major tile order; right and bottom remainders are dropped.
pub fn extract_patches(image: &GrayImage, patch: usize) -> Result<Vec<Vec<f64>>> {
    if patch == 0 || image.width < patch || image.height < patch {
        return Err(Error::ImageTooSmall {
            width: image.width,
            height: image.height,
            patch,
        });
    }
    let mut out = Vec::with_capacity((image.height / patch) * (image.width / patch));
    for ty in 0..image.height / patch {
        for tx in 0..image.width / patch {
            let mut tile = Vec::with_capacity(patch * patch);
            for row in ty * patch..(ty + 1) * patch {
                let start = row * image.width + tx * patch;
                tile.extend_from_slice(&image.pixels[start..start + patch]);
            }
            out.push(tile);
        }
    }
    Ok(out)
}

/// Patient id of a file named `<patientid>_<index>.<ext>`.
fn patient_of(path: &Path) -> Option<String> {
    let stem = path.file_stem()?.to_str()?;
    let (id, index) = stem.rsplit_once('_')?;
    (!id.is_empty() && index.chars().all(|c| c.is_ascii_digit()) && !index.is_empty()).then(|| id.to_string())
}

/// All patches of every `.png`/`.pgm` file in `dir`, tagged with the
/// patient id from the file name. Files are visited in name order.
pub fn ingest_patch_dir(dir: &Path, patch: usize) -> Result<Vec<(String, Vec<f64>)>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("png" | "pgm")) {
            let id = patient_of(&path)
                .ok_or_else(|| Error::Invalid(format!("{} is not named <patientid>_<index>.<ext>", path.display())))?;
            files.push((path, id));
        }
    }
    files.sort();
    let mut out = Vec::new();
    for (path, id) in files {
        for p in extract_patches(&load_gray_image(&path)?, patch)? {
            out.push((id.clone(), p));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatientSplits {
    pub train: ImageDataset,
    pub validation: ImageDataset,
    pub test: ImageDataset,
}

impl PatientSplits {
    pub fn patients(&self, split: Split) -> BTreeSet<String> {
        let ds = match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        };
        ds.patient_ids.iter().flatten().cloned().collect()
    }
}

/// Routes every patch to the split of its patient. Membership depends only
/// on the ids; within a split the input order is kept.
pub fn split_by_patient(patches: &[(String, Vec<f64>)], assignment: &BTreeMap<String, Split>) -> Result<PatientSplits> {
    let mut parts: BTreeMap<Split, (Vec<f64>, Vec<String>)> = BTreeMap::new();
    let mut dim = None;
    for (id, pixels) in patches {
        let split = *assignment.get(id).ok_or_else(|| Error::UnassignedPatient(id.clone()))?;
        match dim {
            None => dim = Some(pixels.len()),
            Some(d) if d != pixels.len() => {
                return Err(Error::LengthMismatch {
                    what: "patch",
                    expected: d,
                    got: pixels.len(),
                })
            }
            _ => {}
        }
        let entry = parts.entry(split).or_default();
        entry.0.extend_from_slice(pixels);
        entry.1.push(id.clone());
    }
    let dim = dim.unwrap_or(super::PIXELS);
    let mut build = |split: Split| -> Result<ImageDataset> {
        let (pixels, ids) = parts.remove(&split).ok_or(Error::EmptySplit(split.as_str()))?;
        ImageDataset::new(pixels, dim, split)?.with_patient_ids(ids)
    };
    Ok(PatientSplits {
        train: build(Split::Train)?,
        validation: build(Split::Validation)?,
        test: build(Split::Test)?,
    })
}
