//! Flat binary cache for a prepared split.
//!
//! Layout (integers and reals little-endian):
//!
//! ```text
//! "HHFD" | version u32 | count u32 | dim u32 | count*dim f64
//! flags u32 | split u8
//! [flags & 1] count label bytes
//! [flags & 2] count x (len u32, utf-8 patient id)
//! ```

use std::io::{Read, Write};

use crate::data::{ImageDataset, Split};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"HHFD";
pub const VERSION: u32 = 1;

const HAS_LABELS: u32 = 1;
const HAS_PATIENTS: u32 = 2;

pub fn write_cache(ds: &ImageDataset, w: &mut impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    for v in [VERSION, ds.len() as u32, ds.dim() as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    for p in ds.pixels() {
        w.write_all(&p.to_le_bytes())?;
    }
    let flags = if ds.labels.is_some() { HAS_LABELS } else { 0 } | if ds.patient_ids.is_some() { HAS_PATIENTS } else { 0 };
    w.write_all(&flags.to_le_bytes())?;
    w.write_all(&[ds.split.tag()])?;
    if let Some(labels) = &ds.labels {
        w.write_all(labels)?;
    }
    if let Some(ids) = &ds.patient_ids {
        for id in ids {
            w.write_all(&(id.len() as u32).to_le_bytes())?;
            w.write_all(id.as_bytes())?;
        }
    }
    Ok(())
}

fn read_exact(r: &mut impl Read, n: usize) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.take(n as u64).read_to_end(&mut buf)?;
    if buf.len() != n {
        return Err(Error::Truncated {
            what: "dataset cache",
            expected: n,
            found: buf.len(),
        });
    }
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let b = read_exact(r, 4)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

pub fn read_cache(r: &mut impl Read) -> Result<ImageDataset> {
    let magic = read_exact(r, 4)?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            what: "dataset cache",
            expected: u32::from_be_bytes(*MAGIC),
            found: u32::from_be_bytes([magic[0], magic[1], magic[2], magic[3]]),
        });
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Version {
            expected: VERSION,
            found: version,
        });
    }
    let count = read_u32(r)? as usize;
    let dim = read_u32(r)? as usize;
    let raw = read_exact(r, count * dim * 8)?;
    let pixels = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let flags = read_u32(r)?;
    let tag = read_exact(r, 1)?[0];
    let split = Split::from_tag(tag).ok_or_else(|| Error::Invalid(format!("unknown split tag {tag}")))?;
    let mut ds = ImageDataset::new(pixels, dim, split)?;
    if flags & HAS_LABELS != 0 {
        ds = ds.with_labels(read_exact(r, count)?)?;
    }
    if flags & HAS_PATIENTS != 0 {
        let mut ids = Vec::with_capacity(count);
        for _ in 0..count {
            let len = read_u32(r)? as usize;
            let bytes = read_exact(r, len)?;
            ids.push(String::from_utf8(bytes).map_err(|e| Error::Invalid(format!("patient id is not utf-8: {e}")))?);
        }
        ds = ds.with_patient_ids(ids)?;
    }
    Ok(ds)
}
